#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "w2t/feature_extractor.hpp"
#include "w2t/model.hpp"
#include "w2t/slide_tiler.hpp"
#include "w2t/text.hpp"

namespace w2t {

// Next-token logits given the answer generated so far.
using NextTokenFn = std::function<std::vector<double>(std::span<const TokenId> answer_so_far)>;

struct BeamHypothesis {
  std::vector<TokenId> tokens;  // generated ids, EOS included when finished
  double log_prob = 0.0;        // sum of per-step log-softmax values
  bool finished = false;        // last token is EOS
};

struct Generation {
  std::vector<TokenId> tokens;  // answer ids without EOS
  double log_prob = 0.0;
  bool truncated = false;  // max_len reached before EOS
};

// Stable log-softmax over the full vocabulary.
std::vector<double> log_softmax(std::span<const double> logits);

// Argmax over tokens other than PAD/BOS, ties to the smallest id.
Generation greedy_search(const NextTokenFn& next, std::size_t max_len);

struct BeamTrace {
  // Hypotheses kept after each expansion step (before retiring finished ones).
  std::vector<std::vector<BeamHypothesis>> kept;
};

// Length-unnormalized beam search. Finished hypotheses retire to a pool of
// at most beam_width; search stops once the pool is full and the best live
// score cannot beat its worst entry, or at max_len. Ranking is by score,
// then lexicographic token ids.
std::vector<Generation> beam_search(const NextTokenFn& next, std::size_t beam_width, std::size_t max_len,
                                    BeamTrace* trace = nullptr);

struct Answer {
  Generation generation;
  std::string text;
  std::vector<AttentionRecord> records;  // co-attention over [question | BOS | answer]
};

// Memory is encoded once per call; parameters are only read.
Answer generate_greedy(const EmbeddingBag& bag, std::span<const TokenId> question, const W2TParams<float>& params,
                       const Vocab& vocab, std::size_t max_len);

std::vector<Answer> generate_beam(const EmbeddingBag& bag, std::span<const TokenId> question,
                                  const W2TParams<float>& params, const Vocab& vocab, std::size_t beam_width,
                                  std::size_t max_len);

struct AttentionPolicy {
  // Unset layer/head: mean over heads of the last decoder layer.
  std::optional<std::size_t> layer;
  std::optional<std::size_t> head;

  std::string describe() const;
  static AttentionPolicy parse(const std::string& text);  // "last-layer-mean" | "layer-<l>-head-<h>"
};

struct Heatmap {
  std::string slide_id;
  std::vector<double> weights;  // one per bag patch, sums to 1
  std::vector<GridCoord> coords;
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::string normalization = "sum-to-one";
  std::string policy;
  std::size_t token_index = 0;  // n: keyword position in the question

  nlohmann::json to_json() const;
  static Heatmap from_json(const nlohmann::json& j);
};

Heatmap keyword_attention(const std::vector<AttentionRecord>& records, std::span<const TokenId> question,
                          const std::string& keyword, const Vocab& vocab, const EmbeddingBag& bag,
                          const AttentionPolicy& policy = {});

// Blue-to-red ramp for t in [0,1].
std::array<std::uint8_t, 3> heat_color(double t);

struct HeatmapRaster {
  SlideImage overlay;
  std::vector<double> display_weights;  // min-max normalized
  nlohmann::json weights_json;
};

HeatmapRaster render_heatmap(const Heatmap& hm, const TileSet& tiles, const SlideImage& img, double alpha = 0.4);

}  // namespace w2t
