#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "w2t/autodiff.hpp"
#include "w2t/dataset.hpp"
#include "w2t/feature_extractor.hpp"
#include "w2t/inference.hpp"
#include "w2t/metrics.hpp"
#include "w2t/model.hpp"
#include "w2t/slide_tiler.hpp"
#include "w2t/trainer.hpp"

namespace w2t::testing {

std::filesystem::path data_dir();
std::filesystem::path fixture_dir();
std::filesystem::path cli_path();

// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

// ---------------------------------------------------------------------------
// Gradient checking

struct GradReport {
  double max_rel_err = 0.0;
  std::size_t entries = 0;
  std::string worst;  // "input[i][j]" of the worst entry
};

// loss(inputs) must build a scalar from the given leaves. Relative error per
// entry is |a - n| / max(|a|, |n|, floor); n is a central difference in
// double precision. The float variant differentiates the same function in
// float and compares against the double oracle.
using LossFn64 = std::function<ad::Tensor<double>(const std::vector<ad::Tensor<double>>&)>;
using LossFn32 = std::function<ad::Tensor<float>(const std::vector<ad::Tensor<float>>&)>;

struct Shape {
  std::size_t rows, cols;
};

// Entries uniform in [-scale, scale].
std::vector<std::vector<float>> random_inputs(const std::vector<Shape>& shapes, std::uint64_t seed, double scale = 1.0);

GradReport gradcheck64(const LossFn64& f, const std::vector<Shape>& shapes, const std::vector<std::vector<float>>& x,
                       double h = 1e-6, double floor = 1e-6);
GradReport gradcheck32(const LossFn32& f32, const LossFn64& f64, const std::vector<Shape>& shapes,
                       const std::vector<std::vector<float>>& x, double h = 1e-4, double floor = 1e-3);

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  LossFn64 f64;
  LossFn32 f32;
};
// One case per differentiable op, each reduced to a scalar through a fixed
// random weighting so every output entry carries gradient.
std::vector<OpCase> op_cases();

// Full-model gradient check on a micro configuration.
struct ModelGradReport {
  GradReport r64;
  GradReport r32;
  std::size_t params = 0;
};
W2TConfig micro_config(std::size_t vocab_size = 12, std::size_t bag_dim = 8);
EmbeddingBag random_bag(const std::string& id, std::size_t m, std::size_t width, std::uint64_t seed);
ModelGradReport model_gradcheck(const W2TConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Bundled synthetic corpus

struct Corpus {
  std::vector<SlideImage> slides;
  std::map<std::string, TileSet> tiles;
  BagStore bags;
  std::vector<QaTemplate> templates;
  BuildResult build;
  Vocab vocab;
  EntityLexicon lexicon;
};

inline constexpr int kCorpusPatch = 64;
inline constexpr std::size_t kCorpusDim = 512;
inline constexpr std::uint64_t kCorpusSeed = 7;

Corpus load_corpus();

// ---------------------------------------------------------------------------
// Beam search oracles

// Deterministic pseudo-random logits keyed by the prefix.
NextTokenFn random_lm(std::size_t vocab, std::uint64_t seed, double temperature = 1.0);

struct ExhaustiveBest {
  std::vector<TokenId> tokens;  // EOS included when finished
  double log_prob = -1e300;
  bool finished = false;
};
// Best hypothesis over every finished sequence of length <= max_len and
// every unfinished sequence of length exactly max_len.
ExhaustiveBest exhaustive_search(const NextTokenFn& next, std::size_t vocab, std::size_t max_len);

// True when each prefix of `tokens` appears among the kept hypotheses of the
// corresponding beam step.
bool prefix_survives(const BeamTrace& trace, const std::vector<TokenId>& tokens);

// Every attention matrix must be row-stochastic within tol; returns the worst deviation.
double max_row_sum_error(const std::vector<AttentionRecord>& records);

}  // namespace w2t::testing
