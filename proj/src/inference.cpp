#include "w2t/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <regex>

#include "w2t/error.hpp"

namespace w2t {

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double se = 0.0;
  for (double z : logits) se += std::exp(z - mx);
  const double lse = mx + std::log(se);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

namespace {

bool emittable(TokenId id) { return id != kPad && id != kBos; }

// Score descending, then lexicographically smaller token sequence first.
bool better(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

Generation to_generation(const BeamHypothesis& h) {
  Generation g;
  g.tokens = h.tokens;
  if (h.finished) g.tokens.pop_back();
  g.log_prob = h.log_prob;
  g.truncated = !h.finished;
  return g;
}

}  // namespace

Generation greedy_search(const NextTokenFn& next, std::size_t max_len) {
  Generation g;
  std::vector<TokenId> tokens;
  bool finished = false;
  for (std::size_t t = 0; t < max_len; ++t) {
    const auto logits = next(tokens);
    const auto lp = log_softmax(logits);
    TokenId best = -1;
    for (std::size_t id = 0; id < lp.size(); ++id) {
      const auto tok = static_cast<TokenId>(id);
      if (!emittable(tok)) continue;
      if (best < 0 || lp[id] > lp[static_cast<std::size_t>(best)]) best = tok;
    }
    g.log_prob += lp[static_cast<std::size_t>(best)];
    if (best == kEos) {
      finished = true;
      break;
    }
    tokens.push_back(best);
  }
  g.tokens = std::move(tokens);
  g.truncated = !finished;
  return g;
}

std::vector<Generation> beam_search(const NextTokenFn& next, std::size_t beam_width, std::size_t max_len,
                                    BeamTrace* trace) {
  if (beam_width == 0) throw Error(ErrorCode::kInvalidArgument, "beam width must be >= 1");
  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  std::vector<BeamHypothesis> pool;
  bool hit_max_len = true;
  for (std::size_t t = 0; t < max_len; ++t) {
    std::vector<BeamHypothesis> candidates;
    for (const auto& h : live) {
      const auto lp = log_softmax(next(h.tokens));
      for (std::size_t id = 0; id < lp.size(); ++id) {
        const auto tok = static_cast<TokenId>(id);
        if (!emittable(tok)) continue;
        BeamHypothesis c{h.tokens, h.log_prob + lp[id], tok == kEos};
        c.tokens.push_back(tok);
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      better);
    candidates.resize(keep);
    if (trace) trace->kept.push_back(candidates);

    live.clear();
    for (auto& c : candidates) (c.finished ? pool : live).push_back(std::move(c));
    std::sort(pool.begin(), pool.end(), better);
    if (pool.size() > beam_width) pool.resize(beam_width);

    if (live.empty()) {
      hit_max_len = false;
      break;
    }
    if (pool.size() >= beam_width && live.front().log_prob <= pool.back().log_prob) {
      hit_max_len = false;
      break;
    }
  }
  std::vector<BeamHypothesis> all = pool;
  if (hit_max_len) all.insert(all.end(), live.begin(), live.end());
  std::sort(all.begin(), all.end(), better);
  if (all.size() > beam_width) all.resize(beam_width);
  std::vector<Generation> out;
  for (const auto& h : all) out.push_back(to_generation(h));
  return out;
}

namespace {

NextTokenFn model_step(const ad::Tensor<float>& memory, std::span<const TokenId> question,
                       const W2TParams<float>& params) {
  std::vector<TokenId> prefix(question.begin(), question.end());
  prefix.push_back(kBos);
  return [&memory, &params, prefix](std::span<const TokenId> answer) {
    std::vector<TokenId> input = prefix;
    input.insert(input.end(), answer.begin(), answer.end());
    const auto step = decode_step<float>(memory, input, params, false);
    return std::vector<double>(step.logits.begin(), step.logits.end());
  };
}

std::vector<AttentionRecord> final_records(const ad::Tensor<float>& memory, std::span<const TokenId> question,
                                           std::span<const TokenId> answer, const W2TParams<float>& params) {
  std::vector<TokenId> input(question.begin(), question.end());
  input.push_back(kBos);
  input.insert(input.end(), answer.begin(), answer.end());
  if (input.size() > params.config.max_text()) input.resize(params.config.max_text());
  return decode_step<float>(memory, input, params, true).records;
}

void check_question(std::span<const TokenId> question, const W2TConfig& c) {
  if (question.size() > c.max_question)
    throw Error(ErrorCode::kPrefixTooLong, "question of " + std::to_string(question.size()) + " tokens exceeds " +
                                               std::to_string(c.max_question));
}

// Room left for generated tokens within the positional table.
std::size_t clamp_len(std::size_t max_len, std::span<const TokenId> question, const W2TConfig& c) {
  return std::min(max_len, c.max_text() - question.size());
}

}  // namespace

Answer generate_greedy(const EmbeddingBag& bag, std::span<const TokenId> question, const W2TParams<float>& params,
                       const Vocab& vocab, std::size_t max_len) {
  check_question(question, params.config);
  ad::NoGradGuard no_grad;
  const auto memory = encode_bag<float>(bag, params);
  Answer a;
  a.generation = greedy_search(model_step(memory, question, params), clamp_len(max_len, question, params.config));
  a.text = decode(a.generation.tokens, vocab);
  a.records = final_records(memory, question, a.generation.tokens, params);
  return a;
}

std::vector<Answer> generate_beam(const EmbeddingBag& bag, std::span<const TokenId> question,
                                  const W2TParams<float>& params, const Vocab& vocab, std::size_t beam_width,
                                  std::size_t max_len) {
  check_question(question, params.config);
  ad::NoGradGuard no_grad;
  const auto memory = encode_bag<float>(bag, params);
  const auto gens =
      beam_search(model_step(memory, question, params), beam_width, clamp_len(max_len, question, params.config));
  std::vector<Answer> out;
  for (const auto& g : gens) {
    Answer a;
    a.generation = g;
    a.text = decode(g.tokens, vocab);
    if (out.empty()) a.records = final_records(memory, question, g.tokens, params);
    out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Keyword heatmaps

std::string AttentionPolicy::describe() const {
  if (!layer && !head) return "last-layer-mean";
  return "layer-" + (layer ? std::to_string(*layer) : std::string("last")) + "-head-" +
         (head ? std::to_string(*head) : std::string("mean"));
}

AttentionPolicy AttentionPolicy::parse(const std::string& text) {
  if (text.empty() || text == "last-layer-mean") return {};
  static const std::regex re(R"(^layer-(\d+|last)-head-(\d+|mean)$)");
  std::smatch m;
  if (!std::regex_match(text, m, re))
    throw Error(ErrorCode::kInvalidArgument, "attention policy must be last-layer-mean or layer-<l>-head-<h>");
  AttentionPolicy p;
  if (m[1] != "last") p.layer = std::stoul(m[1].str());
  if (m[2] != "mean") p.head = std::stoul(m[2].str());
  return p;
}

nlohmann::json Heatmap::to_json() const {
  nlohmann::json coords_json = nlohmann::json::array();
  for (const auto& c : coords) coords_json.push_back({c.row, c.col});
  return {{"slide_id", slide_id},
          {"weights", weights},
          {"grid", {{"rows", grid_rows}, {"cols", grid_cols}}},
          {"coords", coords_json},
          {"normalization", normalization},
          {"policy", policy},
          {"token_index", token_index}};
}

Heatmap Heatmap::from_json(const nlohmann::json& j) {
  try {
    Heatmap h;
    h.slide_id = j.at("slide_id").get<std::string>();
    h.weights = j.at("weights").get<std::vector<double>>();
    h.grid_rows = j.at("grid").at("rows").get<std::size_t>();
    h.grid_cols = j.at("grid").at("cols").get<std::size_t>();
    for (const auto& c : j.at("coords")) h.coords.push_back({c.at(0).get<std::uint32_t>(), c.at(1).get<std::uint32_t>()});
    h.normalization = j.value("normalization", h.normalization);
    h.policy = j.value("policy", std::string());
    h.token_index = j.value("token_index", std::size_t{0});
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("heatmap: ") + e.what());
  }
}

Heatmap keyword_attention(const std::vector<AttentionRecord>& records, std::span<const TokenId> question,
                          const std::string& keyword, const Vocab& vocab, const EmbeddingBag& bag,
                          const AttentionPolicy& policy) {
  const auto toks = tokenize(keyword);
  if (toks.size() != 1)
    throw Error(ErrorCode::kKeywordMultiToken, "keyword '" + keyword + "' is " + std::to_string(toks.size()) + " tokens");
  const TokenId id = vocab.id(toks[0]);
  const auto pos = std::find(question.begin(), question.end(), id);
  if (id == kUnk || pos == question.end())
    throw Error(ErrorCode::kKeywordNotFound, "'" + toks[0] + "' does not occur in the question");
  const auto n = static_cast<std::size_t>(pos - question.begin());

  std::size_t last_layer = 0;
  for (const auto& r : records) {
    if (r.kind == AttentionKind::kCoAttention) last_layer = std::max(last_layer, r.layer);
  }
  const std::size_t layer = policy.layer.value_or(last_layer);
  std::vector<double> w(bag.size, 0.0);
  std::size_t used = 0;
  for (const auto& r : records) {
    if (r.kind != AttentionKind::kCoAttention || r.layer != layer) continue;
    if (policy.head && r.head != *policy.head) continue;
    if (r.cols != bag.size || n >= r.rows)
      throw Error(ErrorCode::kAlignmentMismatch, "attention record does not match bag/question");
    for (std::size_t j = 0; j < r.cols; ++j) w[j] += r.at(n, j);
    ++used;
  }
  if (used == 0) throw Error(ErrorCode::kInvalidArgument, "no attention record matches policy " + policy.describe());
  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;

  Heatmap hm;
  hm.slide_id = bag.slide_id;
  hm.weights = std::move(w);
  hm.coords = bag.coords;
  for (const auto& c : bag.coords) {
    hm.grid_rows = std::max<std::size_t>(hm.grid_rows, c.row + 1);
    hm.grid_cols = std::max<std::size_t>(hm.grid_cols, c.col + 1);
  }
  hm.policy = policy.describe();
  hm.token_index = n;
  return hm;
}

std::array<std::uint8_t, 3> heat_color(double t) {
  // blue -> cyan -> green -> yellow -> red
  static constexpr double stops[5][3] = {{0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
  t = std::clamp(t, 0.0, 1.0);
  const double x = t * 4.0;
  const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(x));
  const double f = x - static_cast<double>(i);
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k)
    c[static_cast<std::size_t>(k)] =
        static_cast<std::uint8_t>(std::lround(stops[i][k] + f * (stops[i + 1][k] - stops[i][k])));
  return c;
}

HeatmapRaster render_heatmap(const Heatmap& hm, const TileSet& tiles, const SlideImage& img, double alpha) {
  img.validate();
  if (hm.weights.size() != tiles.patches.size())
    throw Error(ErrorCode::kAlignmentMismatch, std::to_string(hm.weights.size()) + " weights for " +
                                                   std::to_string(tiles.patches.size()) + " patches");
  for (std::size_t i = 0; i < hm.coords.size() && i < tiles.patches.size(); ++i) {
    if (hm.coords[i].row != static_cast<std::uint32_t>(tiles.patches[i].row) ||
        hm.coords[i].col != static_cast<std::uint32_t>(tiles.patches[i].col))
      throw Error(ErrorCode::kAlignmentMismatch, "heatmap coords differ from tile order at patch " + std::to_string(i));
  }
  const int ps = tiles.patch_size_px;
  for (const auto& p : tiles.patches) {
    if (p.x0 < 0 || p.y0 < 0 || p.x0 + ps > img.width_px || p.y0 + ps > img.height_px)
      throw Error(ErrorCode::kAlignmentMismatch, "patch outside the image");
  }
  HeatmapRaster out;
  out.overlay = img;
  const auto [lo, hi] = std::minmax_element(hm.weights.begin(), hm.weights.end());
  const double range = hm.weights.empty() ? 0.0 : *hi - *lo;
  for (double w : hm.weights) out.display_weights.push_back(range > 0.0 ? (w - *lo) / range : 0.5);
  for (std::size_t i = 0; i < tiles.patches.size(); ++i) {
    const auto color = heat_color(out.display_weights[i]);
    const auto& p = tiles.patches[i];
    for (int y = p.y0; y < p.y0 + ps; ++y) {
      for (int x = p.x0; x < p.x0 + ps; ++x) {
        std::uint8_t* px = out.overlay.at(x, y);
        for (int k = 0; k < 3; ++k)
          px[k] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * px[k] + alpha * color[static_cast<std::size_t>(k)]));
      }
    }
  }
  out.weights_json = hm.to_json();
  out.weights_json["display_weights"] = out.display_weights;
  return out;
}

}  // namespace w2t
