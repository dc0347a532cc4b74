#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "w2t/error.hpp"
#include "w2t/random.hpp"
#include "w2t/synthetic.hpp"
#include "w2t/text.hpp"

namespace fs = std::filesystem;

namespace w2t::testing {

fs::path data_dir() { return W2T_DATA_DIR; }
fs::path fixture_dir() { return W2T_FIXTURE_DIR; }
fs::path cli_path() { return W2T_CLI_PATH; }

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("w2t-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<float>> random_inputs(const std::vector<Shape>& shapes, std::uint64_t seed, double scale) {
  Rng rng(seed);
  std::vector<std::vector<float>> out;
  for (const auto& s : shapes) {
    std::vector<float> v(s.rows * s.cols);
    for (auto& x : v) x = static_cast<float>(scale * (2.0 * rng.uniform() - 1.0));
    out.push_back(std::move(v));
  }
  return out;
}

namespace {

template <typename T>
std::vector<ad::Tensor<T>> make_leaves(const std::vector<Shape>& shapes, const std::vector<std::vector<float>>& x) {
  std::vector<ad::Tensor<T>> leaves;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    leaves.push_back(ad::Tensor<T>::from(shapes[i].rows, shapes[i].cols, std::vector<T>(x[i].begin(), x[i].end()), true));
  return leaves;
}

void record(GradReport& r, double analytic, double numeric, double floor, std::size_t i, std::size_t j) {
  const double err = std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
  ++r.entries;
  if (err >= r.max_rel_err) {
    r.max_rel_err = err;
    r.worst = "input[" + std::to_string(i) + "][" + std::to_string(j) + "]";
  }
}

// Central differences of f64 around x, one entry at a time.
std::vector<std::vector<double>> numeric_grads(const LossFn64& f, const std::vector<Shape>& shapes,
                                               const std::vector<std::vector<float>>& x, double h) {
  auto leaves = make_leaves<double>(shapes, x);
  std::vector<std::vector<double>> g(shapes.size());
  ad::NoGradGuard no_grad;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto d = leaves[i].mutable_data();
    g[i].resize(d.size());
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double orig = d[j];
      d[j] = orig + h;
      const double up = f(leaves).item();
      d[j] = orig - h;
      const double down = f(leaves).item();
      d[j] = orig;
      g[i][j] = (up - down) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace

GradReport gradcheck64(const LossFn64& f, const std::vector<Shape>& shapes, const std::vector<std::vector<float>>& x,
                       double h, double floor) {
  auto leaves = make_leaves<double>(shapes, x);
  ad::backward(f(leaves));
  const auto numeric = numeric_grads(f, shapes, x, h);
  GradReport r;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto g = leaves[i].grad();
    for (std::size_t j = 0; j < numeric[i].size(); ++j) record(r, g.empty() ? 0.0 : g[j], numeric[i][j], floor, i, j);
  }
  return r;
}

GradReport gradcheck32(const LossFn32& f32, const LossFn64& f64, const std::vector<Shape>& shapes,
                       const std::vector<std::vector<float>>& x, double h, double floor) {
  auto leaves = make_leaves<float>(shapes, x);
  ad::backward(f32(leaves));
  const auto numeric = numeric_grads(f64, shapes, x, h);
  GradReport r;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto g = leaves[i].grad();
    for (std::size_t j = 0; j < numeric[i].size(); ++j)
      record(r, g.empty() ? 0.0 : static_cast<double>(g[j]), numeric[i][j], floor, i, j);
  }
  return r;
}

namespace {

// sum(y * W) with W a fixed pseudo-random matrix.
template <typename T>
ad::Tensor<T> weigh(const ad::Tensor<T>& y, std::uint64_t seed = 99) {
  Rng rng(seed + y.rows() * 131 + y.cols());
  std::vector<T> w(y.size());
  for (auto& v : w) v = static_cast<T>(static_cast<float>(rng.normal()));
  return ad::sum(ad::mul(y, ad::Tensor<T>::from(y.rows(), y.cols(), std::move(w))));
}

template <typename Body>
OpCase make_case(std::string name, std::vector<Shape> shapes, Body body) {
  return OpCase{std::move(name), std::move(shapes),
                [body](const std::vector<ad::Tensor<double>>& in) { return body(in); },
                [body](const std::vector<ad::Tensor<float>>& in) { return body(in); }};
}

}  // namespace

std::vector<OpCase> op_cases() {
  using namespace ad;
  std::vector<OpCase> c;
  c.push_back(make_case("matmul", {{3, 4}, {4, 2}}, [](const auto& in) { return weigh(matmul(in[0], in[1])); }));
  c.push_back(make_case("transpose", {{3, 4}}, [](const auto& in) { return weigh(transpose(in[0])); }));
  c.push_back(make_case("add", {{3, 4}, {3, 4}}, [](const auto& in) { return weigh(add(in[0], in[1])); }));
  c.push_back(make_case("add_row", {{3, 4}, {1, 4}}, [](const auto& in) { return weigh(add_row(in[0], in[1])); }));
  c.push_back(make_case("mul", {{3, 4}, {3, 4}}, [](const auto& in) { return weigh(mul(in[0], in[1])); }));
  c.push_back(make_case("scale", {{3, 4}}, [](const auto& in) {
    using T = typename std::decay_t<decltype(in[0].data())>::value_type;
    return weigh(scale(in[0], std::remove_const_t<T>(0.37)));
  }));
  c.push_back(make_case("relu", {{3, 4}}, [](const auto& in) { return weigh(relu(in[0])); }));
  c.push_back(make_case("sum", {{3, 4}}, [](const auto& in) { return sum(mul(in[0], in[0])); }));
  c.push_back(make_case("softmax_rows", {{3, 5}}, [](const auto& in) { return weigh(softmax_rows(in[0])); }));
  c.push_back(
      make_case("softmax_rows_causal", {{4, 4}}, [](const auto& in) { return weigh(softmax_rows(in[0], true)); }));
  c.push_back(make_case("layer_norm", {{3, 6}, {1, 6}, {1, 6}}, [](const auto& in) {
    using T = std::remove_const_t<typename std::decay_t<decltype(in[0].data())>::value_type>;
    return weigh(layer_norm(in[0], in[1], in[2], T(1e-5)));
  }));
  c.push_back(make_case("embedding_lookup", {{6, 4}}, [](const auto& in) {
    const std::vector<TokenId> ids{1, 3, 3, 5};
    return weigh(embedding_lookup(in[0], std::span<const TokenId>(ids)));
  }));
  c.push_back(make_case("concat_rows", {{2, 3}, {3, 3}}, [](const auto& in) {
    return weigh(concat_rows(std::vector{in[0], in[1]}));
  }));
  c.push_back(make_case("concat_cols", {{3, 2}, {3, 4}}, [](const auto& in) {
    return weigh(concat_cols(std::vector{in[0], in[1]}));
  }));
  c.push_back(make_case("slice_cols", {{3, 6}}, [](const auto& in) { return weigh(slice_cols(in[0], 1, 4)); }));
  c.push_back(make_case("slice_rows", {{5, 3}}, [](const auto& in) { return weigh(slice_rows(in[0], 1, 3)); }));
  c.push_back(make_case("nll_loss", {{4, 6}}, [](const auto& in) {
    const std::vector<TokenId> t{2, kPad, 5, 1};
    return nll_loss(in[0], std::span<const TokenId>(t));
  }));
  return c;
}

// ---------------------------------------------------------------------------

W2TConfig micro_config(std::size_t vocab_size, std::size_t bag_dim) {
  W2TConfig c;
  c.vocab_size = vocab_size;
  c.bag_dim = bag_dim;
  c.hidden = 8;
  c.heads = 2;
  c.word_dim = 8;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.max_question = 4;
  c.max_answer = 4;
  c.init_std = 0.3;
  return c;
}

EmbeddingBag random_bag(const std::string& id, std::size_t m, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingBag b;
  b.slide_id = id;
  b.size = m;
  b.width = width;
  b.embeddings.resize(m * width);
  for (auto& v : b.embeddings) v = static_cast<float>(rng.normal());
  for (std::size_t i = 0; i < m; ++i) b.coords.push_back({static_cast<std::uint32_t>(i / 4), static_cast<std::uint32_t>(i % 4)});
  b.extractor_tag = "random";
  return b;
}

namespace {

template <typename T>
GradReport model_check(const W2TParams<T>& p, const W2TParams<double>& oracle, const EmbeddingBag& bag,
                       const std::vector<TokenId>& q, const std::vector<TokenId>& a, double floor) {
  p.zero_grad();
  ad::backward(forward_nll<T>(bag, q, a, p));
  const auto analytic = p.named();
  auto numeric = oracle.named();
  const double h = 1e-4;
  GradReport r;
  ad::NoGradGuard no_grad;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    auto d = numeric[i].tensor.mutable_data();
    const auto g = analytic[i].tensor.grad();
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double orig = d[j];
      auto at = [&](double x) {
        d[j] = x;
        return forward_nll<double>(bag, q, a, oracle).item();
      };
      // Fourth-order central stencil: the deep composition makes the
      // two-point truncation error visible on small gradients.
      const double n = (8.0 * (at(orig + h) - at(orig - h)) - (at(orig + 2 * h) - at(orig - 2 * h))) / (12.0 * h);
      d[j] = orig;
      const double an = g.empty() ? 0.0 : static_cast<double>(g[j]);
      const double err = std::fabs(an - n) / std::max({std::fabs(an), std::fabs(n), floor});
      ++r.entries;
      if (err >= r.max_rel_err) {
        r.max_rel_err = err;
        r.worst = numeric[i].name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return r;
}

}  // namespace

ModelGradReport model_gradcheck(const W2TConfig& cfg, std::uint64_t seed) {
  const auto pf = W2TParams<float>::init(cfg, seed);
  const auto pd = pf.cast<double>();
  const auto oracle = pf.cast<double>();
  const auto bag = random_bag("micro", 3, cfg.bag_dim, seed + 1);
  const std::vector<TokenId> q{4, 5, 6};
  const std::vector<TokenId> a{7, 8, kEos};
  ModelGradReport r;
  for (const auto& n : pd.named()) r.params += n.tensor.size();
  r.r64 = model_check<double>(pd, oracle, bag, q, a, 1e-6);
  r.r32 = model_check<float>(pf, oracle, bag, q, a, 1e-3);
  return r;
}

// ---------------------------------------------------------------------------

Corpus load_corpus() {
  Corpus c;
  const auto dir = data_dir();
  const auto records = read_clinical_tsv(dir / "clinical.tsv");
  for (const auto& r : records) {
    auto img = make_synthetic_slide(r.slide_id, kCorpusSeed);
    auto tiles = tile(img, TileOptions{kCorpusPatch, 0.05, 0.5});
    c.bags[r.slide_id] = extract_builtin(img, tiles, kCorpusDim, 0);
    c.tiles[r.slide_id] = std::move(tiles);
    c.slides.push_back(std::move(img));
  }
  c.templates = load_templates(dir / "templates.json");
  OfflineFixtureClient llm(dir / "fixtures");
  c.build = build_dataset(records, dir / "captions", c.templates, &llm, BuildOptions{});
  c.vocab = Vocab::build(vocabulary_corpus(c.build.filtered.kept, c.templates), 1);
  c.lexicon = EntityLexicon::load(dir / "entities.json");
  return c;
}

// ---------------------------------------------------------------------------

NextTokenFn random_lm(std::size_t vocab, std::uint64_t seed, double temperature) {
  return [vocab, seed, temperature](std::span<const TokenId> prefix) {
    std::uint64_t h = fnv1a64(prefix.data(), prefix.size_bytes(), seed * 0x9e3779b97f4a7c15ULL + 1);
    Rng rng(h);
    std::vector<double> logits(vocab);
    for (auto& z : logits) z = temperature * rng.normal();
    return logits;
  };
}

namespace {

void enumerate(const NextTokenFn& next, std::size_t vocab, std::size_t max_len, std::vector<TokenId>& prefix,
               double lp, ExhaustiveBest& best) {
  const auto consider = [&](const std::vector<TokenId>& t, double score, bool finished) {
    if (score > best.log_prob + 1e-12 || (std::fabs(score - best.log_prob) <= 1e-12 && t < best.tokens)) {
      best.tokens = t;
      best.log_prob = score;
      best.finished = finished;
    }
  };
  if (prefix.size() == max_len) {
    consider(prefix, lp, false);
    return;
  }
  const auto logits = next(prefix);
  const auto ls = log_softmax(logits);
  for (std::size_t id = 0; id < vocab; ++id) {
    const auto tok = static_cast<TokenId>(id);
    if (tok == kPad || tok == kBos) continue;
    prefix.push_back(tok);
    if (tok == kEos) consider(prefix, lp + ls[id], true);
    else enumerate(next, vocab, max_len, prefix, lp + ls[id], best);
    prefix.pop_back();
  }
}

}  // namespace

ExhaustiveBest exhaustive_search(const NextTokenFn& next, std::size_t vocab, std::size_t max_len) {
  ExhaustiveBest best;
  std::vector<TokenId> prefix;
  enumerate(next, vocab, max_len, prefix, 0.0, best);
  return best;
}

bool prefix_survives(const BeamTrace& trace, const std::vector<TokenId>& tokens) {
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (t >= trace.kept.size()) return false;
    const std::vector<TokenId> p(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(t + 1));
    const auto& kept = trace.kept[t];
    if (std::none_of(kept.begin(), kept.end(), [&](const BeamHypothesis& h) { return h.tokens == p; })) return false;
  }
  return true;
}

double max_row_sum_error(const std::vector<AttentionRecord>& records) {
  double worst = 0.0;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < r.cols; ++j) {
        const double w = r.at(i, j);
        if (w < 0.0) worst = std::max(worst, -w);
        s += w;
      }
      worst = std::max(worst, std::fabs(s - 1.0));
    }
  }
  return worst;
}

}  // namespace w2t::testing
