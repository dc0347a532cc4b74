// One PASS/FAIL line per primary acceptance criterion. Exit status is the
// number of failures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "support.hpp"
#include "w2t/error.hpp"
#include "w2t/random.hpp"

using namespace w2t;
using Clock = std::chrono::steady_clock;

namespace {

Tokens toks(const nlohmann::json& j) { return tokenize(j.get<std::string>()); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const testing::Corpus& corpus() {
  static const testing::Corpus c = testing::load_corpus();
  return c;
}

const std::vector<QASample>& pairs() { return corpus().build.filtered.kept; }

W2TConfig desk() { return W2TConfig::desk(corpus().vocab.size(), testing::kCorpusDim); }

// Overfit run shared by the overfit, beam and heatmap criteria.
struct Overfit {
  TrainResult result;
  double seconds = 0.0;
};
const Overfit& overfit() {
  static const Overfit o = [] {
    TrainConfig cfg;
    cfg.lr = 5e-4;
    cfg.max_steps = 3000;
    cfg.eval_every = 100;
    cfg.template_resampling = false;
    cfg.target_loss = 0.01;
    TrainInputs in;
    in.train = &pairs();
    in.bags = &corpus().bags;
    in.vocab = &corpus().vocab;
    const auto t0 = Clock::now();
    Overfit r{train(in, cfg, desk()), 0.0};
    r.seconds = seconds_since(t0);
    return r;
  }();
  return o;
}

std::vector<TokenId> q_ids(const QASample& s) { return encode(s.question, corpus().vocab, SeqRole::kQuestion).ids; }

// ---------------------------------------------------------------------------

Outcome gradcheck() {
  const auto t0 = Clock::now();
  double w64 = 0.0, w32 = 0.0;
  std::string worst;
  for (const auto& c : testing::op_cases()) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto x = testing::random_inputs(c.shapes, seed);
      const auto r64 = testing::gradcheck64(c.f64, c.shapes, x);
      const auto r32 = testing::gradcheck32(c.f32, c.f64, c.shapes, x);
      if (r64.max_rel_err > w64) {
        w64 = r64.max_rel_err;
        worst = c.name;
      }
      w32 = std::max(w32, r32.max_rel_err);
    }
  }
  const auto m = testing::model_gradcheck(testing::micro_config(), 1);
  const double secs = seconds_since(t0);
  const bool ok = w64 <= 1e-5 && w32 <= 1e-3 && m.r64.max_rel_err <= 1e-5 && m.r32.max_rel_err <= 1e-3 && secs < 30.0;
  return {ok, fmt("ops %zu: max rel err 64-bit %.2e, 32-bit %.2e; micro-model (%zu params) 64-bit %.2e, 32-bit %.2e; "
                  "%.1fs",
                  testing::op_cases().size(), w64, w32, m.params, m.r64.max_rel_err, m.r32.max_rel_err, secs)};
}

Outcome attention_invariants() {
  const auto cfg = desk();
  const auto params = W2TParams<float>::init(cfg, 17);
  double row_err = 0.0;
  double perm_diff = 0.0;
  std::size_t matrices = 0, shape_bad = 0;
  for (const auto& s : pairs()) {
    const auto& bag = corpus().bags.at(s.slide_id);
    const auto q = q_ids(s);
    std::vector<TokenId> tokens = q;
    tokens.push_back(kBos);
    for (TokenId t : encode(s.answer, corpus().vocab, SeqRole::kAnswer).ids) tokens.push_back(t);
    tokens.pop_back();
    std::vector<AttentionRecord> recs;
    ad::NoGradGuard ng;
    decode_all(encode_bag(bag, params, &recs), tokens, params, &recs);
    row_err = std::max(row_err, testing::max_row_sum_error(recs));
    for (const auto& r : recs) {
      ++matrices;
      if (r.kind == AttentionKind::kCoAttention && (r.rows != tokens.size() || r.cols != bag.size)) ++shape_bad;
    }
  }
  Rng rng(3);
  for (const auto& [id, bag] : corpus().bags) {
    std::vector<std::size_t> perm(bag.size);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    EmbeddingBag pb = bag;
    for (std::size_t i = 0; i < perm.size(); ++i)
      std::copy_n(bag.row(perm[i]), bag.width, pb.embeddings.begin() + static_cast<std::ptrdiff_t>(i * bag.width));
    ad::NoGradGuard ng;
    const auto a = encode_bag(bag, params);
    const auto b = encode_bag(pb, params);
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t j = 0; j < cfg.hidden; ++j)
        perm_diff = std::max(perm_diff, static_cast<double>(std::fabs(b.at(i, j) - a.at(perm[i], j))));
  }
  const bool ok = row_err <= 1e-5 && shape_bad == 0 && perm_diff <= 1e-5;
  return {ok, fmt("%zu matrices over %zu QA pairs: max |row sum - 1| %.2e, co-attention shape mismatches %zu; "
                  "permutation diff %.2e over %zu bags",
                  matrices, pairs().size(), row_err, shape_bad, perm_diff, corpus().bags.size())};
}

Outcome overfit_reproduction() {
  const auto& o = overfit();
  const auto& params = o.result.final_params;
  std::size_t exact = 0;
  std::string first_miss;
  for (const auto& s : pairs()) {
    const auto a = generate_greedy(corpus().bags.at(s.slide_id), q_ids(s), params, corpus().vocab, params.config.max_answer);
    if (a.text == decode(encode(s.answer, corpus().vocab, SeqRole::kAnswer), corpus().vocab)) ++exact;
    else if (first_miss.empty()) first_miss = "'" + a.text + "' vs '" + s.answer + "'";
  }
  const bool ok = o.result.final_train_loss < 0.05 && o.result.steps_run <= 3000 && exact == pairs().size() &&
                  o.seconds < 300.0;
  return {ok, fmt("%zu slides, %zu pairs, lr 5e-4: train loss %.4f after %zu steps; greedy exact %zu/%zu%s; %.1fs",
                  corpus().bags.size(), pairs().size(), o.result.final_train_loss, o.result.steps_run, exact,
                  pairs().size(), first_miss.empty() ? "" : ("; first miss " + first_miss).c_str(), o.seconds)};
}

Outcome loss_sanity() {
  auto cfg = desk();
  cfg.zero_output_init = true;
  const auto params = W2TParams<float>::init(cfg, 1);
  const double ln_v = std::log(static_cast<double>(cfg.vocab_size));
  double worst = 0.0;
  for (const auto& s : pairs()) {
    ad::NoGradGuard ng;
    const double l = forward_nll<float>(corpus().bags.at(s.slide_id), q_ids(s),
                                        encode(s.answer, corpus().vocab, SeqRole::kAnswer).ids, params)
                         .item();
    worst = std::max(worst, std::fabs(l - ln_v));
  }
  return {worst <= 1e-4, fmt("V = %zu, ln V = %.6f, max |loss - ln V| %.2e over %zu pairs", cfg.vocab_size, ln_v, worst,
                             pairs().size())};
}

Outcome beam_properties() {
  std::size_t equal = 0, total = 0, dominated = 0, beam_total = 0;
  const auto untrained = W2TParams<float>::init(desk(), 4);
  for (const auto* params : {&untrained, &overfit().result.final_params}) {
    for (const auto& s : pairs()) {
      const auto& bag = corpus().bags.at(s.slide_id);
      const auto q = q_ids(s);
      const auto len = params->config.max_answer;
      const auto g = generate_greedy(bag, q, *params, corpus().vocab, len);
      const auto b1 = generate_beam(bag, q, *params, corpus().vocab, 1, len).front();
      const auto b3 = generate_beam(bag, q, *params, corpus().vocab, 3, len).front();
      ++total;
      if (b1.generation.tokens == g.generation.tokens) ++equal;
      ++beam_total;
      if (b3.generation.log_prob >= g.generation.log_prob - 1e-9) ++dominated;
    }
  }
  std::size_t micro = 0, survived = 0, matched = 0;
  for (std::size_t v : {4u, 5u, 6u}) {
    for (std::size_t max_len = 1; max_len <= 4; ++max_len) {
      for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto lm = testing::random_lm(v, seed * 977 + v * 13 + max_len, 1.5);
        BeamTrace trace;
        const auto beam = beam_search(lm, 3, max_len, &trace);
        const auto best = testing::exhaustive_search(lm, v, max_len);
        ++micro;
        if (!testing::prefix_survives(trace, best.tokens)) continue;
        ++survived;
        if (std::fabs(beam.front().log_prob - best.log_prob) <= 1e-9) ++matched;
      }
    }
  }
  const bool ok = equal == total && dominated == beam_total && matched == survived && survived > 0;
  return {ok, fmt("beam-1 == greedy %zu/%zu; beam-3 >= greedy %zu/%zu; micro oracle %zu/%zu matched "
                  "(optimum prefix survived in %zu of %zu instances)",
                  equal, total, dominated, beam_total, matched, survived, survived, micro)};
}

Outcome metric_oracles() {
  std::ifstream f(testing::fixture_dir() / "metric_oracles.json");
  const auto j = nlohmann::json::parse(f);
  const auto& lex = corpus().lexicon;
  std::size_t n = 0;
  double worst = 0.0;
  auto check = [&](double got, const nlohmann::json& c) {
    ++n;
    worst = std::max(worst, std::fabs(got - c.at("expected").get<double>()));
  };
  for (const auto& c : j.at("bleu"))
    check(bleu(toks(c.at("candidate")), toks(c.at("reference")), c.at("n").get<int>()), c);
  for (const auto& c : j.at("rouge_l")) check(rouge_l(toks(c.at("candidate")), toks(c.at("reference"))), c);
  for (const auto& c : j.at("meteor")) check(meteor_lite(toks(c.at("candidate")), toks(c.at("reference"))), c);
  for (const auto& c : j.at("fact_ent")) check(fact_ent(c.at("generated"), c.at("reference"), lex), c);
  for (const auto& c : j.at("c_index")) {
    std::vector<bool> ev;
    for (int e : c.at("event")) ev.push_back(e != 0);
    check(c_index(c.at("risk").get<std::vector<double>>(), c.at("time").get<std::vector<double>>(), ev), c);
  }

  // Identity: BLEU, ROUGE-L and Fact_ent give exactly 1. METEOR-lite keeps
  // its one-chunk penalty, so its identity value is F_mean*(1 - 0.5/m^3).
  double id_err = 0.0, meteor_id_err = 0.0;
  for (const auto& s : pairs()) {
    const auto t = tokenize(s.answer);
    if (t.empty()) continue;
    id_err = std::max({id_err, std::fabs(bleu(t, t, 1) - 1.0), std::fabs(bleu(t, t, 4) - 1.0),
                       std::fabs(rouge_l(t, t) - 1.0), std::fabs(fact_ent(s.answer, s.answer, lex) - 1.0)});
    const double m = static_cast<double>(t.size());
    meteor_id_err = std::max(meteor_id_err, std::fabs(meteor_lite(t, t) - (1.0 - 0.5 / (m * m * m))));
  }

  Rng rng(2024);
  std::vector<double> time(60), risk(60);
  std::vector<bool> event(60);
  for (std::size_t i = 0; i < 60; ++i) {
    time[i] = 1.0 + static_cast<double>(rng.below(120));
    event[i] = rng.below(4) != 0;
    risk[i] = rng.uniform();
  }
  double mean = 0.0;
  for (int k = 0; k < 1000; ++k) {
    for (std::size_t i = risk.size(); i > 1; --i) std::swap(risk[i - 1], risk[rng.below(i)]);
    mean += c_index(risk, time, event);
  }
  mean /= 1000.0;
  const bool ok = worst <= 1e-6 && id_err <= 1e-12 && meteor_id_err <= 1e-12 && std::fabs(mean - 0.5) <= 0.05;
  return {ok, fmt("%zu oracle vectors, max abs err %.2e; identity err (BLEU/ROUGE-L/Fact_ent) %.1e, METEOR-lite "
                  "one-chunk identity err %.1e; shuffled c-index mean %.4f",
                  n, worst, id_err, meteor_id_err, mean)};
}

Outcome dataset_counts() {
  const auto& b = corpus().build;
  std::multiset<std::string> rules;
  for (const auto& r : b.filtered.rejected) rules.insert(r.rule);
  const auto& st = b.stats;
  auto qt = [&](const char* k) { return st.question_types.counts.at(k); };
  const bool counts = b.open_raw.size() == 12 && b.closed_raw.size() == 11 && b.filtered.kept.size() == 20 &&
                      rules == std::multiset<std::string>{"banned_key", "choice_inconsistent", "duplicate_question"};
  const bool stats = qt("what") == 13 && qt("which") == 3 && qt("where") == 2 && qt("yes/no") == 2 && qt("other") == 0 &&
                     st.subsets.counts.at("open") == 12 && st.subsets.counts.at("closed") == 8 &&
                     st.answer_letters.counts.at("A") == 4 && st.answer_letters.counts.at("B") == 2 &&
                     st.answer_letters.counts.at("C") == 1 && st.answer_letters.counts.at("D") == 1 &&
                     st.entity_coverage.at("her2") == 0.375 && st.entity_coverage.at("margins") == 0.125;
  double freq_sum = 0.0;
  for (const auto& [k, v] : st.question_types.frequency) freq_sum += v;
  std::vector<std::string> ids;
  for (int i = 0; i < 977; ++i) ids.push_back("slide-" + std::to_string(i));
  const auto m = split_slides(ids);
  const bool split_ok = m.train.size() == 804 && m.val.size() == 87 && m.test.size() == 86;
  const bool ok = counts && stats && std::fabs(freq_sum - 1.0) <= 1e-12 && split_ok;
  return {ok, fmt("pairs open %zu + closed %zu, kept %zu, rejected %zu (%s); stats %s; 977-slide split %zu/%zu/%zu",
                  b.open_raw.size(), b.closed_raw.size(), b.filtered.kept.size(), b.filtered.rejected.size(),
                  [&] {
                    std::string s;
                    for (const auto& r : rules) s += (s.empty() ? "" : ", ") + r;
                    return s;
                  }()
                      .c_str(),
                  stats ? "match" : "differ", m.train.size(), m.val.size(), m.test.size())};
}

Outcome heatmap_conservation() {
  const auto& params = overfit().result.final_params;
  std::size_t maps = 0, qa = 0, bad = 0;
  double worst_sum = 0.0;
  for (const auto& s : pairs()) {
    const auto& bag = corpus().bags.at(s.slide_id);
    const auto q = q_ids(s);
    for (std::size_t beam : {1u, 3u}) {
      const auto a = beam == 1 ? generate_greedy(bag, q, params, corpus().vocab, params.config.max_answer)
                               : generate_beam(bag, q, params, corpus().vocab, 3, params.config.max_answer).front();
      ++qa;
      std::set<std::string> seen;
      for (const auto& word : tokenize(s.question)) {
        if (!seen.insert(word).second || !corpus().vocab.contains(word)) continue;
        const auto hm = keyword_attention(a.records, q, word, corpus().vocab, bag);
        ++maps;
        const double total = std::accumulate(hm.weights.begin(), hm.weights.end(), 0.0);
        worst_sum = std::max(worst_sum, std::fabs(total - 1.0));
        if (hm.weights.size() != bag.size ||
            std::any_of(hm.weights.begin(), hm.weights.end(), [](double w) { return w < 0.0; }))
          ++bad;
      }
    }
  }
  const bool ok = maps > 0 && bad == 0 && worst_sum <= 1e-5;
  return {ok, fmt("%zu heatmaps over %zu generated answers: max |sum - 1| %.2e, negative/miscounted %zu", maps, qa,
                  worst_sum, bad)};
}

Outcome end_to_end() {
  const auto work = testing::scratch_dir("acceptance-e2e");
  const std::string cmd = "bash '" W2T_SMOKE_SCRIPT "' '" + testing::cli_path().string() + "' '" +
                          testing::data_dir().string() + "' '" + work.string() + "' > '" +
                          (work.parent_path() / "w2t-acceptance-e2e.log").string() + "' 2>&1";
  const auto t0 = Clock::now();
  const int rc = std::system(cmd.c_str());
  const double secs = seconds_since(t0);
  const int code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return {code == 0 && secs < 180.0,
          fmt("synth, tile, extract, build-dataset, vocab, train (50 steps), eval, ask: exit %d in %.1fs", code, secs)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradcheck", gradcheck},
      {"attention-invariants", attention_invariants},
      {"overfit-reproduction", overfit_reproduction},
      {"loss-sanity", loss_sanity},
      {"beam-properties", beam_properties},
      {"metric-oracles", metric_oracles},
      {"dataset-builder", dataset_counts},
      {"heatmap-conservation", heatmap_conservation},
      {"end-to-end-smoke", end_to_end},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures;
}
