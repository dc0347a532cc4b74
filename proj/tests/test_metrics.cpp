#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "support.hpp"
#include "w2t/error.hpp"
#include "w2t/random.hpp"

using namespace w2t;

namespace {

const nlohmann::json& oracles() {
  static const nlohmann::json j = [] {
    std::ifstream f(testing::fixture_dir() / "metric_oracles.json");
    REQUIRE(f.good());
    return nlohmann::json::parse(f);
  }();
  return j;
}

Tokens tok(const std::string& s) { return tokenize(s); }

EntityLexicon lexicon() { return EntityLexicon::load(testing::data_dir() / "entities.json"); }

// Quadratic reference without any shortcuts.
double brute_c_index(const std::vector<double>& risk, const std::vector<double>& time, const std::vector<bool>& event) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < risk.size(); ++i)
    for (std::size_t j = 0; j < risk.size(); ++j) {
      if (i == j || !event[i] || !(time[i] < time[j])) continue;
      den += 1.0;
      num += risk[i] > risk[j] ? 1.0 : risk[i] == risk[j] ? 0.5 : 0.0;
    }
  return num / den;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("BLEU oracles") {
    for (const auto& c : oracles().at("bleu")) {
      CAPTURE(c.dump());
      const double got = bleu(tok(c.at("candidate")), tok(c.at("reference")), c.at("n").get<int>());
      CHECK(std::fabs(got - c.at("expected").get<double>()) <= 1e-6);
    }
  }

  TEST_CASE("ROUGE-L oracles") {
    for (const auto& c : oracles().at("rouge_l")) {
      CAPTURE(c.dump());
      CHECK(std::fabs(rouge_l(tok(c.at("candidate")), tok(c.at("reference"))) - c.at("expected").get<double>()) <= 1e-6);
    }
    CHECK(lcs_length(tok("a b c d"), tok("a c d")) == 3);
    CHECK(lcs_length({}, tok("a")) == 0);
  }

  TEST_CASE("METEOR-lite oracles") {
    for (const auto& c : oracles().at("meteor")) {
      CAPTURE(c.dump());
      CHECK(std::fabs(meteor_lite(tok(c.at("candidate")), tok(c.at("reference"))) - c.at("expected").get<double>()) <=
            1e-6);
    }
    const auto d = meteor_detail(tok("b a c"), tok("a c b"));
    CHECK(d.matches == 3);
    CHECK(d.chunks == 2);
  }

  TEST_CASE("Fact_ent oracles") {
    const auto lex = lexicon();
    for (const auto& c : oracles().at("fact_ent")) {
      CAPTURE(c.dump());
      CHECK(std::fabs(fact_ent(c.at("generated"), c.at("reference"), lex) - c.at("expected").get<double>()) <= 1e-6);
    }
    CHECK(set_f1({"her2"}, {"her2", "pr"}) == doctest::Approx(2.0 / 3.0));
    CHECK(set_f1({}, {}) == 1.0);
    CHECK(set_f1({"a"}, {}) == 0.0);
  }

  TEST_CASE("c-index oracles agree with brute force") {
    for (const auto& c : oracles().at("c_index")) {
      CAPTURE(c.dump());
      const auto risk = c.at("risk").get<std::vector<double>>();
      const auto time = c.at("time").get<std::vector<double>>();
      std::vector<bool> event;
      for (int e : c.at("event")) event.push_back(e != 0);
      const double got = c_index(risk, time, event);
      CHECK(std::fabs(got - c.at("expected").get<double>()) <= 1e-6);
      CHECK(std::fabs(got - brute_c_index(risk, time, event)) <= 1e-12);
    }
  }

  TEST_CASE("identity inputs") {
    for (const std::string s : {"positive", "her2 is positive", "the tumor shows ductal features"}) {
      const auto t = tok(s);
      CHECK(bleu(t, t, 1) == doctest::Approx(1.0));
      CHECK(bleu(t, t, 4) == doctest::Approx(1.0));
      CHECK(rouge_l(t, t) == doctest::Approx(1.0));
      CHECK(fact_ent(s, s, lexicon()) == 1.0);
      // METEOR-lite keeps its fragmentation penalty even for one chunk.
      CHECK(meteor_lite(t, t) == doctest::Approx(1.0 - 0.5 / std::pow(static_cast<double>(t.size()), 3)));
    }
  }

  TEST_CASE("clipping and bounds") {
    Rng rng(5);
    const std::vector<std::string> words{"a", "b", "c", "d"};
    for (int trial = 0; trial < 200; ++trial) {
      Tokens c, r;
      for (std::size_t i = 0, n = 1 + rng.below(7); i < n; ++i) c.push_back(words[rng.below(4)]);
      for (std::size_t i = 0, n = 1 + rng.below(7); i < n; ++i) r.push_back(words[rng.below(4)]);
      for (double v : {bleu(c, r, 1), bleu(c, r, 4), rouge_l(c, r), meteor_lite(c, r), token_f1(c, r)}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      // Clipped unigram precision never exceeds the reference multiset.
      const double p1 = bleu(c, r, 1);
      const double bp = c.size() > r.size() ? 1.0 : std::exp(1.0 - static_cast<double>(r.size()) / c.size());
      std::size_t clipped = 0;
      for (const auto& w : words)
        clipped += std::min(std::count(c.begin(), c.end(), w), std::count(r.begin(), r.end(), w));
      CHECK(p1 == doctest::Approx(bp * static_cast<double>(clipped) / c.size()));
    }
  }

  TEST_CASE("repeating a token past its reference count never raises BLEU") {
    // Holds once the brevity penalty is inactive (candidate at least as long
    // as the reference); below that length, extra tokens shrink the penalty.
    Rng rng(9);
    const std::vector<std::string> words{"a", "b", "c"};
    for (int trial = 0; trial < 200; ++trial) {
      Tokens r;
      for (std::size_t i = 0, n = 1 + rng.below(5); i < n; ++i) r.push_back(words[rng.below(3)]);
      Tokens c = r;
      for (std::size_t i = 0, n = rng.below(3); i < n; ++i) c.push_back(words[rng.below(3)]);
      const std::string w = r[rng.below(r.size())];
      while (std::count(c.begin(), c.end(), w) <= std::count(r.begin(), r.end(), w)) c.push_back(w);
      for (int n : {1, 2, 4}) {
        const double before = bleu(c, r, n);
        Tokens more = c;
        more.push_back(w);
        CHECK(bleu(more, r, n) <= before + 1e-12);
      }
    }
  }

  TEST_CASE("closed-ended accuracy") {
    const std::array<std::string, 4> ch{"positive", "negative", "equivocal", "not assessed"};
    CHECK(closest_choice("positive", ch) == 0);
    CHECK(closest_choice("the result is negative", ch) == 1);
    CHECK(closest_choice("unrelated words", ch) == 0);  // all zero, smallest index
    CHECK(closed_acc("negative", ch, 'B'));
    CHECK_FALSE(closed_acc("negative", ch, 'A'));
    CHECK(token_f1(tok("a b"), tok("a b")) == 1.0);
    CHECK(token_f1(tok("a b"), tok("a c")) == doctest::Approx(0.5));
  }

  TEST_CASE("task precision, recall and F1") {
    const auto r = task_prf({"positive", "negative", "positive", "positive"},
                            {"positive", "positive", "negative", "positive"}, "positive");
    CHECK(r.tp == 2);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
    CHECK(r.precision == doctest::Approx(2.0 / 3.0));
    CHECK(r.recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.f1 == doctest::Approx(2.0 / 3.0));
    const auto none = task_prf({"negative"}, {"negative"}, "positive");
    CHECK(none.precision_undefined);
    CHECK(none.recall_undefined);
    CHECK_THROWS_AS(task_prf({"a"}, {}, "a"), Error);
  }

  TEST_CASE("c-index edge cases") {
    CHECK(c_index({1, 1, 1}, {1, 2, 3}, {true, true, true}) == 0.5);
    try {
      c_index({1, 2}, {5, 5}, {true, true});
      FAIL("expected NoComparablePairs");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNoComparablePairs);
    }
    CHECK_THROWS_AS(c_index({1, 2}, {1, 2}, {false, false}), Error);
  }

  TEST_CASE("random risks average 0.5") {
    Rng rng(2024);
    std::vector<double> time(60);
    std::vector<bool> event(60);
    for (std::size_t i = 0; i < time.size(); ++i) {
      time[i] = 1.0 + static_cast<double>(rng.below(120));
      event[i] = rng.below(4) != 0;
    }
    std::vector<double> risk(60);
    for (std::size_t i = 0; i < risk.size(); ++i) risk[i] = rng.uniform();
    double total = 0.0;
    for (int s = 0; s < 1000; ++s) {
      for (std::size_t i = risk.size(); i > 1; --i) std::swap(risk[i - 1], risk[rng.below(i)]);
      total += c_index(risk, time, event);
    }
    CHECK(std::fabs(total / 1000.0 - 0.5) <= 0.05);
  }

  TEST_CASE("number parsing") {
    CHECK(parse_number("about 24 months") == 24.0);
    CHECK(parse_number("-3.5e1 x") == -35.0);
    CHECK_FALSE(parse_number("none").has_value());
  }

  TEST_CASE("entity lexicon") {
    const auto lex = lexicon();
    CHECK(lex.extract("HER-2 positive ductal carcinoma") == std::set<std::string>{"her2", "positive", "ductal"});
    CHECK(lex.extract("estrogen receptor and surgical margin") == std::set<std::string>{"er", "margins"});
    CHECK(lex.extract("").empty());
    const auto bad = nlohmann::json::parse(R"({"entities": {"a": ["x"], "b": ["x"]}})");
    try {
      EntityLexicon::from_json(bad);
      FAIL("expected FormatError");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kFormatError);
    }
  }

  TEST_CASE("evaluation report over the corpus") {
    const auto c = testing::load_corpus();
    const auto cfg = W2TConfig::desk(c.vocab.size(), testing::kCorpusDim);
    Checkpoint ck{W2TParams<float>::init(cfg, 3), c.vocab, 0};
    EvalOptions opts;
    opts.beam_width = 2;
    const auto& samples = c.build.filtered.kept;
    const auto rep = evaluate(ck, samples, c.bags, c.lexicon, opts);
    CHECK(rep.total == samples.size());
    CHECK(rep.evaluated + rep.skipped == rep.total);
    CHECK(rep.samples.size() == rep.evaluated);
    for (double v : {rep.bleu1, rep.bleu4, rep.meteor, rep.rouge_l, rep.acc, rep.fact_ent}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const auto j = rep.to_json();
    CHECK(j.contains("definitions"));
    CHECK(j.at("tasks").contains("her2"));
  }
}
