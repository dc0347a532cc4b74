#include "w2t/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <regex>

#include "w2t/error.hpp"
#include "w2t/inference.hpp"
#include "w2t/io.hpp"
#include "w2t/text.hpp"

namespace w2t {

namespace {

using NgramCounts = std::map<Tokens, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
  return out;
}

bool contains_seq(const Tokens& hay, const Tokens& needle, std::size_t* at = nullptr) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), hay.begin() + i)) {
      if (at) *at = i;
      return true;
    }
  }
  return false;
}

}  // namespace

double bleu(const Tokens& candidate, const Tokens& reference, int n_max) {
  if (n_max < 1 || n_max > 4) throw Error(ErrorCode::kInvalidArgument, "bleu order must be in 1..4");
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t order = std::min<std::size_t>(n_max, candidate.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= order; ++n) {
    const auto c = ngrams(candidate, n);
    const auto r = ngrams(reference, n);
    std::size_t clipped = 0, total = 0;
    for (const auto& [g, k] : c) {
      total += k;
      const auto it = r.find(g);
      if (it != r.end()) clipped += std::min(k, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(order));
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

namespace {

// Depth-first search over candidate positions. Every token type must be
// matched min(count_c, count_r) times; among such alignments the one with
// the fewest chunks wins. The node budget keeps adversarial repeats bounded;
// past it the best alignment found so far is used.
class ChunkSearch {
 public:
  ChunkSearch(const Tokens& c, const Tokens& r) : c_(c), r_(r), used_(r.size(), false), align_(c.size(), -1) {
    std::map<std::string, std::size_t> cc, rc;
    for (const auto& t : c) ++cc[t];
    for (const auto& t : r) ++rc[t];
    for (const auto& [t, k] : cc) {
      const auto it = rc.find(t);
      need_[t] = it == rc.end() ? 0 : std::min(k, it->second);
      matches_ += need_[t];
    }
    remaining_c_ = cc;
  }

  std::size_t matches() const { return matches_; }

  std::size_t run() {
    if (matches_ == 0) return 0;
    best_ = matches_ + 1;
    dfs(0, 0);
    return best_;
  }

 private:
  void dfs(std::size_t i, std::size_t chunks) {
    if (chunks >= best_ || (++nodes_ > kBudget && best_ <= matches_)) return;
    if (i == c_.size()) {
      best_ = chunks;
      return;
    }
    const std::string& t = c_[i];
    std::size_t& need = need_[t];
    std::size_t& left = remaining_c_[t];
    --left;
    if (need > 0) {
      // Prefer continuing the current chunk.
      const int prev = i > 0 ? align_[i - 1] : -2;
      std::vector<std::size_t> order;
      if (prev >= 0 && static_cast<std::size_t>(prev) + 1 < r_.size()) order.push_back(static_cast<std::size_t>(prev) + 1);
      for (std::size_t j = 0; j < r_.size(); ++j) {
        if (order.empty() || j != order.front()) order.push_back(j);
      }
      for (std::size_t j : order) {
        if (used_[j] || r_[j] != t) continue;
        const bool extends = prev >= 0 && static_cast<std::size_t>(prev) + 1 == j;
        used_[j] = true;
        align_[i] = static_cast<int>(j);
        --need;
        dfs(i + 1, chunks + (extends ? 0 : 1));
        ++need;
        align_[i] = -1;
        used_[j] = false;
      }
    }
    // Leave this occurrence unmatched only if later ones can still cover need.
    if (left >= need) dfs(i + 1, chunks);
    ++left;
  }

  static constexpr std::size_t kBudget = 200000;
  const Tokens& c_;
  const Tokens& r_;
  std::vector<bool> used_;
  std::vector<int> align_;
  std::map<std::string, std::size_t> need_;
  std::map<std::string, std::size_t> remaining_c_;
  std::size_t matches_ = 0;
  std::size_t best_ = 0;
  std::size_t nodes_ = 0;
};

}  // namespace

MeteorDetail meteor_detail(const Tokens& candidate, const Tokens& reference) {
  MeteorDetail d;
  if (candidate.empty() || reference.empty()) return d;
  ChunkSearch search(candidate, reference);
  d.matches = search.matches();
  if (d.matches == 0) return d;
  d.chunks = search.run();
  const double m = static_cast<double>(d.matches);
  d.precision = m / static_cast<double>(candidate.size());
  d.recall = m / static_cast<double>(reference.size());
  d.f_mean = 10.0 * d.precision * d.recall / (d.recall + 9.0 * d.precision);
  d.penalty = 0.5 * std::pow(static_cast<double>(d.chunks) / m, 3.0);
  d.score = d.f_mean * (1.0 - d.penalty);
  return d;
}

double meteor_lite(const Tokens& candidate, const Tokens& reference) {
  return meteor_detail(candidate, reference).score;
}

double token_f1(const Tokens& a, const Tokens& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::map<std::string, std::size_t> ca, cb;
  for (const auto& t : a) ++ca[t];
  for (const auto& t : b) ++cb[t];
  std::size_t common = 0;
  for (const auto& [t, k] : ca) {
    const auto it = cb.find(t);
    if (it != cb.end()) common += std::min(k, it->second);
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(a.size());
  const double r = static_cast<double>(common) / static_cast<double>(b.size());
  return 2.0 * p * r / (p + r);
}

int closest_choice(const std::string& generated, const std::array<std::string, 4>& choices) {
  const auto g = tokenize(generated);
  int best = 0;
  double best_f1 = -1.0;
  for (int i = 0; i < 4; ++i) {
    const double f = token_f1(g, tokenize(choices[static_cast<std::size_t>(i)]));
    if (f > best_f1) {
      best_f1 = f;
      best = i;
    }
  }
  return best;
}

bool closed_acc(const std::string& generated, const std::array<std::string, 4>& choices, char gold) {
  return closest_choice(generated, choices) == gold - 'A';
}

// ---------------------------------------------------------------------------
// Entities

EntityLexicon EntityLexicon::from_json(const nlohmann::json& j) {
  EntityLexicon lex;
  std::map<Tokens, std::string> owner;
  try {
    for (const auto& [name, aliases] : j.at("entities").items()) {
      const std::string canon = normalize_text(name);
      std::vector<std::string> forms{name};
      for (const auto& a : aliases) forms.push_back(a.get<std::string>());
      auto& list = lex.aliases_[canon];
      for (const auto& f : forms) {
        Tokens t = tokenize(f);
        if (t.empty()) throw Error(ErrorCode::kFormatError, "empty alias for entity '" + name + "'");
        const auto [it, fresh] = owner.emplace(t, canon);
        if (!fresh && it->second != canon)
          throw Error(ErrorCode::kFormatError,
                      "alias '" + f + "' belongs to both '" + it->second + "' and '" + canon + "'");
        if (std::find(list.begin(), list.end(), t) == list.end()) list.push_back(std::move(t));
      }
    }
    if (j.contains("tasks")) lex.tasks_ = j.at("tasks");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("entity lexicon: ") + e.what());
  }
  return lex;
}

EntityLexicon EntityLexicon::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

std::set<std::string> EntityLexicon::extract(const std::string& text) const {
  const Tokens t = tokenize(text);
  // Longest aliases claim their span first so "triple negative" does not
  // also yield "negative".
  struct Alias {
    const Tokens* tokens;
    const std::string* entity;
  };
  std::vector<Alias> all;
  for (const auto& [name, list] : aliases_) {
    for (const auto& a : list) all.push_back({&a, &name});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Alias& x, const Alias& y) { return x.tokens->size() > y.tokens->size(); });
  std::vector<bool> claimed(t.size(), false);
  std::set<std::string> found;
  for (const auto& a : all) {
    const auto& n = *a.tokens;
    for (std::size_t i = 0; i + n.size() <= t.size(); ++i) {
      if (!std::equal(n.begin(), n.end(), t.begin() + i)) continue;
      if (std::any_of(claimed.begin() + i, claimed.begin() + i + n.size(), [](bool b) { return b; })) continue;
      std::fill(claimed.begin() + i, claimed.begin() + i + n.size(), true);
      found.insert(*a.entity);
    }
  }
  return found;
}

double set_f1(const std::set<std::string>& predicted, const std::set<std::string>& reference) {
  if (predicted.empty() && reference.empty()) return 1.0;
  if (predicted.empty() || reference.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& e : predicted) common += reference.count(e);
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(predicted.size());
  const double r = static_cast<double>(common) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

double fact_ent(const std::string& generated, const std::string& reference, const EntityLexicon& lex) {
  return set_f1(lex.extract(generated), lex.extract(reference));
}

// ---------------------------------------------------------------------------
// Task scores

nlohmann::json Prf::to_json() const {
  return {{"precision", precision}, {"recall", recall}, {"f1", f1},
          {"precision_undefined", precision_undefined}, {"recall_undefined", recall_undefined},
          {"tp", tp}, {"fp", fp}, {"fn", fn}};
}

Prf task_prf(const std::vector<std::string>& predictions, const std::vector<std::string>& gold,
             const std::string& positive) {
  if (predictions.size() != gold.size())
    throw Error(ErrorCode::kShapeMismatch, "predictions and gold differ in length");
  Prf s;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool p = predictions[i] == positive;
    const bool g = gold[i] == positive;
    if (p && g) ++s.tp;
    else if (p) ++s.fp;
    else if (g) ++s.fn;
  }
  s.precision_undefined = s.tp + s.fp == 0;
  s.recall_undefined = s.tp + s.fn == 0;
  s.precision = s.precision_undefined ? 0.0 : static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
  s.recall = s.recall_undefined ? 0.0 : static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

ConcordanceCounts concordance(const std::vector<double>& risk, const std::vector<double>& time,
                              const std::vector<bool>& event) {
  if (risk.size() != time.size() || risk.size() != event.size())
    throw Error(ErrorCode::kShapeMismatch, "risk, time and event differ in length");
  ConcordanceCounts c;
  const std::size_t n = risk.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!event[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(time[i] < time[j])) continue;
      ++c.comparable;
      if (risk[i] > risk[j]) c.concordant += 1.0;
      else if (risk[i] == risk[j]) c.concordant += 0.5;
    }
  }
  return c;
}

double c_index(const std::vector<double>& risk, const std::vector<double>& time, const std::vector<bool>& event) {
  const auto c = concordance(risk, time, event);
  if (c.comparable == 0) throw Error(ErrorCode::kNoComparablePairs, "no comparable pairs");
  return c.concordant / static_cast<double>(c.comparable);
}

std::optional<double> parse_number(const std::string& text) {
  static const std::regex re(R"([-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?)");
  std::smatch m;
  if (!std::regex_search(text, m, re)) return std::nullopt;
  const double v = std::stod(m.str());
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------------------
// Evaluation

nlohmann::json MetricReport::to_json() const {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [k, v] : tasks) t[k] = v.to_json();
  nlohmann::json s = nlohmann::json::array();
  for (const auto& r : samples) {
    s.push_back({{"slide_id", r.slide_id}, {"question", r.question}, {"reference", r.reference},
                 {"generated", r.generated}, {"log_prob", r.log_prob}, {"truncated", r.truncated}});
  }
  return {
      {"definitions",
       {{"scale", "scores in [0,1]"},
        {"bleu", "single reference, clipped n-gram precision, brevity penalty, order capped at candidate length"},
        {"meteor", "meteor-lite: exact unigram matches only, fmean 10PR/(R+9P), penalty 0.5*(chunks/matches)^3"},
        {"rouge_l", "LCS F-measure, beta 1.2"},
        {"acc", "substitute: token-F1 similarity to the four choices, argmax vs gold"},
        {"fact_ent", "substitute: F1 of lexicon entity sets, both empty = 1"},
        {"c_index", "Harrell; risk = -(number parsed from the generated survival answer)"}}},
      {"bleu1", bleu1},
      {"bleu4", bleu4},
      {"meteor", meteor},
      {"rouge_l", rouge_l},
      {"acc", acc},
      {"closed_evaluated", closed_evaluated},
      {"fact_ent", fact_ent},
      {"tasks", t},
      {"c_index", c_index ? nlohmann::json(*c_index) : nlohmann::json(nullptr)},
      {"c_index_pairs", c_index_pairs},
      {"c_index_skipped", c_index_skipped},
      {"total", total},
      {"evaluated", evaluated},
      {"skipped", skipped},
      {"samples", s}};
}

namespace {

// Label of a free-text answer for a task: the first declared label whose
// tokens occur in the text, else the normalized text.
std::string task_label(const std::string& text, const nlohmann::json& task) {
  const Tokens t = tokenize(text);
  if (task.contains("labels")) {
    for (const auto& l : task.at("labels")) {
      if (contains_seq(t, tokenize(l.get<std::string>()))) return normalize_text(l.get<std::string>());
    }
  }
  return normalize_text(text);
}

}  // namespace

MetricReport evaluate(const Checkpoint& ckpt, const std::vector<QASample>& samples, const BagStore& bags,
                      const EntityLexicon& lex, const EvalOptions& opts) {
  MetricReport rep;
  rep.total = samples.size();
  const auto& cfg = ckpt.params.config;
  std::size_t correct = 0;
  std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> task_labels;
  std::vector<double> risk, time;
  std::vector<bool> event;

  for (const auto& s : samples) {
    const auto bag = bags.find(s.slide_id);
    auto q = encode(s.question, ckpt.vocab, SeqRole::kQuestion).ids;
    if (bag == bags.end() || q.size() > cfg.max_question) {
      ++rep.skipped;
      continue;
    }
    const auto answers = generate_beam(bag->second, q, ckpt.params, ckpt.vocab, opts.beam_width, cfg.max_answer);
    const Answer& top = answers.front();
    ++rep.evaluated;

    const Tokens gen = tokenize(top.text);
    const Tokens ref = tokenize(s.answer);
    rep.bleu1 += bleu(gen, ref, 1);
    rep.bleu4 += bleu(gen, ref, 4);
    rep.meteor += meteor_lite(gen, ref);
    rep.rouge_l += rouge_l(gen, ref);
    rep.fact_ent += fact_ent(top.text, s.answer, lex);

    if (s.subset == Subset::kClosed && s.choices && s.gold_choice) {
      ++rep.closed_evaluated;
      if (closed_acc(top.text, *s.choices, *s.gold_choice)) ++correct;
    }
    if (s.entity_key) {
      for (const auto& [name, task] : lex.tasks().items()) {
        if (task.value("key", name) != *s.entity_key) continue;
        auto& [pred, gold] = task_labels[name];
        pred.push_back(task_label(top.text, task));
        gold.push_back(task_label(s.answer, task));
      }
      if (*s.entity_key == opts.survival_key) {
        const auto g = parse_number(top.text);
        const auto t = parse_number(s.answer);
        if (!g || !t) {
          ++rep.c_index_skipped;
        } else {
          risk.push_back(-*g);
          time.push_back(*t);
          event.push_back(s.event.value_or(true));
        }
      }
    }
    if (opts.keep_samples) {
      rep.samples.push_back(
          {s.slide_id, s.question, s.answer, top.text, top.generation.log_prob, top.generation.truncated});
    }
  }

  if (rep.evaluated > 0) {
    const double n = static_cast<double>(rep.evaluated);
    rep.bleu1 /= n;
    rep.bleu4 /= n;
    rep.meteor /= n;
    rep.rouge_l /= n;
    rep.fact_ent /= n;
  }
  if (rep.closed_evaluated > 0) rep.acc = static_cast<double>(correct) / static_cast<double>(rep.closed_evaluated);
  for (const auto& [name, task] : lex.tasks().items()) {
    const auto it = task_labels.find(name);
    if (it == task_labels.end()) continue;
    rep.tasks[name] = task_prf(it->second.first, it->second.second, normalize_text(task.at("positive").get<std::string>()));
  }
  const auto cc = concordance(risk, time, event);
  rep.c_index_pairs = cc.comparable;
  if (cc.comparable > 0) rep.c_index = cc.concordant / static_cast<double>(cc.comparable);
  return rep;
}

}  // namespace w2t
