#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "w2t/dataset.hpp"
#include "w2t/model.hpp"
#include "w2t/trainer.hpp"

namespace w2t {

using Tokens = std::vector<std::string>;

// Clipped n-gram precision, geometric mean, brevity penalty. When the
// candidate is shorter than n_max the order drops to the candidate length
// so that short identical strings still score 1.
double bleu(const Tokens& candidate, const Tokens& reference, int n_max);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
double rouge_l(const Tokens& candidate, const Tokens& reference, double beta = 1.2);

struct MeteorDetail {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f_mean = 0.0;
  double penalty = 0.0;
  double score = 0.0;
};

// Exact-match unigram alignment: maximum matches, then fewest chunks.
MeteorDetail meteor_detail(const Tokens& candidate, const Tokens& reference);
double meteor_lite(const Tokens& candidate, const Tokens& reference);

// Multiset token overlap F1.
double token_f1(const Tokens& a, const Tokens& b);

// Index of the most similar choice, ties to the smallest index.
int closest_choice(const std::string& generated, const std::array<std::string, 4>& choices);
bool closed_acc(const std::string& generated, const std::array<std::string, 4>& choices, char gold);

class EntityLexicon {
 public:
  // {"entities": {"her2": ["her2", "her-2", "erbb2"], ...}, "tasks": {...}}
  static EntityLexicon from_json(const nlohmann::json& j);
  static EntityLexicon load(const std::filesystem::path& path);

  // Canonical entity names found in the text, longest alias first.
  std::set<std::string> extract(const std::string& text) const;
  const std::map<std::string, std::vector<Tokens>>& entities() const { return aliases_; }
  const nlohmann::json& tasks() const { return tasks_; }

 private:
  std::map<std::string, std::vector<Tokens>> aliases_;
  nlohmann::json tasks_ = nlohmann::json::object();
};

double set_f1(const std::set<std::string>& predicted, const std::set<std::string>& reference);
double fact_ent(const std::string& generated, const std::string& reference, const EntityLexicon& lex);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // no predicted positives
  bool recall_undefined = false;     // no gold positives
  std::size_t tp = 0, fp = 0, fn = 0;

  nlohmann::json to_json() const;
};

Prf task_prf(const std::vector<std::string>& predictions, const std::vector<std::string>& gold,
             const std::string& positive);

struct ConcordanceCounts {
  double concordant = 0.0;  // ties in risk add 0.5
  std::size_t comparable = 0;
};

ConcordanceCounts concordance(const std::vector<double>& risk, const std::vector<double>& time,
                              const std::vector<bool>& event);
// Harrell's c-index; throws NoComparablePairs.
double c_index(const std::vector<double>& risk, const std::vector<double>& time, const std::vector<bool>& event);

// First number in the text, if any.
std::optional<double> parse_number(const std::string& text);

// ---------------------------------------------------------------------------
// Evaluation over a QA split

struct SampleResult {
  std::string slide_id;
  std::string question;
  std::string reference;
  std::string generated;
  double log_prob = 0.0;
  bool truncated = false;
};

struct MetricReport {
  double bleu1 = 0.0, bleu4 = 0.0, meteor = 0.0, rouge_l = 0.0;
  double acc = 0.0;
  double fact_ent = 0.0;
  std::size_t closed_evaluated = 0;
  std::map<std::string, Prf> tasks;
  std::optional<double> c_index;
  std::size_t c_index_pairs = 0;
  std::size_t c_index_skipped = 0;  // survival answers without a number
  std::size_t total = 0, evaluated = 0, skipped = 0;
  std::vector<SampleResult> samples;

  nlohmann::json to_json() const;
};

struct EvalOptions {
  std::size_t beam_width = 3;
  std::string survival_key = "survival_months";
  bool keep_samples = true;
};

MetricReport evaluate(const Checkpoint& ckpt, const std::vector<QASample>& samples, const BagStore& bags,
                      const EntityLexicon& lex, const EvalOptions& opts = {});

}  // namespace w2t
