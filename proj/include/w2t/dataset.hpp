#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace w2t {

enum class Subset { kOpen, kClosed };

struct QASample {
  std::string slide_id;
  std::string question;
  std::string answer;
  std::optional<std::array<std::string, 4>> choices;
  std::optional<char> gold_choice;  // 'A'..'D'
  std::optional<std::string> entity_key;
  Subset subset = Subset::kOpen;
  std::optional<int> template_id;
  std::optional<bool> event;  // survival pairs: whether death was observed

  bool operator==(const QASample&) const = default;
};

nlohmann::json to_json(const QASample& s);
QASample sample_from_json(const nlohmann::json& j);
std::vector<QASample> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<QASample>& samples);

struct ClinicalRecord {
  std::string slide_id;
  std::map<std::string, std::string> values;
};

// First column is slide_id; empty cells are treated as missing values.
std::vector<ClinicalRecord> read_clinical_tsv(const std::filesystem::path& path);
std::vector<ClinicalRecord> parse_clinical_tsv(const std::string& text);

struct ClinicalSchema {
  std::vector<std::string> keys;    // inferable from the slide, in render order
  std::vector<std::string> banned;  // clinical indexes that cannot be read off a slide
  std::string survival_key = "survival_months";
  std::string event_key = "event";

  static ClinicalSchema default_schema();
};

// "Q: <question with [KEY]> A: <answer with [VALUE]>"
struct QaTemplate {
  std::string question;
  std::string answer;
};

QaTemplate parse_template(const std::string& text);
std::vector<QaTemplate> parse_templates(const nlohmann::json& j);
std::vector<QaTemplate> load_templates(const std::filesystem::path& path);

// Lowercased, trimmed surface forms.
std::string render_question(const QaTemplate& t, const std::string& key);
std::string render_answer(const QaTemplate& t, const std::string& value);

std::vector<QASample> render_open_pairs(const ClinicalRecord& record, const std::vector<QaTemplate>& templates,
                                        std::uint64_t seed,
                                        const ClinicalSchema& schema = ClinicalSchema::default_schema());

// ---------------------------------------------------------------------------
// Close-ended pairs through an LLM

extern const char* const kLlmPromptTemplate;

std::string build_llm_prompt(const std::string& caption);

struct LlmRequest {
  std::string slide_id;
  std::string prompt;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const LlmRequest& request) = 0;
};

// Reads <dir>/<slide_id>.txt as the canned response.
class OfflineFixtureClient : public LlmClient {
 public:
  explicit OfflineFixtureClient(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::string complete(const LlmRequest& request) override;

 private:
  std::filesystem::path dir_;
};

// OpenAI-style chat-completions endpoint; the key is read from an
// environment variable at call time.
class HttpLlmClient : public LlmClient {
 public:
  struct Options {
    std::string endpoint;  // e.g. http://host:port/v1/chat/completions
    std::string model = "gpt-3.5-turbo";
    std::string api_key_env = "W2T_LLM_API_KEY";
    int timeout_s = 60;
  };
  explicit HttpLlmClient(Options opts) : opts_(std::move(opts)) {}
  std::string complete(const LlmRequest& request) override;

 private:
  Options opts_;
};

struct BlockDiagnostic {
  int block = 0;  // 1-based position in the response
  std::string reason;
};

struct ParsedResponse {
  std::vector<QASample> samples;
  std::vector<BlockDiagnostic> skipped;
};

// Throws NoValidBlocks when nothing parses.
ParsedResponse parse_llm_response(const std::string& text, const std::string& slide_id = "");

// ---------------------------------------------------------------------------
// Filtering, splitting, statistics

struct FilterRules {
  std::vector<std::string> banned_keys = ClinicalSchema::default_schema().banned;
  std::size_t max_question_tokens = 24;
  bool dedupe_questions = true;
};

struct Rejection {
  QASample sample;
  std::string rule;  // schema_invalid | choice_inconsistent | empty_answer | banned_key |
                     // question_too_long | duplicate_question
  std::string detail;
};

struct FilterResult {
  std::vector<QASample> kept;
  std::vector<Rejection> rejected;
};

FilterResult filter_pairs(const std::vector<QASample>& samples, const FilterRules& rules = {});

// Schema validity of one sample: closed pairs carry 4 choices and a gold
// letter, open pairs an entity key and a template id.
bool schema_valid(const QASample& s, std::string* why = nullptr);

enum class SplitMode {
  kQuota,       // slides ranked by seeded hash, exact largest-remainder counts
  kHashBucket,  // each slide's seeded hash falls into a ratio bucket
};

struct SplitManifest {
  std::vector<std::string> train, val, test;
  std::size_t train_pairs = 0, val_pairs = 0, test_pairs = 0;

  nlohmann::json to_json() const;
};

inline constexpr std::array<double, 3> kDefaultSplitRatios{804.0, 87.0, 86.0};

SplitManifest split(const std::vector<QASample>& samples, std::array<double, 3> ratios = kDefaultSplitRatios,
                    std::uint64_t seed = 7, SplitMode mode = SplitMode::kQuota);
SplitManifest split_slides(std::vector<std::string> slide_ids, std::array<double, 3> ratios = kDefaultSplitRatios,
                           std::uint64_t seed = 7, SplitMode mode = SplitMode::kQuota);

struct SplitSamples {
  std::vector<QASample> train, val, test;
};
SplitSamples apply_split(const std::vector<QASample>& samples, const SplitManifest& manifest);

struct Distribution {
  std::map<std::string, std::size_t> counts;
  std::map<std::string, double> frequency;  // sums to 1 unless total is 0
  std::size_t total = 0;

  nlohmann::json to_json() const;
};

struct StatsReport {
  std::size_t num_samples = 0;
  std::size_t num_slides = 0;
  Distribution question_types;  // what | yes/no | where | which | other
  Distribution subsets;         // open | closed
  std::map<std::string, double> entity_coverage;  // over slides with open pairs
  Distribution answer_letters;  // closed pairs only, A..D

  nlohmann::json to_json() const;
};

std::string question_type(const std::string& question);
StatsReport stats_report(const std::vector<QASample>& samples,
                         const ClinicalSchema& schema = ClinicalSchema::default_schema());

// Text the vocabulary is built from: questions, answers, choices, plus every
// template rendered with every schema key so resampled questions stay in
// vocabulary.
std::vector<std::string> vocabulary_corpus(const std::vector<QASample>& samples,
                                           const std::vector<QaTemplate>& templates,
                                           const ClinicalSchema& schema = ClinicalSchema::default_schema());

// ---------------------------------------------------------------------------
// End-to-end corpus construction

struct BuildOptions {
  std::uint64_t seed = 7;
  FilterRules rules;
  std::array<double, 3> ratios = kDefaultSplitRatios;
  SplitMode split_mode = SplitMode::kQuota;
  ClinicalSchema schema = ClinicalSchema::default_schema();
};

struct BuildResult {
  std::vector<QASample> open_raw;
  std::vector<QASample> closed_raw;
  std::vector<std::string> parse_diagnostics;
  FilterResult filtered;
  SplitManifest manifest;
  SplitSamples splits;
  StatsReport stats;
  StatsReport test_stats;
};

// Captions are <captions_dir>/<slide_id>.txt; missing directory means no
// close-ended pairs.
BuildResult build_dataset(const std::vector<ClinicalRecord>& records, const std::filesystem::path& captions_dir,
                          const std::vector<QaTemplate>& templates, LlmClient* llm, const BuildOptions& opts);

void write_build(const BuildResult& build, const std::filesystem::path& out_dir);

}  // namespace w2t
