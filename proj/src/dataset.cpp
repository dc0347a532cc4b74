#include "w2t/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "w2t/error.hpp"
#include "w2t/io.hpp"
#include "w2t/random.hpp"
#include "w2t/text.hpp"

namespace w2t {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
  for (auto& c : s) {
    if (static_cast<unsigned char>(c) < 128) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return s;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::string subset_name(Subset s) { return s == Subset::kOpen ? "open" : "closed"; }

}  // namespace

// ---------------------------------------------------------------------------
// QASample serialization

nlohmann::json to_json(const QASample& s) {
  nlohmann::json j = {{"slide_id", s.slide_id},
                      {"question", s.question},
                      {"answer", s.answer},
                      {"subset", subset_name(s.subset)}};
  if (s.choices) j["choices"] = *s.choices;
  if (s.gold_choice) j["gold_choice"] = std::string(1, *s.gold_choice);
  if (s.entity_key) j["entity_key"] = *s.entity_key;
  if (s.template_id) j["template_id"] = *s.template_id;
  if (s.event) j["event"] = *s.event;
  return j;
}

QASample sample_from_json(const nlohmann::json& j) {
  try {
    QASample s;
    s.slide_id = j.at("slide_id").get<std::string>();
    s.question = j.at("question").get<std::string>();
    s.answer = j.at("answer").get<std::string>();
    const auto subset = j.at("subset").get<std::string>();
    if (subset == "open") {
      s.subset = Subset::kOpen;
    } else if (subset == "closed") {
      s.subset = Subset::kClosed;
    } else {
      throw Error(ErrorCode::kFormatError, "unknown subset '" + subset + "'");
    }
    if (j.contains("choices")) {
      const auto v = j.at("choices").get<std::vector<std::string>>();
      if (v.size() != 4) throw Error(ErrorCode::kFormatError, "choices must have exactly 4 entries");
      s.choices = std::array<std::string, 4>{v[0], v[1], v[2], v[3]};
    }
    if (j.contains("gold_choice")) {
      const auto g = j.at("gold_choice").get<std::string>();
      if (g.size() != 1) throw Error(ErrorCode::kFormatError, "gold_choice must be one letter");
      s.gold_choice = g[0];
    }
    if (j.contains("entity_key")) s.entity_key = j.at("entity_key").get<std::string>();
    if (j.contains("template_id")) s.template_id = j.at("template_id").get<int>();
    if (j.contains("event")) s.event = j.at("event").get<bool>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("QA sample: ") + e.what());
  }
}

std::vector<QASample> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<QASample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kFormatError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<QASample>& samples) {
  std::string out;
  for (const auto& s : samples) out += to_json(s).dump() + "\n";
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Clinical records and templates

std::vector<ClinicalRecord> parse_clinical_tsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto split_tabs = [](const std::string& l) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto tab = l.find('\t', start);
      cells.push_back(trim(l.substr(start, tab == std::string::npos ? std::string::npos : tab - start)));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    return cells;
  };
  if (!std::getline(in, line)) throw Error(ErrorCode::kFormatError, "clinical TSV has no header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  if (header.empty() || header[0] != "slide_id")
    throw Error(ErrorCode::kFormatError, "clinical TSV must start with a slide_id column");
  std::vector<ClinicalRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() != header.size())
      throw Error(ErrorCode::kFormatError, "clinical TSV line " + std::to_string(lineno) + " has " +
                                               std::to_string(cells.size()) + " cells, header has " +
                                               std::to_string(header.size()));
    ClinicalRecord rec;
    rec.slide_id = cells[0];
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (!cells[i].empty()) rec.values[lower(header[i])] = cells[i];
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ClinicalRecord> read_clinical_tsv(const std::filesystem::path& path) {
  return parse_clinical_tsv(read_file(path));
}

ClinicalSchema ClinicalSchema::default_schema() {
  ClinicalSchema s;
  s.keys = {"her2", "er", "pr", "subtype", "margins", "survival_months"};
  s.banned = {"age", "gender", "race", "ethnicity", "vital_status", "smoking", "menopause"};
  return s;
}

QaTemplate parse_template(const std::string& text) {
  const std::string t = trim(text);
  const auto a = t.find("A:");
  if (t.rfind("Q:", 0) != 0 || a == std::string::npos)
    throw Error(ErrorCode::kFormatError, "template must read 'Q: ... A: ...': " + text);
  QaTemplate out{trim(t.substr(2, a - 2)), trim(t.substr(a + 2))};
  if (out.question.find("[KEY]") == std::string::npos || out.answer.find("[VALUE]") == std::string::npos)
    throw Error(ErrorCode::kFormatError, "template lacks [KEY] or [VALUE]: " + text);
  return out;
}

std::vector<QaTemplate> parse_templates(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::kFormatError, "templates must be a JSON list of strings");
  std::vector<QaTemplate> out;
  for (const auto& t : j) out.push_back(parse_template(t.get<std::string>()));
  return out;
}

std::vector<QaTemplate> load_templates(const std::filesystem::path& path) { return parse_templates(read_json(path)); }

std::string render_question(const QaTemplate& t, const std::string& key) {
  // survival_months reads as "survival months"
  return lower(trim(replace_all(t.question, "[KEY]", replace_all(key, "_", " "))));
}

std::string render_answer(const QaTemplate& t, const std::string& value) {
  std::string a = trim(replace_all(t.answer, "[VALUE]", value));
  while (!a.empty() && a.back() == '.') a.pop_back();
  return lower(trim(a));
}

std::vector<QASample> render_open_pairs(const ClinicalRecord& record, const std::vector<QaTemplate>& templates,
                                        std::uint64_t seed, const ClinicalSchema& schema) {
  if (templates.empty()) throw Error(ErrorCode::kNoTemplates, "no question-answer templates supplied");
  Rng rng(seed ^ fnv1a64(record.slide_id.data(), record.slide_id.size()));
  std::vector<QASample> out;
  for (const auto& key : schema.keys) {
    const auto it = record.values.find(key);
    if (it == record.values.end() || it->second.empty()) continue;
    const auto tid = static_cast<int>(rng.below(templates.size()));
    QASample s;
    s.slide_id = record.slide_id;
    s.question = render_question(templates[static_cast<std::size_t>(tid)], key);
    s.answer = render_answer(templates[static_cast<std::size_t>(tid)], it->second);
    s.subset = Subset::kOpen;
    s.entity_key = key;
    s.template_id = tid;
    if (key == schema.survival_key) {
      const auto ev = record.values.find(schema.event_key);
      if (ev != record.values.end()) {
        const auto v = lower(ev->second);
        s.event = (v == "1" || v == "true" || v == "yes" || v == "dead");
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LLM prompt and response parsing

const char* const kLlmPromptTemplate =
    "Ask 6 questions about the content and generate four options for each question. The output should use "
    "the following template: i:\u2018the question index\u2019 question:\u2018the generate question\u2019 choice: "
    "\u2018A: option content B: option content C: option content D: option content\u2019 answer: The correct "
    "option.";

std::string build_llm_prompt(const std::string& caption) {
  const std::string c = trim(caption);
  if (c.empty()) throw Error(ErrorCode::kPromptError, "caption is empty");
  return std::string(kLlmPromptTemplate) + "\n" + c;
}

std::string OfflineFixtureClient::complete(const LlmRequest& request) {
  const auto path = dir_ / (request.slide_id + ".txt");
  if (!std::filesystem::exists(path))
    throw Error(ErrorCode::kIoError, "no LLM fixture for slide '" + request.slide_id + "'");
  return read_file(path);
}

namespace {

// Curly quotes and backticks become plain apostrophes so the grammar below
// only deals with ASCII.
std::string ascii_quotes(std::string s) {
  for (const char* q : {"\u2018", "\u2019", "\u201c", "\u201d"}) s = replace_all(s, q, "'");
  return s;
}

std::string strip_quotes(std::string_view s) {
  std::string t = trim(s);
  while (!t.empty() && (t.front() == '\'' || t.front() == '"')) t.erase(t.begin());
  while (!t.empty() && (t.back() == '\'' || t.back() == '"')) t.pop_back();
  return trim(t);
}

std::size_t find_ci(const std::string& hay, const std::string& needle, std::size_t from = 0) {
  const std::string h = lower(hay);
  return h.find(needle, from);
}

}  // namespace

ParsedResponse parse_llm_response(const std::string& raw, const std::string& slide_id) {
  const std::string text = ascii_quotes(raw);
  static const std::regex block_start(R"((^|\s)i\s*:\s*'?\s*(\d+)\s*'?)", std::regex::icase);
  std::vector<std::size_t> starts;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), block_start); it != std::sregex_iterator(); ++it)
    starts.push_back(static_cast<std::size_t>(it->position(0) + it->length(1)));

  ParsedResponse out;
  for (std::size_t b = 0; b < starts.size(); ++b) {
    const int block_no = static_cast<int>(b + 1);
    const std::size_t end = b + 1 < starts.size() ? starts[b + 1] : text.size();
    const std::string block = text.substr(starts[b], end - starts[b]);
    auto skip = [&](const std::string& why) { out.skipped.push_back({block_no, why}); };

    if (out.samples.size() == 6) {
      skip("more than 6 blocks");
      continue;
    }
    const auto q = find_ci(block, "question:");
    const auto c = find_ci(block, "choice", q == std::string::npos ? 0 : q);
    const auto a = find_ci(block, "answer:", c == std::string::npos ? 0 : c);
    if (q == std::string::npos || c == std::string::npos || a == std::string::npos) {
      skip("missing question/choice/answer field");
      continue;
    }
    const std::string question = strip_quotes(block.substr(q + 9, c - q - 9));
    std::size_t choice_body = block.find(':', c);
    if (choice_body == std::string::npos || choice_body > a) {
      skip("malformed choice field");
      continue;
    }
    const std::string choices_text = strip_quotes(block.substr(choice_body + 1, a - choice_body - 1));
    const std::string answer_text = strip_quotes(block.substr(a + 7));

    // Option markers "X:" at the start or after whitespace/quote.
    static const std::regex marker(R"((^|[\s'])([A-Ha-h])\s*:)");
    std::vector<std::pair<char, std::size_t>> marks;  // letter, content start
    std::vector<std::size_t> mark_pos;
    for (auto it = std::sregex_iterator(choices_text.begin(), choices_text.end(), marker);
         it != std::sregex_iterator(); ++it) {
      const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>((*it)[2].str()[0])));
      marks.emplace_back(letter, static_cast<std::size_t>(it->position(0) + it->length(0)));
      mark_pos.push_back(static_cast<std::size_t>(it->position(2)));
    }
    bool ok = marks.size() == 4;
    for (std::size_t i = 0; ok && i < 4; ++i) ok = marks[i].first == static_cast<char>('A' + i);
    if (!ok) {
      skip("expected options A, B, C, D in order");
      continue;
    }
    std::array<std::string, 4> options;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t from = marks[i].second;
      const std::size_t to = i + 1 < 4 ? mark_pos[i + 1] : choices_text.size();
      options[i] = strip_quotes(choices_text.substr(from, to - from));
    }

    std::string ans = answer_text;
    while (!ans.empty() && (ans.front() == '(' || ans.front() == '[')) ans.erase(ans.begin());
    if (ans.empty() || !std::isalpha(static_cast<unsigned char>(ans[0])) ||
        (ans.size() > 1 && std::isalpha(static_cast<unsigned char>(ans[1])))) {
      skip("answer is not a single option letter");
      continue;
    }
    const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(ans[0])));
    if (letter < 'A' || letter > 'D') {
      skip(std::string("answer letter '") + letter + "' outside A-D");
      continue;
    }
    if (question.empty()) {
      skip("empty question");
      continue;
    }
    QASample s;
    s.slide_id = slide_id;
    s.question = question;
    s.choices = options;
    s.gold_choice = letter;
    s.answer = options[static_cast<std::size_t>(letter - 'A')];
    s.subset = Subset::kClosed;
    out.samples.push_back(std::move(s));
  }
  if (out.samples.empty())
    throw Error(ErrorCode::kNoValidBlocks, "LLM response for '" + slide_id + "' has no valid question block");
  return out;
}

// ---------------------------------------------------------------------------
// Filtering

bool schema_valid(const QASample& s, std::string* why) {
  auto fail = [&](const char* msg) {
    if (why) *why = msg;
    return false;
  };
  if (s.slide_id.empty()) return fail("missing slide_id");
  if (s.subset == Subset::kClosed) {
    if (!s.choices) return fail("closed pair without choices");
    if (!s.gold_choice) return fail("closed pair without gold letter");
  } else {
    if (!s.entity_key) return fail("open pair without entity_key");
    if (!s.template_id) return fail("open pair without template_id");
  }
  return true;
}

FilterResult filter_pairs(const std::vector<QASample>& samples, const FilterRules& rules) {
  FilterResult out;
  std::set<std::pair<std::string, std::string>> seen;
  const std::set<std::string> banned(rules.banned_keys.begin(), rules.banned_keys.end());
  for (const auto& s : samples) {
    auto reject = [&](const char* rule, std::string detail) {
      out.rejected.push_back({s, rule, std::move(detail)});
    };
    std::string why;
    if (!schema_valid(s, &why)) {
      reject("schema_invalid", why);
      continue;
    }
    if (s.subset == Subset::kClosed) {
      const char g = *s.gold_choice;
      if (g < 'A' || g > 'D') {
        reject("choice_inconsistent", std::string("gold letter '") + g + "'");
        continue;
      }
      const auto& gold = (*s.choices)[static_cast<std::size_t>(g - 'A')];
      if (trim(gold).empty()) {
        reject("choice_inconsistent", std::string("gold option ") + g + " is empty");
        continue;
      }
      if (normalize_text(gold) != normalize_text(s.answer)) {
        reject("choice_inconsistent", "answer text differs from gold option");
        continue;
      }
    }
    if (trim(s.answer).empty()) {
      reject("empty_answer", "answer is empty");
      continue;
    }
    const auto tokens = tokenize(s.question);
    std::string banned_hit;
    if (s.entity_key && banned.count(lower(*s.entity_key))) banned_hit = *s.entity_key;
    for (const auto& t : tokens) {
      if (banned_hit.empty() && banned.count(t)) banned_hit = t;
    }
    if (!banned_hit.empty()) {
      reject("banned_key", "non-inferable index '" + banned_hit + "'");
      continue;
    }
    if (tokens.size() > rules.max_question_tokens) {
      reject("question_too_long", std::to_string(tokens.size()) + " tokens");
      continue;
    }
    if (rules.dedupe_questions && !seen.emplace(s.slide_id, normalize_text(s.question)).second) {
      reject("duplicate_question", "question repeated on slide " + s.slide_id);
      continue;
    }
    out.kept.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

namespace {

std::uint64_t slide_hash(const std::string& id, std::uint64_t seed) {
  std::uint64_t h = fnv1a64(&seed, sizeof(seed));
  h = fnv1a64(id.data(), id.size(), h);
  // fmix64 finalizer spreads FNV's weak low bits.
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return h;
}

std::array<std::size_t, 3> quota_counts(std::size_t n, const std::array<double, 3>& r) {
  const double total = r[0] + r[1] + r[2];
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * r[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[static_cast<std::size_t>(order[k % 3])];
  return counts;
}

}  // namespace

nlohmann::json SplitManifest::to_json() const {
  return {{"train", train},
          {"val", val},
          {"test", test},
          {"pairs", {{"train", train_pairs}, {"val", val_pairs}, {"test", test_pairs}}}};
}

SplitManifest split_slides(std::vector<std::string> ids, std::array<double, 3> ratios, std::uint64_t seed,
                           SplitMode mode) {
  for (double r : ratios) {
    if (!(r >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "split ratios must be non-negative");
  }
  if (ratios[0] + ratios[1] + ratios[2] <= 0.0)
    throw Error(ErrorCode::kInvalidArgument, "split ratios sum to zero");
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  SplitManifest m;
  if (mode == SplitMode::kHashBucket) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    for (const auto& id : ids) {
      const double u = static_cast<double>(slide_hash(id, seed) >> 11) * 0x1.0p-53;
      if (u < ratios[0] / total) {
        m.train.push_back(id);
      } else if (u < (ratios[0] + ratios[1]) / total) {
        m.val.push_back(id);
      } else {
        m.test.push_back(id);
      }
    }
    return m;
  }
  std::vector<std::pair<std::uint64_t, std::string>> ranked;
  for (auto& id : ids) ranked.emplace_back(slide_hash(id, seed), id);
  std::sort(ranked.begin(), ranked.end());
  const auto counts = quota_counts(ranked.size(), ratios);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    auto& dst = i < counts[0] ? m.train : (i < counts[0] + counts[1] ? m.val : m.test);
    dst.push_back(ranked[i].second);
  }
  for (auto* v : {&m.train, &m.val, &m.test}) std::sort(v->begin(), v->end());
  return m;
}

SplitManifest split(const std::vector<QASample>& samples, std::array<double, 3> ratios, std::uint64_t seed,
                    SplitMode mode) {
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.slide_id);
  auto m = split_slides(std::move(ids), ratios, seed, mode);
  const auto parts = apply_split(samples, m);
  m.train_pairs = parts.train.size();
  m.val_pairs = parts.val.size();
  m.test_pairs = parts.test.size();
  return m;
}

SplitSamples apply_split(const std::vector<QASample>& samples, const SplitManifest& m) {
  const std::set<std::string> train(m.train.begin(), m.train.end());
  const std::set<std::string> val(m.val.begin(), m.val.end());
  const std::set<std::string> test(m.test.begin(), m.test.end());
  SplitSamples out;
  for (const auto& s : samples) {
    if (train.count(s.slide_id)) {
      out.train.push_back(s);
    } else if (val.count(s.slide_id)) {
      out.val.push_back(s);
    } else if (test.count(s.slide_id)) {
      out.test.push_back(s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

nlohmann::json Distribution::to_json() const {
  return {{"total", total}, {"counts", counts}, {"frequency", frequency}};
}

nlohmann::json StatsReport::to_json() const {
  return {{"num_samples", num_samples},
          {"num_slides", num_slides},
          {"question_types", question_types.to_json()},
          {"subsets", subsets.to_json()},
          {"entity_coverage", entity_coverage},
          {"answer_letters", answer_letters.to_json()}};
}

std::string question_type(const std::string& question) {
  static const std::set<std::string> yes_no = {"is", "are", "was", "were", "does", "do", "did", "has", "have", "can"};
  const auto tokens = tokenize(question);
  if (tokens.empty()) return "other";
  const auto& first = tokens.front();
  if (first == "what") return "what";
  if (first == "where") return "where";
  if (first == "which") return "which";
  if (yes_no.count(first)) return "yes/no";
  return "other";
}

namespace {

Distribution make_distribution(const std::vector<std::string>& categories, const std::vector<std::string>& labels) {
  Distribution d;
  for (const auto& c : categories) d.counts[c] = 0;
  for (const auto& l : labels) ++d.counts[l];
  d.total = labels.size();
  for (const auto& [k, n] : d.counts)
    d.frequency[k] = d.total ? static_cast<double>(n) / static_cast<double>(d.total) : 0.0;
  return d;
}

}  // namespace

StatsReport stats_report(const std::vector<QASample>& samples, const ClinicalSchema& schema) {
  StatsReport r;
  r.num_samples = samples.size();
  std::set<std::string> slides, open_slides;
  std::map<std::string, std::set<std::string>> key_slides;
  std::vector<std::string> types, subsets, letters;
  for (const auto& s : samples) {
    slides.insert(s.slide_id);
    types.push_back(question_type(s.question));
    subsets.push_back(subset_name(s.subset));
    if (s.subset == Subset::kOpen) {
      open_slides.insert(s.slide_id);
      if (s.entity_key) key_slides[*s.entity_key].insert(s.slide_id);
    } else if (s.gold_choice) {
      letters.emplace_back(1, *s.gold_choice);
    }
  }
  r.num_slides = slides.size();
  r.question_types = make_distribution({"what", "yes/no", "where", "which", "other"}, types);
  r.subsets = make_distribution({"open", "closed"}, subsets);
  r.answer_letters = make_distribution({"A", "B", "C", "D"}, letters);
  std::set<std::string> keys(schema.keys.begin(), schema.keys.end());
  for (const auto& [k, _] : key_slides) keys.insert(k);
  for (const auto& k : keys) {
    const auto it = key_slides.find(k);
    const std::size_t n = it == key_slides.end() ? 0 : it->second.size();
    r.entity_coverage[k] = open_slides.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(open_slides.size());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Corpus construction

BuildResult build_dataset(const std::vector<ClinicalRecord>& records, const std::filesystem::path& captions_dir,
                          const std::vector<QaTemplate>& templates, LlmClient* llm, const BuildOptions& opts) {
  BuildResult b;
  for (const auto& rec : records) {
    auto pairs = render_open_pairs(rec, templates, opts.seed, opts.schema);
    b.open_raw.insert(b.open_raw.end(), pairs.begin(), pairs.end());
  }
  if (llm && !captions_dir.empty() && std::filesystem::is_directory(captions_dir)) {
    std::vector<std::filesystem::path> captions;
    for (const auto& e : std::filesystem::directory_iterator(captions_dir)) {
      if (e.path().extension() == ".txt") captions.push_back(e.path());
    }
    std::sort(captions.begin(), captions.end());
    for (const auto& path : captions) {
      const std::string slide = path.stem().string();
      try {
        const auto prompt = build_llm_prompt(read_file(path));
        auto parsed = parse_llm_response(llm->complete({slide, prompt}), slide);
        for (const auto& d : parsed.skipped)
          b.parse_diagnostics.push_back(slide + " block " + std::to_string(d.block) + ": " + d.reason);
        b.closed_raw.insert(b.closed_raw.end(), parsed.samples.begin(), parsed.samples.end());
      } catch (const Error& e) {
        b.parse_diagnostics.push_back(slide + ": " + e.what());
      }
    }
  }
  std::vector<QASample> all = b.open_raw;
  all.insert(all.end(), b.closed_raw.begin(), b.closed_raw.end());
  b.filtered = filter_pairs(all, opts.rules);
  b.manifest = split(b.filtered.kept, opts.ratios, opts.seed, opts.split_mode);
  b.splits = apply_split(b.filtered.kept, b.manifest);
  b.stats = stats_report(b.filtered.kept, opts.schema);
  b.test_stats = stats_report(b.splits.test, opts.schema);
  return b;
}

void write_build(const BuildResult& b, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  write_jsonl(out / "all.jsonl", b.filtered.kept);
  write_jsonl(out / "train.jsonl", b.splits.train);
  write_jsonl(out / "val.jsonl", b.splits.val);
  write_jsonl(out / "test.jsonl", b.splits.test);
  nlohmann::json rejected = nlohmann::json::array();
  for (const auto& r : b.filtered.rejected)
    rejected.push_back({{"rule", r.rule}, {"detail", r.detail}, {"sample", to_json(r.sample)}});
  write_json(out / "rejected.json", rejected);
  write_json(out / "manifest.json", b.manifest.to_json());
  write_json(out / "stats.json", {{"corpus", b.stats.to_json()},
                                  {"test", b.test_stats.to_json()},
                                  {"parse_diagnostics", b.parse_diagnostics},
                                  {"open_pairs_rendered", b.open_raw.size()},
                                  {"closed_pairs_parsed", b.closed_raw.size()}});
}

std::vector<std::string> vocabulary_corpus(const std::vector<QASample>& samples,
                                           const std::vector<QaTemplate>& templates, const ClinicalSchema& schema) {
  std::vector<std::string> corpus;
  for (const auto& s : samples) {
    corpus.push_back(s.question);
    corpus.push_back(s.answer);
    if (s.choices) corpus.insert(corpus.end(), s.choices->begin(), s.choices->end());
  }
  for (const auto& t : templates) {
    for (const auto& k : schema.keys) corpus.push_back(render_question(t, k));
  }
  return corpus;
}

}  // namespace w2t
