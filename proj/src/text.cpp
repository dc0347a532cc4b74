#include "w2t/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "w2t/error.hpp"
#include "w2t/io.hpp"
#include "w2t/random.hpp"

namespace w2t {

namespace {

constexpr std::string_view kPunct = ".,;:?!()";
const char* const kReservedNames[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      flush();
    } else if (kPunct.find(ch) != std::string_view::npos) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(uc < 128 ? static_cast<char>(std::tolower(uc)) : ch);
    }
  }
  flush();
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& t : tokenize(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Vocab::Vocab() {
  for (const char* name : kReservedNames) add(name);
}

void Vocab::add(std::string token) {
  index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(const std::vector<std::string>& corpus, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& text : corpus) {
    for (auto& t : tokenize(text)) ++counts[t];
  }
  std::vector<std::pair<std::string, int>> ranked;
  for (auto& [tok, n] : counts) {
    const bool reserved = std::find(std::begin(kReservedNames), std::end(kReservedNames), tok) !=
                          std::end(kReservedNames);
    if (n >= min_count && !reserved) ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (auto& [tok, n] : ranked) v.add(tok);
  return v;
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  try {
    const auto& reserved = j.at("reserved");
    for (TokenId i = 0; i < kNumReserved; ++i) {
      if (reserved.at(kReservedNames[i]).get<TokenId>() != i)
        throw Error(ErrorCode::kFormatError, "reserved token ids must be fixed");
    }
    Vocab v;
    for (const auto& t : j.at("tokens")) {
      auto tok = t.get<std::string>();
      if (v.index_.count(tok)) throw Error(ErrorCode::kFormatError, "duplicate token '" + tok + "'");
      v.add(std::move(tok));
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("vocab: ") + e.what());
  }
}

Vocab Vocab::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

nlohmann::json Vocab::to_json() const {
  nlohmann::json reserved = nlohmann::json::object();
  for (TokenId i = 0; i < kNumReserved; ++i) reserved[kReservedNames[i]] = i;
  return {{"reserved", reserved},
          {"tokens", std::vector<std::string>(tokens_.begin() + kNumReserved, tokens_.end())}};
}

void Vocab::save(const std::filesystem::path& path) const { write_json(path, to_json()); }

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw Error(ErrorCode::kIndexOutOfRange, "token id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = fnv1a64(nullptr, 0);
  for (const auto& t : tokens_) {
    h = fnv1a64(t.data(), t.size(), h);
    h = fnv1a64("\n", 1, h);
  }
  return h;
}

TokenSeq encode(std::string_view text, const Vocab& vocab, SeqRole role) {
  TokenSeq seq;
  seq.role = role;
  if (role == SeqRole::kDecoderInput) seq.ids.push_back(kBos);
  for (const auto& t : tokenize(text)) seq.ids.push_back(vocab.id(t));
  if (role == SeqRole::kAnswer) seq.ids.push_back(kEos);
  return seq;
}

std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

std::string decode(const TokenSeq& seq, const Vocab& vocab) { return decode(seq.ids, vocab); }

}  // namespace w2t
