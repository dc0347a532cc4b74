#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace w2t {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kNumReserved = 4;

// Lowercases ASCII, splits on whitespace and emits each of . , ; : ? ! ( )
// as its own token.
std::vector<std::string> tokenize(std::string_view text);

// Tokens joined by single spaces.
std::string normalize_text(std::string_view text);

class Vocab {
 public:
  Vocab();

  static Vocab build(const std::vector<std::string>& corpus, int min_count);
  static Vocab from_json(const nlohmann::json& j);
  static Vocab load(const std::filesystem::path& path);

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::uint64_t hash() const;

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

enum class SeqRole { kQuestion, kAnswer, kDecoderInput };

struct TokenSeq {
  std::vector<TokenId> ids;
  SeqRole role = SeqRole::kQuestion;
};

// Answers receive a trailing EOS; decoder inputs a leading BOS.
TokenSeq encode(std::string_view text, const Vocab& vocab, SeqRole role);

// Skips PAD/BOS and stops at the first EOS.
std::string decode(const TokenSeq& seq, const Vocab& vocab);
std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab);

}  // namespace w2t
