#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dietcap {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kReservedIds = 4;

// Token ids of one caption, BOS first and EOS last. `truncated` records that
// decoding hit its length limit and the EOS was forced.
struct CaptionTokens {
  std::vector<int> ids;
  bool truncated = false;

  // Ids strictly between BOS and EOS.
  std::vector<int> words() const;
  bool operator==(const CaptionTokens&) const = default;
};

class Vocabulary {
 public:
  Vocabulary();
  // `words` excludes the reserved tokens; the first word gets id kReservedIds.
  explicit Vocabulary(std::vector<std::string> words);

  // Frequency-sorted (descending, ties broken lexicographically) word list of
  // the tokenized captions.
  static Vocabulary build(const std::vector<std::string>& captions);

  // One token per line, line index + kReservedIds = id.
  static Vocabulary from_text(std::string_view text);
  static Vocabulary load(const std::filesystem::path& path);
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::optional<int> find(std::string_view word) const;
  const std::string& token(int id) const;
  std::vector<std::string> words() const;

  // strict: an out-of-vocabulary word raises ErrorCode::Data naming it;
  // otherwise it maps to UNK. More than max_words words raises ErrorCode::Length.
  CaptionTokens encode(std::string_view caption, std::size_t max_words, bool strict) const;
  std::string decode(const CaptionTokens& tokens) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace dietcap
