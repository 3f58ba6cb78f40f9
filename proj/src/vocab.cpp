#include "dietcap/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "dietcap/error.hpp"
#include "dietcap/text.hpp"

namespace dietcap {

namespace {

const std::vector<std::string> kReservedTokens = {"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

std::vector<int> CaptionTokens::words() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i == 0 && ids[i] == kBosId) continue;
    if (i + 1 == ids.size() && ids[i] == kEosId) continue;
    out.push_back(ids[i]);
  }
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> words) : tokens_(kReservedTokens) {
  for (auto& w : words) {
    if (w.empty() || w.find_first_of(" \t\r\n") != std::string::npos) {
      fail(ErrorCode::Data, "vocabulary token '" + w + "' is empty or contains whitespace");
    }
    if (index_.count(w) || std::find(kReservedTokens.begin(), kReservedTokens.end(), w) != kReservedTokens.end()) {
      fail(ErrorCode::Data, "duplicate vocabulary token '" + w + "'");
    }
    index_.emplace(w, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(w));
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& captions) {
  std::map<std::string, std::size_t> counts;
  for (const auto& c : captions) {
    for (auto& t : tokenize(c)) ++counts[t];
  }
  if (counts.empty()) fail(ErrorCode::Usage, "cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(ordered.size());
  for (auto& [w, n] : ordered) words.push_back(w);
  return Vocabulary(std::move(words));
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    words.push_back(line);
  }
  return Vocabulary(std::move(words));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open vocabulary file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (std::size_t i = kReservedIds; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write vocabulary file " + path.string());
  out << to_text();
}

std::optional<int> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    fail(ErrorCode::Index, "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<std::string> Vocabulary::words() const {
  return {tokens_.begin() + kReservedIds, tokens_.end()};
}

CaptionTokens Vocabulary::encode(std::string_view caption, std::size_t max_words, bool strict) const {
  const auto words = tokenize(caption);
  if (words.size() > max_words) {
    fail(ErrorCode::Length, "caption has " + std::to_string(words.size()) + " words, limit is " +
                                std::to_string(max_words) + ": '" + std::string(caption) + "'");
  }
  CaptionTokens out;
  out.ids.push_back(kBosId);
  for (const auto& w : words) {
    auto id = find(w);
    if (!id) {
      if (strict) fail(ErrorCode::Data, "out-of-vocabulary token '" + w + "' in caption '" + std::string(caption) + "'");
      out.ids.push_back(kUnkId);
    } else {
      out.ids.push_back(*id);
    }
  }
  out.ids.push_back(kEosId);
  return out;
}

std::string Vocabulary::decode(const CaptionTokens& tokens) const {
  std::vector<std::string> words;
  for (int id : tokens.words()) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    words.push_back(token(id));
  }
  return join_tokens(words);
}

}  // namespace dietcap
