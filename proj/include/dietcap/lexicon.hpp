#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dietcap {

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  bool operator==(const Rational& o) const { return num * o.den == o.num * den; }
};

// nullopt marks an unquantified phrase ("not much").
using Fraction = std::optional<Rational>;

// Parses "3/4", "0", "1". Throws ErrorCode::Config on anything else.
Rational parse_rational(std::string_view text);

struct PortionMatch {
  std::string phrase;      // canonical text, e.g. "a half bowl" or "a 3/4 bowl"
  std::size_t start = 0;   // token offset in the caption
  std::size_t length = 0;  // tokens consumed
  Fraction fraction;
  // 1-based container ordinal from a preceding "first"/"second"/"third";
  // 0 when the caption names no container.
  int container = 0;
};

struct ParsedTerms {
  std::vector<PortionMatch> portion_matches;  // caption order
  std::vector<std::string> portions;          // matched phrases, caption order (multiset)
  std::set<std::string> foods;
  std::set<std::string> actions;  // lemmas
  std::vector<double> fractions;  // values of the quantified portions, caption order

  bool operator==(const ParsedTerms& o) const {
    return portions == o.portions && foods == o.foods && actions == o.actions && fractions == o.fractions;
  }
};

enum class TermCategory { Portion, Food, Action };
std::string_view category_name(TermCategory c);
TermCategory parse_category(std::string_view name);

// Controlled vocabulary of portion phrases, foods and action lemmas together
// with the portion-to-fraction table. Immutable once constructed.
//
// File format, UTF-8, '#' starts a comment:
//   [portions]   one phrase per line
//   [foods]      one term per line
//   [actions]    lemma = inflection, inflection, ...
//   [fractions]  phrase = a/b | integer | unquantified
class Lexicon {
 public:
  // Validates: lowercase entries, no phrase in two categories, every portion
  // has exactly one fraction entry. Violations raise ErrorCode::Config.
  Lexicon(std::vector<std::string> portions, std::vector<std::string> foods,
          std::vector<std::pair<std::string, std::vector<std::string>>> actions, std::map<std::string, Fraction> fractions);

  static const Lexicon& default_lexicon();
  static std::string_view default_text();
  static Lexicon from_text(std::string_view text);
  static Lexicon load(const std::filesystem::path& path);
  std::string to_text() const;

  const std::vector<std::string>& portions() const { return portions_; }
  const std::vector<std::string>& foods() const { return foods_; }
  const std::vector<std::pair<std::string, std::vector<std::string>>>& actions() const { return actions_; }

  // Leftmost-longest scan. Portions and foods are matched per category so no
  // token is used by two matches of the same category; a numeric "a/b" token,
  // optionally preceded by "a" and followed by a container noun, counts as a
  // quantified portion. Actions match any listed inflection and report the lemma.
  ParsedTerms parse(std::string_view caption) const;

  // Value of a lexicon phrase or of an "a/b" pattern. Throws ErrorCode::Lookup.
  Fraction portion_fraction(std::string_view phrase) const;

 private:
  struct Phrase {
    std::vector<std::string> tokens;
    std::string text;
  };
  std::size_t fraction_pattern_length(const std::vector<std::string>& tokens, std::size_t at,
                                       Rational* value) const;

  std::vector<std::string> portions_;
  std::vector<std::string> foods_;
  std::vector<std::pair<std::string, std::vector<std::string>>> actions_;
  std::map<std::string, Fraction> fractions_;

  std::vector<Phrase> portion_phrases_;
  std::vector<Phrase> food_phrases_;
  std::map<std::string, std::string> inflection_to_lemma_;
};

struct AccuracyResult {
  double rate = 0.0;
  std::size_t included = 0;  // pairs with a nonempty ground-truth term set
  std::size_t excluded = 0;  // pairs skipped because the ground truth has no term
};

// Mean over pairs of |gt ∩ gen| / |gt| for one category, using term sets.
// Pairs whose ground truth has no term in the category are excluded; if all
// are excluded the rate is undefined and ErrorCode::UndefinedRate is raised.
// Lists of different length raise ErrorCode::Usage.
AccuracyResult term_accuracy(const std::vector<std::string>& gt, const std::vector<std::string>& gen,
                             TermCategory category, const Lexicon& lexicon);

std::set<std::string> category_terms(const ParsedTerms& parsed, TermCategory category);

}  // namespace dietcap
