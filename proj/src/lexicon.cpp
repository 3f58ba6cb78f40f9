#include "dietcap/lexicon.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dietcap/error.hpp"
#include "dietcap/text.hpp"

namespace dietcap {
namespace {

constexpr std::string_view kDefaultLexicon = R"([portions]
half empty
a bowl
a half bowl
there isn't much
almost empty
not much
small
2 bowls
a plate
a slice
a pot
a cup
less than half
more than half
empty
full
not many
almost full

[foods]
fish
okra
meat
soup
flour
water
akple
stew
kenkey
banana
watermelon
green
jollof
roasted corn
corn
plantain
tea
bread
rice
tomato
vegetable
potato
onion
egg
banku
fufu
pineapple
porridge
avocado
chicken

[actions]
breastfeed = breastfeeds, breastfeeding, breastfed
buy = buys, buying, bought
process = processes, processing, processed
cut = cuts, cutting
cook = cooks, cooking, cooked
take = takes, taking, took, taken
add = adds, adding, added
make = makes, making, made
stir = stirs, stirring, stirred
have = has, having, had
drink = drinks, drinking, drank, drunk
share = shares, sharing, shared
clean = cleans, cleaning, cleaned
play = plays, playing, played
eat = eats, eating, ate, eaten
select = selects, selecting, selected
prepare = prepares, preparing, prepared
put = puts, putting
sit = sits, sitting, sat
scoop = scoops, scooping, scooped
hold = holds, holding, held
mix = mixes, mixing, mixed
package = packages, packaging, packaged
roast = roasts, roasting, roasted
peel = peels, peeling, peeled
pour = pours, pouring, poured
ground = grounds, grounding, grounded

[fractions]
half empty = 1/2
a bowl = 1
a half bowl = 1/2
there isn't much = unquantified
almost empty = 1/10
not much = unquantified
small = unquantified
2 bowls = 2
a plate = 1
a slice = unquantified
a pot = 1
a cup = 1
less than half = 1/3
more than half = 2/3
empty = 0
full = 1
not many = unquantified
almost full = 9/10
)";

const std::set<std::string, std::less<>> kContainerNouns = {"bowl", "bowls", "plate", "plates",
                                                             "cup",  "cups",  "pot",   "pots"};

int ordinal_of(std::string_view token) {
  if (token == "first") return 1;
  if (token == "second") return 2;
  if (token == "third") return 3;
  return 0;
}

bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && out >= 0;
}

// "a/b" with b > 0, both plain non-negative integers.
bool numeric_fraction(std::string_view token, Rational& out) {
  const auto slash = token.find('/');
  if (slash == std::string_view::npos || token.find('/', slash + 1) != std::string_view::npos) return false;
  std::int64_t n = 0, d = 0;
  if (!parse_int(token.substr(0, slash), n) || !parse_int(token.substr(slash + 1), d) || d == 0) return false;
  out = {n, d};
  return true;
}

bool is_lowercase(std::string_view s) {
  return std::none_of(s.begin(), s.end(), [](unsigned char c) { return c >= 'A' && c <= 'Z'; });
}

std::vector<std::string> split_commas(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fraction_text(const Fraction& f) { return f ? f->str() : std::string("unquantified"); }

}  // namespace

std::string Rational::str() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

Rational parse_rational(std::string_view text) {
  const auto t = trim(text);
  Rational r;
  if (numeric_fraction(t, r)) return r;
  std::int64_t n = 0;
  if (parse_int(t, n)) return {n, 1};
  fail(ErrorCode::Config, "not a non-negative rational: '" + t + "'");
}

std::string_view category_name(TermCategory c) {
  switch (c) {
    case TermCategory::Portion: return "portion";
    case TermCategory::Food: return "food";
    case TermCategory::Action: return "action";
  }
  return "portion";
}

TermCategory parse_category(std::string_view name) {
  if (name == "portion" || name == "portions") return TermCategory::Portion;
  if (name == "food" || name == "foods") return TermCategory::Food;
  if (name == "action" || name == "actions") return TermCategory::Action;
  fail(ErrorCode::Usage, "unknown term category '" + std::string(name) + "' (expected portion, food or action)");
}

Lexicon::Lexicon(std::vector<std::string> portions, std::vector<std::string> foods,
                 std::vector<std::pair<std::string, std::vector<std::string>>> actions,
                 std::map<std::string, Fraction> fractions)
    : portions_(std::move(portions)), foods_(std::move(foods)), actions_(std::move(actions)),
      fractions_(std::move(fractions)) {
  std::map<std::string, std::string> owner;
  auto claim = [&](const std::string& phrase, const std::string& category) {
    if (phrase.empty()) fail(ErrorCode::Config, "lexicon: empty " + category + " entry");
    if (!is_lowercase(phrase)) fail(ErrorCode::Config, "lexicon: '" + phrase + "' is not lowercase");
    if (join_tokens(tokenize(phrase)) != phrase) {
      fail(ErrorCode::Config, "lexicon: '" + phrase + "' does not survive tokenization unchanged");
    }
    auto [it, inserted] = owner.emplace(phrase, category);
    if (!inserted) fail(ErrorCode::Config, "lexicon: '" + phrase + "' listed under both " + it->second + " and " + category);
  };
  for (const auto& p : portions_) {
    claim(p, "portions");
    portion_phrases_.push_back({tokenize(p), p});
    if (!fractions_.contains(p)) fail(ErrorCode::Config, "lexicon: portion '" + p + "' has no fraction entry");
  }
  for (const auto& [phrase, value] : fractions_) {
    if (std::find(portions_.begin(), portions_.end(), phrase) == portions_.end()) {
      fail(ErrorCode::Config, "lexicon: fraction entry '" + phrase + "' is not a portion phrase");
    }
    if (value && (value->den <= 0 || value->num < 0)) fail(ErrorCode::Config, "lexicon: negative fraction for '" + phrase + "'");
  }
  for (const auto& f : foods_) {
    claim(f, "foods");
    food_phrases_.push_back({tokenize(f), f});
  }
  for (const auto& [lemma, forms] : actions_) {
    claim(lemma, "actions");
    inflection_to_lemma_[lemma] = lemma;
    for (const auto& form : forms) {
      if (form.empty() || !is_lowercase(form) || tokenize(form).size() != 1) {
        fail(ErrorCode::Config, "lexicon: bad inflection '" + form + "' of '" + lemma + "'");
      }
      auto [it, inserted] = inflection_to_lemma_.emplace(form, lemma);
      if (!inserted && it->second != lemma) {
        fail(ErrorCode::Config, "lexicon: inflection '" + form + "' belongs to both " + it->second + " and " + lemma);
      }
    }
  }
}

std::string_view Lexicon::default_text() { return kDefaultLexicon; }

const Lexicon& Lexicon::default_lexicon() {
  static const Lexicon lexicon = from_text(kDefaultLexicon);
  return lexicon;
}

Lexicon Lexicon::from_text(std::string_view text) {
  std::vector<std::string> portions, foods;
  std::vector<std::pair<std::string, std::vector<std::string>>> actions;
  std::map<std::string, Fraction> fractions;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? std::string_view(raw) : std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto where = "lexicon line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorCode::Config, where + "unterminated section header");
      section = line.substr(1, line.size() - 2);
      if (section != "portions" && section != "foods" && section != "actions" && section != "fractions") {
        fail(ErrorCode::Config, where + "unknown section [" + section + "]");
      }
      continue;
    }
    if (section.empty()) fail(ErrorCode::Config, where + "entry outside any section");
    const auto eq = line.find('=');
    if (section == "portions" || section == "foods") {
      if (eq != std::string::npos) fail(ErrorCode::Config, where + "unexpected '=' in [" + section + "]");
      (section == "portions" ? portions : foods).push_back(line);
      continue;
    }
    if (eq == std::string::npos) fail(ErrorCode::Config, where + "expected 'key = value' in [" + section + "]");
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (section == "actions") {
      actions.emplace_back(key, split_commas(value));
    } else {
      if (fractions.contains(key)) fail(ErrorCode::Config, where + "duplicate fraction entry '" + key + "'");
      fractions[key] = value == "unquantified" ? Fraction{} : Fraction{parse_rational(value)};
    }
  }
  return Lexicon(std::move(portions), std::move(foods), std::move(actions), std::move(fractions));
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open lexicon " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string Lexicon::to_text() const {
  std::string out = "[portions]\n";
  for (const auto& p : portions_) out += p + "\n";
  out += "\n[foods]\n";
  for (const auto& f : foods_) out += f + "\n";
  out += "\n[actions]\n";
  for (const auto& [lemma, forms] : actions_) out += lemma + " = " + join_tokens(forms, ", ") + "\n";
  out += "\n[fractions]\n";
  for (const auto& p : portions_) out += p + " = " + fraction_text(fractions_.at(p)) + "\n";
  return out;
}

std::size_t Lexicon::fraction_pattern_length(const std::vector<std::string>& tokens, std::size_t at,
                                             Rational* value) const {
  std::size_t j = at;
  if (j < tokens.size() && tokens[j] == "a") ++j;
  Rational r;
  if (j >= tokens.size() || !numeric_fraction(tokens[j], r)) return 0;
  ++j;
  if (j < tokens.size() && kContainerNouns.contains(tokens[j])) ++j;
  if (value) *value = r;
  return j - at;
}

namespace {

bool matches_at(const std::vector<std::string>& tokens, std::size_t at, const std::vector<std::string>& phrase,
                bool allow_plural) {
  if (at + phrase.size() > tokens.size()) return false;
  for (std::size_t k = 0; k < phrase.size(); ++k) {
    const auto& tok = tokens[at + k];
    if (tok == phrase[k]) continue;
    const bool last = k + 1 == phrase.size();
    if (allow_plural && last && (tok == phrase[k] + "s" || tok == phrase[k] + "es")) continue;
    return false;
  }
  return true;
}

}  // namespace

ParsedTerms Lexicon::parse(std::string_view caption) const {
  const auto tokens = tokenize(caption);
  ParsedTerms out;

  std::vector<int> ordinal_before(tokens.size() + 1, 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int o = ordinal_of(tokens[i]);
    ordinal_before[i + 1] = o ? o : ordinal_before[i];
  }

  for (std::size_t i = 0; i < tokens.size();) {
    std::size_t best = 0;
    const Phrase* best_phrase = nullptr;
    for (const auto& p : portion_phrases_) {
      if (p.tokens.size() > best && matches_at(tokens, i, p.tokens, false)) {
        best = p.tokens.size();
        best_phrase = &p;
      }
    }
    Rational r;
    const auto pattern = fraction_pattern_length(tokens, i, &r);
    if (pattern == 0 && best == 0) {
      ++i;
      continue;
    }
    PortionMatch m;
    m.start = i;
    m.container = ordinal_before[i];
    if (pattern > best) {
      m.length = pattern;
      m.phrase = join_tokens(std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + pattern)));
      m.fraction = r;
    } else {
      m.length = best;
      m.phrase = best_phrase->text;
      m.fraction = fractions_.at(best_phrase->text);
    }
    out.portions.push_back(m.phrase);
    if (m.fraction) out.fractions.push_back(m.fraction->value());
    out.portion_matches.push_back(std::move(m));
    i += out.portion_matches.back().length;
  }

  for (std::size_t i = 0; i < tokens.size();) {
    std::size_t best = 0;
    const Phrase* best_phrase = nullptr;
    for (const auto& p : food_phrases_) {
      if (p.tokens.size() > best && matches_at(tokens, i, p.tokens, true)) {
        best = p.tokens.size();
        best_phrase = &p;
      }
    }
    if (best == 0) {
      ++i;
      continue;
    }
    out.foods.insert(best_phrase->text);
    i += best;
  }

  for (const auto& tok : tokens) {
    if (auto it = inflection_to_lemma_.find(tok); it != inflection_to_lemma_.end()) out.actions.insert(it->second);
  }
  return out;
}

Fraction Lexicon::portion_fraction(std::string_view phrase) const {
  const auto tokens = tokenize(phrase);
  const auto normalized = join_tokens(tokens);
  if (auto it = fractions_.find(normalized); it != fractions_.end()) return it->second;
  Rational r;
  if (!tokens.empty() && fraction_pattern_length(tokens, 0, &r) == tokens.size()) return r;
  fail(ErrorCode::Lookup, "unknown portion phrase '" + std::string(phrase) + "'");
}

std::set<std::string> category_terms(const ParsedTerms& parsed, TermCategory category) {
  switch (category) {
    case TermCategory::Portion: return {parsed.portions.begin(), parsed.portions.end()};
    case TermCategory::Food: return parsed.foods;
    case TermCategory::Action: return parsed.actions;
  }
  return {};
}

AccuracyResult term_accuracy(const std::vector<std::string>& gt, const std::vector<std::string>& gen,
                             TermCategory category, const Lexicon& lexicon) {
  if (gt.size() != gen.size()) {
    fail(ErrorCode::Usage, "accuracy needs aligned lists (" + std::to_string(gt.size()) + " ground truth vs " +
                               std::to_string(gen.size()) + " generated)");
  }
  AccuracyResult result;
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto truth = category_terms(lexicon.parse(gt[i]), category);
    if (truth.empty()) {
      ++result.excluded;
      continue;
    }
    const auto generated = category_terms(lexicon.parse(gen[i]), category);
    std::size_t hits = 0;
    for (const auto& t : truth) hits += generated.contains(t) ? 1 : 0;
    total += static_cast<double>(hits) / static_cast<double>(truth.size());
    ++result.included;
  }
  if (result.included == 0) {
    fail(ErrorCode::UndefinedRate, std::string("no pair has a ground-truth ") + std::string(category_name(category)) +
                                       " term; the rate is undefined");
  }
  result.rate = total / static_cast<double>(result.included);
  return result;
}

}  // namespace dietcap
