#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "dietcap/error.hpp"
#include "dietcap/metrics.hpp"
#include "dietcap/rng.hpp"
#include "dietcap/text.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dietcap;

TEST_CASE("bleu hand-computed values") {
  const EvalCorpus c = {{"1", "the cat sat on the mat", {"the cat is on the mat"}}};
  CHECK(bleu(c, 1) == doctest::Approx(100.0 * 5.0 / 6.0).epsilon(1e-12));
  CHECK(bleu(c, 2) == doctest::Approx(100.0 * std::sqrt(0.5)).epsilon(1e-12));
  CHECK(bleu(c, 3) == doctest::Approx(100.0 * std::cbrt(5.0 / 6.0 * 3.0 / 5.0 * 1.0 / 4.0)).epsilon(1e-12));
  CHECK(bleu(c, 4) == 0.0);

  const EvalCorpus short_cand = {{"1", "the cat", {"the cat sat down", "a cat"}}};
  // "a cat" has the candidate's length, so there is no brevity penalty.
  CHECK(bleu(short_cand, 1) == doctest::Approx(100.0));
  const EvalCorpus penalized = {{"1", "the cat", {"the cat sat down"}}};
  CHECK(bleu(penalized, 1) == doctest::Approx(100.0 * std::exp(1.0 - 4.0 / 2.0)));
}

TEST_CASE("bleu argument checks") {
  const EvalCorpus c = {{"1", "a b", {"a b"}}};
  CHECK_THROWS_AS(bleu(c, 0), Error);
  CHECK_THROWS_AS(bleu(c, 5), Error);
  CHECK_THROWS_AS(bleu(EvalCorpus{}, 4), Error);
}

TEST_CASE("rouge-l hand-computed values") {
  CHECK(rouge_l({{"1", "a b c", {"a x c"}}}) == doctest::Approx(100.0 * 2.0 / 3.0));
  CHECK(rouge_l({{"1", "a b c", {"a b c"}}}) == 100.0);
  CHECK(rouge_l({{"1", "a b c", {"x y z"}}}) == 0.0);
  CHECK(rouge_l({{"1", "", {"x y z"}}}) == 0.0);
  // P = 2/2, R = 2/4: F = (1 + 1.44) * 0.5 / (0.5 + 1.44)
  CHECK(rouge_l({{"1", "a c", {"a b c d"}}}) == doctest::Approx(100.0 * 2.44 * 0.5 / (0.5 + 1.44)));
}

TEST_CASE("cider fixed points") {
  const EvalCorpus same = {{"1", "a b c d e", {"a b c d e"}}, {"2", "v w x y z", {"v w x y z"}}};
  const auto r = cider(same);
  CHECK_FALSE(r.degenerate);
  CHECK(r.score == doctest::Approx(1000.0));
  const EvalCorpus disjoint = {{"1", "p q r", {"a b c d e"}}, {"2", "s t u", {"v w x y z"}}};
  CHECK(cider(disjoint).score == 0.0);
  const EvalCorpus single = {{"1", "a b", {"a b"}}};
  CHECK(cider(single).degenerate);
  CHECK(cider(single).score == 0.0);
}

TEST_CASE("metrics agree with brute-force oracles on random corpora") {
  Rng rng(17);
  const std::vector<std::string> words = {"the", "a", "bowl", "of", "rice", "is", "empty", "half", "full", "soup"};
  for (int trial = 0; trial < 25; ++trial) {
    EvalCorpus corpus;
    const auto items = 2 + rng.below(6);
    for (std::uint64_t i = 0; i < items; ++i) {
      auto sentence = [&] {
        std::string s;
        const auto n = 1 + rng.below(9);
        for (std::uint64_t k = 0; k < n; ++k) s += (k ? " " : "") + words[rng.below(words.size())];
        return s;
      };
      EvalItem item;
      item.id = std::to_string(i);
      item.candidate = sentence();
      const auto refs = 1 + rng.below(4);
      for (std::uint64_t k = 0; k < refs; ++k) item.references.push_back(sentence());
      corpus.push_back(item);
    }
    for (int n = 1; n <= 4; ++n) CHECK(std::abs(bleu(corpus, n) - oracle::bleu(corpus, n)) <= 1e-6);
    CHECK(std::abs(rouge_l(corpus) - oracle::rouge_l(corpus)) <= 1e-6);
    CHECK(std::abs(cider(corpus).score - oracle::cider(corpus)) <= 1e-6);

    // Order of items does not matter.
    auto shuffled = corpus;
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 1, shuffled.end());
    const auto a = evaluate_corpus(corpus), b = evaluate_corpus(shuffled);
    CHECK(a.bleu == b.bleu);
    CHECK(a.rouge_l == b.rouge_l);
    CHECK(a.cider.score == b.cider.score);

    for (double s : a.bleu) {
      CHECK(s >= 0.0);
      CHECK(s <= 100.0);
    }
    CHECK(a.rouge_l <= 100.0);

    // An extra reference equal to the candidate never lowers clipped counts.
    auto boosted = corpus;
    boosted[0].references.push_back(boosted[0].candidate);
    for (int n = 1; n <= 4; ++n) {
      CHECK(oracle::clipped_matches(boosted[0], n) >= oracle::clipped_matches(corpus[0], n));
    }
  }
}

TEST_CASE("identical corpora score 100 exactly") {
  EvalCorpus c;
  for (int i = 0; i < 5; ++i) {
    const auto s = "caption number " + std::to_string(i) + " has a few words";
    c.push_back({std::to_string(i), s, {s}});
  }
  for (int n = 1; n <= 4; ++n) CHECK(bleu(c, n) == 100.0);
  CHECK(rouge_l(c) == 100.0);
}

TEST_CASE("corpus files round-trip") {
  const EvalCorpus c = {{"a", "x y", {"x y", "y x"}}, {"b", "isn't \"quoted\"", {"z"}}};
  const auto text = corpus_to_jsonl(c);
  const auto back = parse_corpus(text);
  REQUIRE(back.size() == 2);
  CHECK(back[1].candidate == c[1].candidate);
  CHECK(back[0].references == c[0].references);
  CHECK(corpus_to_jsonl(back) == text);
  CHECK_THROWS_AS(parse_corpus("{\"id\":\"a\",\"candidate\":\"x\",\"references\":[]}\n"), Error);
  CHECK_THROWS_AS(parse_corpus("not json\n"), Error);
}

TEST_CASE("smoothed sentence bleu stays positive without higher-order matches") {
  CHECK(smoothed_sentence_bleu("the cat sat", {"the dog ran"}, 4) > 0.0);
  CHECK(smoothed_sentence_bleu("a b c d", {"a b c d"}, 4) == doctest::Approx(100.0));
}
