#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dietcap {

struct EvalItem {
  std::string id;
  std::string candidate;
  std::vector<std::string> references;  // at least one
};

using EvalCorpus = std::vector<EvalItem>;

// Line-delimited JSON, one {"id", "candidate", "references"} object per line.
EvalCorpus parse_corpus(std::string_view jsonl);
EvalCorpus load_corpus(const std::filesystem::path& path);
std::string corpus_to_jsonl(const EvalCorpus& corpus);

// Corpus BLEU-n on a 0..100 scale: clipped n-gram counts summed over the
// corpus, geometric mean of orders 1..n, brevity penalty against the closest
// reference length (shorter wins a tie). No smoothing, so a zero precision at
// any order gives 0.
double bleu(const EvalCorpus& corpus, int n);

// Sentence BLEU with add-one smoothing on orders above 1. Debugging aid only.
double smoothed_sentence_bleu(std::string_view candidate, const std::vector<std::string>& references, int n);

// LCS F-measure with beta = 1.2 where precision and recall are each maximized
// over the references, averaged over items, 0..100. An empty candidate scores 0.
double rouge_l(const EvalCorpus& corpus);

struct CiderResult {
  double score = 0.0;
  // True when fewer than two items are present, so every idf is zero.
  bool degenerate = false;
};

// Plain CIDEr: term-frequency x idf vectors for n = 1..4 with
// idf = ln(items) - ln(max(1, df)) over reference document frequencies,
// cosine per order averaged over orders and references, times 10 per item,
// averaged over items and reported times 100. A candidate identical to all of
// its references with corpus-unique n-grams therefore scores 1000.
CiderResult cider(const EvalCorpus& corpus);

struct MetricReport {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  CiderResult cider;
};

MetricReport evaluate_corpus(const EvalCorpus& corpus);

}  // namespace dietcap
