#include "dietcap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "dietcap/error.hpp"
#include "dietcap/text.hpp"

namespace dietcap {
namespace {

using Tokens = std::vector<std::string>;
using NgramCounts = std::map<Tokens, int>;

NgramCounts ngrams(const Tokens& tokens, int n) {
  NgramCounts counts;
  const auto len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
    ++counts[Tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + len))];
  }
  return counts;
}

void require_nonempty(const EvalCorpus& corpus, const char* metric) {
  if (corpus.empty()) fail(ErrorCode::Usage, std::string(metric) + ": corpus is empty");
  for (const auto& item : corpus) {
    if (item.references.empty()) fail(ErrorCode::Data, std::string(metric) + ": item '" + item.id + "' has no references");
  }
}

// Sorting first makes the mean independent of item order.
double order_free_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

struct ClipCounts {
  std::array<long, 4> matched{};
  std::array<long, 4> total{};
  long cand_len = 0;
  long ref_len = 0;
};

ClipCounts clip_counts(const Tokens& cand, const std::vector<Tokens>& refs, int n) {
  ClipCounts c;
  c.cand_len = static_cast<long>(cand.size());
  long best = -1;
  long best_diff = 0;
  for (const auto& r : refs) {
    const long len = static_cast<long>(r.size());
    const long diff = std::labs(len - c.cand_len);
    if (best < 0 || diff < best_diff || (diff == best_diff && len < best)) {
      best = len;
      best_diff = diff;
    }
  }
  c.ref_len = best;
  for (int k = 1; k <= n; ++k) {
    const auto cand_counts = ngrams(cand, k);
    NgramCounts max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, cnt] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
    }
    for (const auto& [g, cnt] : cand_counts) {
      c.total[k - 1] += cnt;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) c.matched[k - 1] += std::min(cnt, it->second);
    }
  }
  return c;
}

std::vector<Tokens> tokenize_all(const std::vector<std::string>& texts) {
  std::vector<Tokens> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(tokenize(t));
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

EvalCorpus parse_corpus(std::string_view jsonl) {
  EvalCorpus corpus;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = "corpus line " + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      EvalItem item;
      item.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                                 : std::to_string(line_no);
      item.candidate = j.at("candidate").get<std::string>();
      item.references = j.at("references").get<std::vector<std::string>>();
      if (item.references.empty()) fail(ErrorCode::Data, where + "item has no references");
      corpus.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Data, where + e.what());
    }
  }
  return corpus;
}

EvalCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open corpus " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

std::string corpus_to_jsonl(const EvalCorpus& corpus) {
  std::string out;
  for (const auto& item : corpus) {
    nlohmann::ordered_json j;
    j["id"] = item.id;
    j["candidate"] = item.candidate;
    j["references"] = item.references;
    out += j.dump() + "\n";
  }
  return out;
}

double bleu(const EvalCorpus& corpus, int n) {
  if (n < 1 || n > 4) fail(ErrorCode::Usage, "BLEU order must be 1..4, got " + std::to_string(n));
  require_nonempty(corpus, "bleu");
  ClipCounts sum;
  for (const auto& item : corpus) {
    const auto c = clip_counts(tokenize(item.candidate), tokenize_all(item.references), n);
    for (int k = 0; k < n; ++k) {
      sum.matched[k] += c.matched[k];
      sum.total[k] += c.total[k];
    }
    sum.cand_len += c.cand_len;
    sum.ref_len += c.ref_len;
  }
  if (sum.cand_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int k = 0; k < n; ++k) {
    if (sum.matched[k] == 0 || sum.total[k] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(sum.matched[k]) / static_cast<double>(sum.total[k]));
  }
  const double bp = sum.cand_len > sum.ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(sum.ref_len) / static_cast<double>(sum.cand_len));
  return 100.0 * bp * std::exp(log_precision / n);
}

double smoothed_sentence_bleu(std::string_view candidate, const std::vector<std::string>& references, int n) {
  if (n < 1 || n > 4) fail(ErrorCode::Usage, "BLEU order must be 1..4, got " + std::to_string(n));
  if (references.empty()) fail(ErrorCode::Usage, "sentence BLEU needs a reference");
  const auto c = clip_counts(tokenize(candidate), tokenize_all(references), n);
  if (c.cand_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int k = 0; k < n; ++k) {
    const double add = k == 0 ? 0.0 : 1.0;
    const double num = static_cast<double>(c.matched[k]) + add;
    const double den = static_cast<double>(c.total[k]) + add;
    if (num == 0.0 || den == 0.0) return 0.0;
    log_precision += std::log(num / den);
  }
  const double bp =
      c.cand_len > c.ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(c.ref_len) / static_cast<double>(c.cand_len));
  return 100.0 * bp * std::exp(log_precision / n);
}

double rouge_l(const EvalCorpus& corpus) {
  require_nonempty(corpus, "rouge_l");
  constexpr double beta = 1.2;
  std::vector<double> scores;
  scores.reserve(corpus.size());
  for (const auto& item : corpus) {
    const auto cand = tokenize(item.candidate);
    double p_max = 0.0, r_max = 0.0;
    if (!cand.empty()) {
      for (const auto& ref : tokenize_all(item.references)) {
        if (ref.empty()) continue;
        const auto lcs = static_cast<double>(lcs_length(cand, ref));
        p_max = std::max(p_max, lcs / static_cast<double>(cand.size()));
        r_max = std::max(r_max, lcs / static_cast<double>(ref.size()));
      }
    }
    const double f =
        (p_max > 0.0 && r_max > 0.0) ? ((1.0 + beta * beta) * p_max * r_max) / (r_max + beta * beta * p_max) : 0.0;
    scores.push_back(f);
  }
  return 100.0 * order_free_mean(std::move(scores));
}

CiderResult cider(const EvalCorpus& corpus) {
  require_nonempty(corpus, "cider");
  constexpr int kMaxN = 4;
  CiderResult result;
  result.degenerate = corpus.size() < 2;

  std::map<Tokens, int> df;
  std::vector<std::vector<std::array<NgramCounts, kMaxN>>> ref_counts(corpus.size());
  std::vector<std::array<NgramCounts, kMaxN>> cand_counts(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::set<Tokens> seen;
    for (const auto& ref : tokenize_all(corpus[i].references)) {
      std::array<NgramCounts, kMaxN> per_n;
      for (int n = 1; n <= kMaxN; ++n) {
        per_n[n - 1] = ngrams(ref, n);
        for (const auto& [g, _] : per_n[n - 1]) seen.insert(g);
      }
      ref_counts[i].push_back(std::move(per_n));
    }
    for (const auto& g : seen) ++df[g];
    const auto cand = tokenize(corpus[i].candidate);
    for (int n = 1; n <= kMaxN; ++n) cand_counts[i][n - 1] = ngrams(cand, n);
  }

  const double log_docs = std::log(static_cast<double>(corpus.size()));
  auto weight = [&](const Tokens& g, int tf) {
    auto it = df.find(g);
    const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
    return static_cast<double>(tf) * (log_docs - std::log(std::max(1.0, d)));
  };
  auto norm = [&](const NgramCounts& v) {
    double s = 0.0;
    for (const auto& [g, tf] : v) {
      const double w = weight(g, tf);
      s += w * w;
    }
    return std::sqrt(s);
  };

  std::vector<double> scores;
  scores.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    double item = 0.0;
    for (const auto& ref : ref_counts[i]) {
      double per_ref = 0.0;
      for (int n = 0; n < kMaxN; ++n) {
        const auto& c = cand_counts[i][n];
        const auto& r = ref[n];
        double dot = 0.0;
        for (const auto& [g, tf] : c) {
          auto it = r.find(g);
          if (it != r.end()) dot += weight(g, tf) * weight(g, it->second);
        }
        const double denom = norm(c) * norm(r);
        per_ref += denom > 0.0 ? dot / denom : 0.0;
      }
      item += per_ref / kMaxN;
    }
    scores.push_back(10.0 * item / static_cast<double>(ref_counts[i].size()));
  }
  result.score = 100.0 * order_free_mean(std::move(scores));
  return result;
}

MetricReport evaluate_corpus(const EvalCorpus& corpus) {
  MetricReport r;
  for (int n = 1; n <= 4; ++n) r.bleu[n - 1] = bleu(corpus, n);
  r.rouge_l = rouge_l(corpus);
  r.cider = cider(corpus);
  return r;
}

}  // namespace dietcap
