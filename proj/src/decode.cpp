#include <algorithm>
#include <cmath>
#include <limits>

#include "dietcap/error.hpp"
#include "dietcap/model.hpp"

namespace dietcap {
namespace {

bool emittable(int id) { return id != kPadId && id != kBosId && id != kUnkId; }

// Log-softmax restricted to emittable ids; the rest are -inf.
template <typename T>
std::vector<double> log_probs(std::span<const T> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (emittable(static_cast<int>(i))) mx = std::max(mx, static_cast<double>(logits[i]));
  }
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (emittable(static_cast<int>(i))) z += std::exp(static_cast<double>(logits[i]) - mx);
  }
  const double lse = mx + std::log(z);
  std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (emittable(static_cast<int>(i))) out[i] = static_cast<double>(logits[i]) - lse;
  }
  return out;
}

struct Hypothesis {
  std::vector<int> ids;  // starts with BOS
  double logp = 0.0;
  bool truncated = false;

  double normalized() const { return logp / static_cast<double>(ids.size() - 1); }
};

// Higher score first, then the lexicographically smaller sequence.
bool better(double score_a, const std::vector<int>& a, double score_b, const std::vector<int>& b) {
  if (score_a != score_b) return score_a > score_b;
  return a < b;
}

template <typename T>
std::size_t word_limit(const Captioner<T>& model, std::size_t max_len) {
  return std::min(max_len, model.config().max_caption_len);
}

template <typename T>
Hypothesis greedy_search(const Captioner<T>& model, const VisualEmbeddings<T>& embeddings, std::size_t max_len) {
  NoGradGuard no_grad;
  const auto limit = word_limit(model, max_len);
  Hypothesis h;
  h.ids = {kBosId};
  while (true) {
    const auto logits = model.decode_step(embeddings, h.ids);
    const auto lp = log_probs<T>(logits);
    if (h.ids.size() - 1 >= limit) {
      h.logp += lp[kEosId];
      h.ids.push_back(kEosId);
      h.truncated = true;
      return h;
    }
    int best = -1;
    for (std::size_t i = 0; i < lp.size(); ++i) {
      if (!emittable(static_cast<int>(i))) continue;
      if (best < 0 || lp[i] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    h.logp += lp[static_cast<std::size_t>(best)];
    h.ids.push_back(best);
    if (best == kEosId) return h;
  }
}

}  // namespace

template <typename T>
CaptionTokens greedy_decode(const Captioner<T>& model, const VisualEmbeddings<T>& embeddings, std::size_t max_len) {
  auto h = greedy_search(model, embeddings, max_len);
  return CaptionTokens{std::move(h.ids), h.truncated};
}

template <typename T>
CaptionTokens beam_decode(const Captioner<T>& model, const VisualEmbeddings<T>& embeddings, std::size_t beam_width,
                          std::size_t max_len) {
  if (beam_width == 0) fail(ErrorCode::Config, "beam width must be at least 1");
  NoGradGuard no_grad;
  const auto limit = word_limit(model, max_len);

  std::vector<Hypothesis> live(1);
  live[0].ids = {kBosId};
  std::vector<Hypothesis> finished;

  while (!live.empty()) {
    std::vector<Hypothesis> candidates;
    for (const auto& h : live) {
      const auto lp = log_probs<T>(model.decode_step(embeddings, h.ids));
      if (h.ids.size() - 1 >= limit) {
        Hypothesis done = h;
        done.logp += lp[kEosId];
        done.ids.push_back(kEosId);
        done.truncated = true;
        finished.push_back(std::move(done));
        continue;
      }
      for (std::size_t i = 0; i < lp.size(); ++i) {
        if (!emittable(static_cast<int>(i))) continue;
        Hypothesis next = h;
        next.ids.push_back(static_cast<int>(i));
        next.logp += lp[i];
        candidates.push_back(std::move(next));
      }
    }
    // All live hypotheses share a length here, so raw and normalized ranking agree.
    std::sort(candidates.begin(), candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
      return better(a.logp, a.ids, b.logp, b.ids);
    });
    if (candidates.size() > beam_width) candidates.resize(beam_width);
    live.clear();
    for (auto& c : candidates) {
      if (c.ids.back() == kEosId) {
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }

  finished.push_back(greedy_search(model, embeddings, max_len));
  const Hypothesis* best = &finished.front();
  for (const auto& h : finished) {
    if (better(h.normalized(), h.ids, best->normalized(), best->ids)) best = &h;
  }
  return CaptionTokens{best->ids, best->truncated};
}

template <typename T>
double sequence_score(const Captioner<T>& model, const VisualEmbeddings<T>& embeddings, const CaptionTokens& caption) {
  const auto& ids = caption.ids;
  if (ids.size() < 2 || ids.front() != kBosId || ids.back() != kEosId) {
    fail(ErrorCode::Usage, "caption must start with BOS and end with EOS");
  }
  NoGradGuard no_grad;
  const auto logits = model.decode_logits(embeddings, std::span<const int>(ids).first(ids.size() - 1));
  const auto v = logits.dim(1);
  const auto data = logits.data();
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    const auto lp = log_probs<T>(data.subspan(t * v, v));
    const auto target = ids[t + 1];
    if (target < 0 || static_cast<std::size_t>(target) >= v) fail(ErrorCode::Index, "token id out of range");
    total += lp[static_cast<std::size_t>(target)];
  }
  return total / static_cast<double>(ids.size() - 1);
}

template CaptionTokens greedy_decode(const Captioner<float>&, const VisualEmbeddings<float>&, std::size_t);
template CaptionTokens greedy_decode(const Captioner<double>&, const VisualEmbeddings<double>&, std::size_t);
template CaptionTokens beam_decode(const Captioner<float>&, const VisualEmbeddings<float>&, std::size_t, std::size_t);
template CaptionTokens beam_decode(const Captioner<double>&, const VisualEmbeddings<double>&, std::size_t, std::size_t);
template double sequence_score(const Captioner<float>&, const VisualEmbeddings<float>&, const CaptionTokens&);
template double sequence_score(const Captioner<double>&, const VisualEmbeddings<double>&, const CaptionTokens&);

}  // namespace dietcap
