#include "dietcap/trainer.hpp"

#include <numeric>

#include "dietcap/error.hpp"
#include "dietcap/rng.hpp"

namespace dietcap {

template <typename T>
TrainReport train(Captioner<T>& model, const Vocabulary& vocab, const std::vector<TrainingSample>& data,
                  const TrainOptions& options) {
  if (data.empty()) fail(ErrorCode::Usage, "training set is empty");
  if (options.batch_size == 0) fail(ErrorCode::Config, "batch size must be positive");
  if (vocab.size() != model.config().vocab_size) {
    fail(ErrorCode::Config, "vocabulary has " + std::to_string(vocab.size()) + " tokens, model expects " +
                                std::to_string(model.config().vocab_size));
  }

  std::vector<CaptionTokens> targets;
  targets.reserve(data.size());
  for (const auto& sample : data) {
    targets.push_back(vocab.encode(sample.caption, model.config().max_caption_len, true));
  }

  auto params = model.parameter_tensors();
  AdamState<T> adam(options.adam);
  Rng rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainReport report;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    if (options.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const auto end = std::min(order.size(), start + options.batch_size);
      for (auto& p : params) p.zero_grad();
      Tensor<T> total;
      for (std::size_t i = start; i < end; ++i) {
        auto loss = model.caption_loss(data[order[i]].input, targets[order[i]]);
        total = total.defined() ? add(total, loss) : loss;
      }
      auto batch_loss = scale(total, T(1) / static_cast<T>(end - start));
      batch_loss.backward();
      adam_step(std::span<Tensor<T>>(params), adam);
      const double value = static_cast<double>(batch_loss.item());
      if (report.steps == 0) report.first_batch_loss = value;
      ++report.steps;
      epoch_total += value * static_cast<double>(end - start);
    }
    const double epoch_loss = epoch_total / static_cast<double>(data.size());
    report.epoch_losses.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
    if (options.target_loss > 0.0 && epoch_loss < options.target_loss) break;
  }
  return report;
}

template TrainReport train(Captioner<float>&, const Vocabulary&, const std::vector<TrainingSample>&,
                           const TrainOptions&);
template TrainReport train(Captioner<double>&, const Vocabulary&, const std::vector<TrainingSample>&,
                           const TrainOptions&);

}  // namespace dietcap
