#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dietcap/adam.hpp"
#include "dietcap/model.hpp"
#include "dietcap/vocab.hpp"

namespace dietcap {

struct TrainingSample {
  VisualInput input;
  std::string caption;
};

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 10;
  AdamOptions adam;
  std::uint64_t seed = 0;  // drives the per-epoch shuffle
  bool shuffle = true;
  // Stop after the first epoch whose mean loss falls below this (0 disables).
  double target_loss = 0.0;
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

struct TrainReport {
  std::vector<double> epoch_losses;
  double first_batch_loss = 0.0;
  std::size_t steps = 0;
};

// Teacher-forced cross entropy minimized with Adam, one update per batch on
// the mean of the batch's caption losses. Captions are encoded strictly before
// any update, so an out-of-vocabulary word fails fast with ErrorCode::Data.
template <typename T>
TrainReport train(Captioner<T>& model, const Vocabulary& vocab, const std::vector<TrainingSample>& data,
                  const TrainOptions& options);

}  // namespace dietcap
