#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tjplan/transformer.hpp"

namespace tjplan::nn {

struct TrainSettings {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;  ///< decoupled (AdamW)
  int batch_size = 32;
  int epochs = 50;
  LossWeights loss;
  int patience = 3;         ///< epochs without validation improvement before decay
  double decay = 0.5;       ///< learning-rate factor on plateau
  double divergence = 1e6;  ///< abort when a training loss exceeds this
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;   ///< shuffling and dropout

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;  ///< used during the epoch
};

struct TrainResult {
  ModelParams best;  ///< lowest validation loss seen
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool diverged = false;
};

/// Adam with decoupled weight decay; halves the rate on validation plateaus.
/// When `val` is empty the training set stands in for it.
[[nodiscard]] TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val,
                                ModelParams params, const TrainSettings& settings);

/// epoch,train_loss,val_loss,learning_rate
void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace tjplan::nn
