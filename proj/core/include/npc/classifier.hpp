#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npc/data.hpp"
#include "npc/mlp.hpp"

namespace npc {

struct TrainConfig {
  std::uint32_t epochs = 300;
  std::uint32_t batch_size = 128;
  double learning_rate = 1e-3;
  double smoothing = 0.0;  // label smoothing mass in [0, 1)
  bool early_stop = false;
  double val_fraction = 0.1;  // held out of the training set for early stopping
  std::uint32_t patience = 20;
  std::uint32_t hidden_width = 128;
  std::uint32_t hidden_layers = 2;
  std::uint64_t seed = 0;
};

// Mean cross-entropy against smoothed one-hot targets:
// on-class mass (1 - smoothing) + smoothing / c, off-class smoothing / c.
double ce_loss(const MlpModel& model, const Matrix& x,
               const std::vector<std::uint32_t>& labels, double smoothing);

// Analytic parameter gradients of ce_loss; the exact quantities consumed by
// the training loop, exposed so they can be verified independently.
MlpGrads ce_gradients(const MlpModel& model, const Matrix& x,
                      const std::vector<std::uint32_t>& labels, double smoothing);

// Trains a rectifier MLP with Adam on the noisy labels when present, else
// the true labels. Deterministic given cfg.seed. Early stopping keeps the
// parameters with the best validation accuracy.
MlpModel train_classifier(const Dataset& ds, const TrainConfig& cfg);

// Class probabilities plus penultimate-layer activations as embeddings.
PredictionSet predict(const MlpModel& model, const Matrix& features);

// Classifier checkpoint (softmax-head models only).
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

}  // namespace npc
