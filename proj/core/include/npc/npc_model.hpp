#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "npc/data.hpp"
#include "npc/mlp.hpp"
#include "npc/prior.hpp"

namespace npc {

struct NpcConfig {
  std::uint32_t epochs = 100;
  std::uint32_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint32_t mc_samples = 1;
  double alpha_floor = 1e-4;  // lower bound on encoder concentrations
  std::uint32_t hidden_width = 128;
  std::uint32_t hidden_layers = 2;
  std::uint64_t seed = 0;

  bool operator==(const NpcConfig&) const = default;
};

// Latent-label model: the encoder maps (x, one-hot predicted class) to a
// Dirichlet concentration over the latent label, the decoder maps
// (x, latent label sample) back to per-class Bernoulli logits on the
// prediction.
struct NpcModel {
  MlpModel encoder;  // softplus head, input dim + classes, output classes
  MlpModel decoder;  // sigmoid head, input dim + classes, output classes
  std::uint32_t dim = 0;
  std::uint32_t classes = 0;
  double alpha_floor = 1e-4;

  bool operator==(const NpcModel&) const = default;
};

// Per-sample posterior concentrations (n x c).
struct PosteriorParams {
  Matrix alpha;
};

struct NpcGrads {
  MlpGrads encoder;
  MlpGrads decoder;
};

// Mean evidence lower bound over the batch: per-class Bernoulli
// reconstruction of the one-hot predicted class minus the KL divergence
// from the per-sample prior concentrations. u supplies the sampler's
// uniforms, mc-sample blocks of x.rows() rows each.
double elbo(const NpcModel& model, const Matrix& x,
            const std::vector<std::uint32_t>& y_hat, const Matrix& prior_alpha,
            const Matrix& u);
double elbo(const NpcModel& model, const Matrix& x,
            const std::vector<std::uint32_t>& y_hat, const Matrix& prior_alpha,
            RngState& rng, std::uint32_t mc_samples = 1);
// Same value; also fills grads with d(mean ELBO)/d(parameters).
double elbo_with_grads(const NpcModel& model, const Matrix& x,
                       const std::vector<std::uint32_t>& y_hat,
                       const Matrix& prior_alpha, const Matrix& u, NpcGrads& grads);

// Maximizes the ELBO with Adam over the prediction set. Never touches
// labels: inputs are features, predicted probabilities, and the prior rows.
NpcModel train_npc(const Matrix& features, const PredictionSet& preds,
                   const PriorAssignment& priors, const NpcConfig& cfg);

// Encoder concentrations for every feature row under predicted class label.
PosteriorParams posterior_alpha(const NpcModel& model, const Matrix& features,
                                std::uint32_t label);

// Dirichlet mode with components <= 1 clamped to 1 + 1e-3:
// mode_k = (alpha_k - 1) / (sum alpha - c).
std::vector<double> posterior_mode(std::span<const double> alpha);

// Row k holds the posterior mode for predicted class k: the per-instance
// matrix p(y = j | yhat = k, x).
Matrix h_matrix(const NpcModel& model, std::span<const double> x);

// Mixture over predicted classes: out_ij = sum_k preds_ik * mode(alpha(x_i, k))_j,
// renormalized per row. Embeddings pass through unchanged.
PredictionSet calibrate(const NpcModel& model, const Matrix& features,
                        const PredictionSet& preds);

struct NpcIteration {
  NpcModel model;
  PredictionSet calibrated;
};

// Repeated application: each round rebuilds priors from the previous
// round's calibrated predictions and trains a fresh model on them.
std::vector<NpcIteration> iterate_npc(const Matrix& features, const PredictionSet& preds,
                                      const PriorConfig& prior_cfg, const NpcConfig& cfg,
                                      std::uint32_t iterations);

void save_npc(const NpcModel& model, const NpcConfig& cfg, const std::string& path);
std::pair<NpcModel, NpcConfig> load_npc(const std::string& path);

}  // namespace npc
