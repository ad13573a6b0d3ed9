#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "npc/classifier.hpp"
#include "npc/data.hpp"
#include "npc/npc_model.hpp"

namespace npc {

// p(yhat = k | ytilde = i, x), learned from (features, one-hot noisy label)
// against the classifier's predicted class.
struct AuxModel {
  MlpModel net;
  std::uint32_t dim = 0;
  std::uint32_t classes = 0;
};

struct TransitionEstimate {
  Matrix t_hat;                             // c x c, row i = p(ytilde | y = i)
  std::vector<std::uint32_t> class_counts;  // instances aggregated per true class
  std::uint32_t skipped = 0;                // instances dropped by the solver
};

AuxModel train_aux(const Matrix& features, const std::vector<std::uint32_t>& noisy_labels,
                   std::uint32_t num_classes, const std::vector<std::uint32_t>& predicted,
                   const TrainConfig& cfg);

// A(k, i) = p(yhat = k | ytilde = i, x); columns are the net's outputs.
Matrix aux_matrix(const AuxModel& aux, std::span<const double> x);

// H_kj = p_y[j] / p_yhat[k] * sum_i A(k, i) * T(j, i), with T(j, i) read as
// p(ytilde = i | y = j, x).
Matrix h_from_t(const Matrix& t, std::span<const double> p_y,
                std::span<const double> p_yhat, const Matrix& a);

// Inverts h_from_t: for every true class j, solves A * t = b_j with
// b_kj = H_kj * p_yhat[k] / p_y[j], clamps negatives, renormalizes the row.
// Returns nothing when A's condition estimate exceeds cond_cap or the
// marginals degenerate.
std::optional<Matrix> solve_t_instance(const Matrix& h, std::span<const double> p_y,
                                       std::span<const double> p_yhat, const Matrix& a,
                                       double cond_cap = 1e6);

// Row i of the aggregate is the average of row i over instances whose true
// class is i; classes with no usable instance keep an identity row.
TransitionEstimate aggregate_t(const std::vector<std::optional<Matrix>>& per_instance,
                               const std::vector<std::uint32_t>& true_labels,
                               std::uint32_t num_classes);

// Mean squared difference over all c^2 entries.
double transition_mse(const Matrix& t_hat, const Matrix& t_ref);

// Whole-dataset pass: per-instance H from the trained model, A from the aux
// net, marginals from the classifier and calibrated predictions.
TransitionEstimate estimate_transition(const NpcModel& model, const AuxModel& aux,
                                       const Matrix& features,
                                       const PredictionSet& classifier_preds,
                                       const PredictionSet& calibrated_preds,
                                       const std::vector<std::uint32_t>& true_labels,
                                       double cond_cap = 1e6);

}  // namespace npc
