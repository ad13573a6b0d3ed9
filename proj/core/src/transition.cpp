#include "npc/transition.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace npc {

namespace {

void check_square(const Matrix& m, std::size_t c, const char* what) {
  if (m.rows() != c || m.cols() != c)
    throw std::invalid_argument(std::string(what) + ": expected a c x c matrix");
}

double norm1(const Matrix& m) {
  double best = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) col += std::abs(m(i, j));
    best = std::max(best, col);
  }
  return best;
}

// Gauss-Jordan with partial pivoting; empty result when singular.
std::optional<Matrix> invert(const Matrix& a) {
  const std::size_t c = a.rows();
  Matrix work = a;
  Matrix inv(c, c);
  for (std::size_t i = 0; i < c; ++i) inv(i, i) = 1.0;

  for (std::size_t col = 0; col < c; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < c; ++r) {
      if (std::abs(work(r, col)) > std::abs(work(pivot, col))) pivot = r;
    }
    if (std::abs(work(pivot, col)) < 1e-300) return std::nullopt;
    if (pivot != col) {
      for (std::size_t j = 0; j < c; ++j) {
        std::swap(work(pivot, j), work(col, j));
        std::swap(inv(pivot, j), inv(col, j));
      }
    }
    const double scale = 1.0 / work(col, col);
    for (std::size_t j = 0; j < c; ++j) {
      work(col, j) *= scale;
      inv(col, j) *= scale;
    }
    for (std::size_t r = 0; r < c; ++r) {
      if (r == col) continue;
      const double f = work(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) {
        work(r, j) -= f * work(col, j);
        inv(r, j) -= f * inv(col, j);
      }
    }
  }
  return inv;
}

}  // namespace

AuxModel train_aux(const Matrix& features, const std::vector<std::uint32_t>& noisy_labels,
                   std::uint32_t num_classes, const std::vector<std::uint32_t>& predicted,
                   const TrainConfig& cfg) {
  const std::size_t n = features.rows();
  if (noisy_labels.size() != n) throw std::invalid_argument("train_aux: noisy label count mismatch");
  if (predicted.size() != n) throw std::invalid_argument("train_aux: predicted label count mismatch");
  const std::uint32_t c = num_classes;

  Dataset aux_ds;
  aux_ds.num_classes = c;
  aux_ds.features = Matrix(n, features.cols() + c);
  for (std::size_t i = 0; i < n; ++i) {
    if (noisy_labels[i] >= c)
      throw std::invalid_argument("train_aux: noisy label outside [0, c)");
    const double* src = features.row(i);
    double* dst = aux_ds.features.row(i);
    std::copy(src, src + features.cols(), dst);
    dst[features.cols() + noisy_labels[i]] = 1.0;
  }
  aux_ds.true_labels = predicted;

  AuxModel aux;
  aux.net = train_classifier(aux_ds, cfg);
  aux.dim = static_cast<std::uint32_t>(features.cols());
  aux.classes = c;
  return aux;
}

Matrix aux_matrix(const AuxModel& aux, std::span<const double> x) {
  if (x.size() != aux.dim) throw std::invalid_argument("aux_matrix: feature width mismatch");
  const std::uint32_t c = aux.classes;
  Matrix in(c, aux.dim + c);
  for (std::uint32_t i = 0; i < c; ++i) {
    double* row = in.row(i);
    std::copy(x.begin(), x.end(), row);
    row[aux.dim + i] = 1.0;
  }
  Matrix probs = apply_head(Head::Softmax, mlp_logits(aux.net, in));
  Matrix a(c, c);
  for (std::uint32_t i = 0; i < c; ++i) {
    for (std::uint32_t k = 0; k < c; ++k) a(k, i) = probs(i, k);
  }
  return a;
}

Matrix h_from_t(const Matrix& t, std::span<const double> p_y,
                std::span<const double> p_yhat, const Matrix& a) {
  const std::size_t c = p_y.size();
  if (c < 2) throw std::invalid_argument("h_from_t: need at least 2 classes");
  if (p_yhat.size() != c) throw std::invalid_argument("h_from_t: marginal size mismatch");
  check_square(t, c, "h_from_t");
  check_square(a, c, "h_from_t");
  for (double v : p_yhat) {
    if (!(v > 0.0)) throw std::domain_error("h_from_t: p(yhat) must be > 0");
  }

  Matrix h(c, c);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c; ++i) acc += a(k, i) * t(j, i);
      h(k, j) = p_y[j] / p_yhat[k] * acc;
    }
  }
  return h;
}

std::optional<Matrix> solve_t_instance(const Matrix& h, std::span<const double> p_y,
                                       std::span<const double> p_yhat, const Matrix& a,
                                       double cond_cap) {
  const std::size_t c = p_y.size();
  if (c < 2) throw std::invalid_argument("solve_t_instance: need at least 2 classes");
  if (p_yhat.size() != c) throw std::invalid_argument("solve_t_instance: marginal size mismatch");
  check_square(h, c, "solve_t_instance");
  check_square(a, c, "solve_t_instance");
  if (!(cond_cap > 0.0)) throw std::domain_error("solve_t_instance: cond_cap must be > 0");

  for (double v : p_y) {
    if (!(v > 1e-12)) return std::nullopt;  // degenerate marginal, unusable instance
  }

  auto inv = invert(a);
  if (!inv) return std::nullopt;
  const double cond = norm1(a) * norm1(*inv);
  if (!std::isfinite(cond) || cond > cond_cap) return std::nullopt;

  Matrix t(c, c);
  for (std::size_t j = 0; j < c; ++j) {
    // b_k = H_kj p(yhat = k) / p(y = j); row j of T solves A t = b.
    double sum = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k < c; ++k) v += (*inv)(i, k) * h(k, j) * p_yhat[k] / p_y[j];
      if (v < 0.0) v = 0.0;
      t(j, i) = v;
      sum += v;
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) return std::nullopt;
    for (std::size_t i = 0; i < c; ++i) t(j, i) /= sum;
  }
  return t;
}

TransitionEstimate aggregate_t(const std::vector<std::optional<Matrix>>& per_instance,
                               const std::vector<std::uint32_t>& true_labels,
                               std::uint32_t num_classes) {
  if (per_instance.size() != true_labels.size())
    throw std::invalid_argument("aggregate_t: instance/label count mismatch");
  const std::uint32_t c = num_classes;
  TransitionEstimate est;
  est.t_hat = Matrix(c, c);
  est.class_counts.assign(c, 0);

  for (std::size_t r = 0; r < per_instance.size(); ++r) {
    if (!per_instance[r].has_value()) {
      ++est.skipped;
      continue;
    }
    const std::uint32_t y = true_labels[r];
    if (y >= c) throw std::invalid_argument("aggregate_t: label outside [0, c)");
    const Matrix& t = *per_instance[r];
    if (t.rows() != c || t.cols() != c)
      throw std::invalid_argument("aggregate_t: instance matrix shape mismatch");
    for (std::uint32_t j = 0; j < c; ++j) est.t_hat(y, j) += t(y, j);
    ++est.class_counts[y];
  }
  for (std::uint32_t i = 0; i < c; ++i) {
    if (est.class_counts[i] > 0) {
      for (std::uint32_t j = 0; j < c; ++j) est.t_hat(i, j) /= est.class_counts[i];
    } else {
      est.t_hat(i, i) = 1.0;
    }
  }
  return est;
}

double transition_mse(const Matrix& t_hat, const Matrix& t_ref) {
  if (t_hat.rows() != t_ref.rows() || t_hat.cols() != t_ref.cols())
    throw std::invalid_argument("transition_mse: shape mismatch");
  if (t_hat.empty()) throw std::invalid_argument("transition_mse: empty matrices");
  double acc = 0.0;
  for (std::size_t i = 0; i < t_hat.data().size(); ++i) {
    const double d = t_hat.data()[i] - t_ref.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(t_hat.data().size());
}

TransitionEstimate estimate_transition(const NpcModel& model, const AuxModel& aux,
                                       const Matrix& features,
                                       const PredictionSet& classifier_preds,
                                       const PredictionSet& calibrated_preds,
                                       const std::vector<std::uint32_t>& true_labels,
                                       double cond_cap) {
  const std::size_t n = features.rows();
  const std::uint32_t c = model.classes;
  if (aux.classes != c) throw std::invalid_argument("estimate_transition: aux class mismatch");
  if (classifier_preds.size() != n || calibrated_preds.size() != n)
    throw std::invalid_argument("estimate_transition: prediction row mismatch");
  if (classifier_preds.classes() != c || calibrated_preds.classes() != c)
    throw std::invalid_argument("estimate_transition: prediction class mismatch");
  if (true_labels.size() != n)
    throw std::invalid_argument("estimate_transition: label count mismatch");

  // One batched pass per class for both networks, then per-instance solves.
  std::vector<Matrix> mode_rows(c);  // mode_rows[k](i, j) = H_i(k, j)
  for (std::uint32_t k = 0; k < c; ++k) {
    PosteriorParams post = posterior_alpha(model, features, k);
    Matrix modes(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      auto mode = posterior_mode(post.alpha.row_span(i));
      std::copy(mode.begin(), mode.end(), modes.row(i));
    }
    mode_rows[k] = std::move(modes);
  }

  std::vector<Matrix> aux_cols(c);  // aux_cols[i](r, k) = A_r(k, i)
  for (std::uint32_t i = 0; i < c; ++i) {
    Matrix in(n, aux.dim + c);
    for (std::size_t r = 0; r < n; ++r) {
      const double* src = features.row(r);
      double* dst = in.row(r);
      std::copy(src, src + aux.dim, dst);
      dst[aux.dim + i] = 1.0;
    }
    aux_cols[i] = apply_head(Head::Softmax, mlp_logits(aux.net, in));
  }

  std::vector<std::optional<Matrix>> per_instance;
  per_instance.reserve(n);
  Matrix h(c, c);
  Matrix a(c, c);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::uint32_t k = 0; k < c; ++k) {
      for (std::uint32_t j = 0; j < c; ++j) {
        h(k, j) = mode_rows[k](r, j);
        a(k, j) = aux_cols[j](r, k);
      }
    }
    per_instance.push_back(solve_t_instance(h, calibrated_preds.probs.row_span(r),
                                            classifier_preds.probs.row_span(r), a,
                                            cond_cap));
  }
  return aggregate_t(per_instance, true_labels, c);
}

}  // namespace npc
