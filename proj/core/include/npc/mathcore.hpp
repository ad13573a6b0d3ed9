#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace npc {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), v_(rows * cols, value) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return v_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }

  double* row(std::size_t r) { return v_.data() + r * cols_; }
  const double* row(std::size_t r) const { return v_.data() + r * cols_; }
  std::span<const double> row_span(std::size_t r) const { return {row(r), cols_}; }

  std::vector<double>& data() { return v_; }
  const std::vector<double>& data() const { return v_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> v_;
};

// Splittable counter-based RNG. The stream is a pure function of
// (seed, counter), so state never aliases and replay is exact.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
};

RngState make_rng(std::uint64_t seed);
// Independent stream derived from (seed, stream_id); same inputs, same stream.
RngState substream(std::uint64_t seed, std::uint64_t stream_id);

std::uint64_t next_u64(RngState& rng);
// Uniform on the open interval (0, 1).
double next_uniform(RngState& rng);
// Standard normal via Box-Muller; consumes two uniforms per call.
double next_normal(RngState& rng);
// Uniform integer in [0, bound), unbiased. bound must be nonzero.
std::uint64_t next_below(RngState& rng, std::uint64_t bound);
// Fisher-Yates permutation of 0..n-1.
std::vector<std::uint32_t> shuffle_indices(std::size_t n, RngState& rng);

// Concentration vector of a Dirichlet distribution; every component > 0.
struct DirichletParams {
  std::vector<double> alpha;
};

// log Gamma(x) for x > 0, Lanczos approximation with reflection below 0.5.
double log_gamma(double x);
// d/dx log Gamma(x) for x > 0.
double digamma(double x);
// d^2/dx^2 log Gamma(x) for x > 0.
double trigamma(double x);
// log(1 + exp(x)) without overflow.
double softplus(double x);

// Approximate inverse CDF of Gamma(alpha, 1): (u * alpha * Gamma(alpha))^(1/alpha).
// u in (0, 1), alpha > 0. Differentiable in alpha.
double gamma_icdf_approx(double u, double alpha);
double gamma_icdf_approx_dalpha(double u, double alpha);

// Dirichlet draw built from per-component gamma_icdf_approx values,
// normalized in log space so tiny concentrations cannot underflow.
std::vector<double> dirichlet_sample(const DirichletParams& params, RngState& rng);
std::vector<double> dirichlet_from_uniforms(const DirichletParams& params,
                                            std::span<const double> u);

// KL(MultiGamma(alpha_hat, beta) || MultiGamma(alpha, beta)) for shared rate beta:
// sum_k lnG(alpha_k) - lnG(alpha_hat_k) + (alpha_hat_k - alpha_k) * psi(alpha_hat_k).
double kl_multigamma(std::span<const double> alpha_hat, std::span<const double> alpha);
double kl_multigamma(const DirichletParams& alpha_hat, const DirichletParams& alpha);

// Max-shifted softmax; input must be nonempty and free of NaN/+inf.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace npc
