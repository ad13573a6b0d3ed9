#include "npc/mathcore.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace npc {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void require_positive(std::span<const double> alpha, const char* what) {
  for (double a : alpha) {
    if (!(a > 0.0)) throw std::domain_error(std::string(what) + ": components must be > 0");
  }
}

}  // namespace

RngState make_rng(std::uint64_t seed) { return RngState{seed, 0}; }

RngState substream(std::uint64_t seed, std::uint64_t stream_id) {
  return RngState{mix64(mix64(seed + kGolden) ^ mix64(stream_id ^ 0xD1B54A32D192ED03ull)), 0};
}

std::uint64_t next_u64(RngState& rng) {
  // splitmix64 output for implicit state seed + counter * golden ratio.
  ++rng.counter;
  return mix64(rng.seed + rng.counter * kGolden);
}

double next_uniform(RngState& rng) {
  return (static_cast<double>(next_u64(rng) >> 11) + 0.5) * 0x1.0p-53;
}

double next_normal(RngState& rng) {
  double u1 = next_uniform(rng);
  double u2 = next_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t next_below(RngState& rng, std::uint64_t bound) {
  if (bound == 0) throw std::domain_error("next_below: bound must be nonzero");
  std::uint64_t threshold = (-bound) % bound;  // 2^64 mod bound
  for (;;) {
    std::uint64_t x = next_u64(rng);
    if (x >= threshold) return x % bound;
  }
}

std::vector<std::uint32_t> shuffle_indices(std::size_t n, RngState& rng) {
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(next_below(rng, i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

double log_gamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("log_gamma: requires x > 0");
  // Lanczos, g = 7, 9 terms.
  static const double cof[9] = {
      0.99999999999980993,      676.5203681218851,     -1259.1392167224028,
      771.32342877765313,       -176.61502916214059,   12.507343278686905,
      -0.13857109526572012,     9.9843695780195716e-6, 1.5056327351493116e-7};
  if (x < 0.5) {
    // Reflection keeps the approximation in its accurate range.
    return std::log(M_PI / std::sin(M_PI * x)) - log_gamma(1.0 - x);
  }
  double z = x - 1.0;
  double sum = cof[0];
  for (int i = 1; i < 9; ++i) sum += cof[i] / (z + i);
  double t = z + 7.5;
  return 0.5 * std::log(2.0 * M_PI) + (z + 0.5) * std::log(t) - t + std::log(sum);
}

double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: requires x > 0");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  // Asymptotic series in 1/x^2, accurate to ~1e-15 for x >= 10.
  double r = 1.0 / (x * x);
  result += std::log(x) - 0.5 / x -
            r * (1.0 / 12.0 -
                 r * (1.0 / 120.0 -
                      r * (1.0 / 252.0 - r * (1.0 / 240.0 - r * (1.0 / 132.0)))));
  return result;
}

double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma: requires x > 0");
  double result = 0.0;
  while (x < 10.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  double r = 1.0 / (x * x);
  result +=
      (1.0 + 0.5 / x +
       r * (1.0 / 6.0 -
            r * (1.0 / 30.0 - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * (5.0 / 66.0)))))) /
      x;
  return result;
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

namespace {

void check_icdf_args(double u, double alpha) {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("gamma_icdf_approx: u must lie in (0, 1)");
  if (!(alpha > 0.0)) throw std::domain_error("gamma_icdf_approx: alpha must be > 0");
}

// log of (u * alpha * Gamma(alpha))^(1/alpha)
double log_gamma_icdf_approx(double u, double alpha) {
  return (std::log(u) + std::log(alpha) + log_gamma(alpha)) / alpha;
}

}  // namespace

double gamma_icdf_approx(double u, double alpha) {
  check_icdf_args(u, alpha);
  return std::exp(log_gamma_icdf_approx(u, alpha));
}

double gamma_icdf_approx_dalpha(double u, double alpha) {
  check_icdf_args(u, alpha);
  double s = log_gamma_icdf_approx(u, alpha);
  double ds = (1.0 / alpha + digamma(alpha)) / alpha - s / alpha;
  return std::exp(s) * ds;
}

std::vector<double> dirichlet_from_uniforms(const DirichletParams& params,
                                            std::span<const double> u) {
  const auto& alpha = params.alpha;
  if (alpha.empty()) throw std::invalid_argument("dirichlet sample: empty alpha");
  if (u.size() != alpha.size())
    throw std::invalid_argument("dirichlet sample: uniforms/alpha size mismatch");
  require_positive(alpha, "dirichlet sample");
  std::vector<double> logz(alpha.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    if (!(u[k] > 0.0 && u[k] < 1.0))
      throw std::domain_error("dirichlet sample: uniforms must lie in (0, 1)");
    logz[k] = log_gamma_icdf_approx(u[k], alpha[k]);
  }
  return softmax(logz);
}

std::vector<double> dirichlet_sample(const DirichletParams& params, RngState& rng) {
  std::vector<double> u(params.alpha.size());
  for (double& x : u) x = next_uniform(rng);
  return dirichlet_from_uniforms(params, u);
}

double kl_multigamma(std::span<const double> alpha_hat, std::span<const double> alpha) {
  if (alpha_hat.size() != alpha.size())
    throw std::invalid_argument("kl_multigamma: size mismatch");
  if (alpha_hat.empty()) throw std::invalid_argument("kl_multigamma: empty input");
  require_positive(alpha_hat, "kl_multigamma");
  require_positive(alpha, "kl_multigamma");
  double kl = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    kl += log_gamma(alpha[k]) - log_gamma(alpha_hat[k]) +
          (alpha_hat[k] - alpha[k]) * digamma(alpha_hat[k]);
  }
  return kl;
}

double kl_multigamma(const DirichletParams& alpha_hat, const DirichletParams& alpha) {
  return kl_multigamma(std::span<const double>(alpha_hat.alpha),
                       std::span<const double>(alpha.alpha));
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace npc
