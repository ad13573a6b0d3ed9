#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "npc/mathcore.hpp"
#include "oracles.hpp"

using namespace npc;

TEST_CASE("rng streams replay exactly and substreams differ") {
  RngState a = make_rng(42);
  RngState b = make_rng(42);
  for (int i = 0; i < 100; ++i) CHECK(next_u64(a) == next_u64(b));

  RngState snapshot = a;
  std::vector<std::uint64_t> tail;
  for (int i = 0; i < 8; ++i) tail.push_back(next_u64(a));
  for (int i = 0; i < 8; ++i) CHECK(next_u64(snapshot) == tail[i]);

  RngState s1 = substream(42, 1);
  RngState s2 = substream(42, 2);
  RngState s1_again = substream(42, 1);
  CHECK(next_u64(s1) != next_u64(s2));
  s1 = substream(42, 1);
  CHECK(next_u64(s1) == next_u64(s1_again));
}

TEST_CASE("uniform draws stay inside the open unit interval") {
  RngState rng = make_rng(7);
  double lo = 1.0;
  double hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = next_uniform(rng);
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("normal draws match standard moments loosely") {
  RngState rng = make_rng(9);
  const int n = 100000;
  double sum = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = next_normal(rng);
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("next_below is bounded and roughly uniform") {
  RngState rng = make_rng(3);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 50000; ++i) {
    const std::uint64_t v = next_below(rng, 10);
    REQUIRE(v < 10);
    ++counts[v];
  }
  for (int c : counts) {
    CHECK(c > 4500);
    CHECK(c < 5500);
  }
  CHECK_THROWS_AS(next_below(rng, 0), std::domain_error);
}

TEST_CASE("shuffle_indices is a permutation and replays by seed") {
  RngState rng = make_rng(5);
  auto perm = shuffle_indices(257, rng);
  std::vector<bool> seen(257, false);
  for (auto i : perm) {
    REQUIRE(i < 257);
    CHECK(!seen[i]);
    seen[i] = true;
  }
  RngState rng2 = make_rng(5);
  CHECK(shuffle_indices(257, rng2) == perm);
}

TEST_CASE("log_gamma matches the C library and its recurrence") {
  CHECK(log_gamma(5.0) == doctest::Approx(3.1780538303479458).epsilon(1e-14));
  CHECK(log_gamma(0.5) == doctest::Approx(0.5723649429247001).epsilon(1e-14));
  CHECK(log_gamma(1.0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(log_gamma(2.0) == doctest::Approx(0.0).epsilon(1e-14));

  RngState rng = make_rng(11);
  for (int i = 0; i < 200; ++i) {
    const double x = 0.01 + 30.0 * next_uniform(rng);
    CHECK(oracle::rel_err(log_gamma(x), std::lgamma(x), 1e-12) < 1e-12);
    CHECK(oracle::rel_err(log_gamma(x + 1.0), log_gamma(x) + std::log(x), 1e-12) < 1e-12);
  }
  CHECK_THROWS_AS(log_gamma(0.0), std::domain_error);
  CHECK_THROWS_AS(log_gamma(-1.0), std::domain_error);
}

TEST_CASE("digamma and trigamma frozen values, recurrences, consistency") {
  CHECK(digamma(1.0) == doctest::Approx(-0.5772156649015329).epsilon(1e-13));
  CHECK(digamma(2.0) == doctest::Approx(0.4227843350984671).epsilon(1e-13));
  CHECK(digamma(0.5) == doctest::Approx(-1.9635100260214235).epsilon(1e-13));
  CHECK(trigamma(1.0) == doctest::Approx(1.6449340668482264).epsilon(1e-12));
  CHECK(trigamma(0.5) == doctest::Approx(4.934802200544679).epsilon(1e-12));

  RngState rng = make_rng(13);
  for (int i = 0; i < 200; ++i) {
    const double x = 0.05 + 20.0 * next_uniform(rng);
    CHECK(oracle::rel_err(digamma(x + 1.0), digamma(x) + 1.0 / x, 1e-10) < 1e-12);
    CHECK(oracle::rel_err(trigamma(x + 1.0), trigamma(x) - 1.0 / (x * x), 1e-10) < 1e-11);
    const double h = 1e-5 * std::max(1.0, x);
    const double fd = (log_gamma(x + h) - log_gamma(x - h)) / (2.0 * h);
    CHECK(oracle::rel_err(digamma(x), fd, 1e-8) < 1e-7);
    const double fd2 = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
    CHECK(oracle::rel_err(trigamma(x), fd2, 1e-8) < 1e-6);
  }
  CHECK_THROWS_AS(digamma(0.0), std::domain_error);
  CHECK_THROWS_AS(trigamma(-2.0), std::domain_error);
}

TEST_CASE("softplus is stable at both extremes") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(700.0) == doctest::Approx(700.0).epsilon(1e-12));
  CHECK(softplus(-700.0) == doctest::Approx(std::exp(-700.0)).epsilon(1e-12));
  RngState rng = make_rng(17);
  for (int i = 0; i < 100; ++i) {
    const double x = 40.0 * (next_uniform(rng) - 0.5);
    CHECK(softplus(x) - softplus(-x) == doctest::Approx(x).epsilon(1e-12));
    CHECK(softplus(x) > 0.0);
  }
}

TEST_CASE("gamma inverse-CDF approximation: closed forms and derivative") {
  CHECK(gamma_icdf_approx(0.5, 2.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(gamma_icdf_approx(0.5, 1.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(gamma_icdf_approx(0.2, 0.5) ==
        doctest::Approx(0.031415926535897934).epsilon(1e-13));

  RngState rng = make_rng(19);
  for (int i = 0; i < 100; ++i) {
    const double u = 0.05 + 0.9 * next_uniform(rng);
    const double a = 0.2 + 5.0 * next_uniform(rng);
    const double h = 1e-6 * a;
    const double fd = (gamma_icdf_approx(u, a + h) - gamma_icdf_approx(u, a - h)) / (2.0 * h);
    CHECK(oracle::rel_err(gamma_icdf_approx_dalpha(u, a), fd, 1e-9) < 1e-5);
  }
  CHECK_THROWS_AS(gamma_icdf_approx(0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(gamma_icdf_approx(1.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(gamma_icdf_approx(0.5, 0.0), std::domain_error);
}

TEST_CASE("dirichlet construction from explicit uniforms") {
  DirichletParams params{{2.0, 1.0}};
  const std::vector<double> u{0.5, 0.5};
  const auto y = dirichlet_from_uniforms(params, u);
  REQUIRE(y.size() == 2);
  CHECK(y[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("dirichlet draws live on the simplex even at tiny concentrations") {
  RngState rng = make_rng(23);
  for (int rep = 0; rep < 200; ++rep) {
    DirichletParams params{{1e-4, 0.5 + next_uniform(rng), 5.0 * next_uniform(rng) + 0.1}};
    const auto y = dirichlet_sample(params, rng);
    REQUIRE(y.size() == 3);
    double sum = 0.0;
    for (double v : y) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("dirichlet_sample replays as dirichlet_from_uniforms") {
  DirichletParams params{{0.3, 2.0, 7.5}};
  RngState rng = make_rng(29);
  RngState clone = rng;
  const auto drawn = dirichlet_sample(params, rng);
  std::vector<double> u(3);
  for (double& v : u) v = next_uniform(clone);
  CHECK(drawn == dirichlet_from_uniforms(params, u));
}

TEST_CASE("kl_multigamma frozen values and basic laws") {
  const std::vector<double> two{2.0, 2.0};
  const std::vector<double> one{1.0, 1.0};
  CHECK(kl_multigamma(two, one) == doctest::Approx(0.8455686701969342).epsilon(1e-13));
  CHECK(kl_multigamma(one, two) == doctest::Approx(1.1544313298030658).epsilon(1e-13));

  RngState rng = make_rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> a(4);
    std::vector<double> b(4);
    for (int k = 0; k < 4; ++k) {
      a[k] = 0.2 + 8.0 * next_uniform(rng);
      b[k] = 0.2 + 8.0 * next_uniform(rng);
    }
    CHECK(kl_multigamma(a, a) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(kl_multigamma(a, b) >= -1e-12);
  }
  const std::vector<double> bad{0.0, 1.0};
  CHECK_THROWS_AS(kl_multigamma(bad, one), std::domain_error);
  const std::vector<double> three{1.0, 1.0, 1.0};
  CHECK_THROWS_AS(kl_multigamma(three, one), std::invalid_argument);
}

TEST_CASE("softmax frozen value, shift invariance, errors") {
  const std::vector<double> logits{std::log(2.0), 0.0};
  const auto p = softmax(logits);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  const std::vector<double> shifted{std::log(2.0) + 123.0, 123.0};
  const auto q = softmax(shifted);
  CHECK(oracle::max_abs_diff(p, q) < 1e-14);

  const std::vector<double> big{1000.0, -1000.0, 0.0};
  const auto r = softmax(big);
  CHECK(r[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::accumulate(r.begin(), r.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(softmax(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("kl_multigamma tracks a Monte-Carlo oracle on a spot pair") {
  const std::vector<double> alpha_hat{3.0, 1.4, 6.0};
  const std::vector<double> alpha{1.0, 2.5, 4.0};
  RngState rng = make_rng(37);
  const double mc = oracle::mc_kl_multigamma(alpha_hat, alpha, 200000, rng);
  CHECK(oracle::rel_err(kl_multigamma(alpha_hat, alpha), mc, 1e-3) < 0.02);
}
