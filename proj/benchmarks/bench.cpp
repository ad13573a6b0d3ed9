#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "npc/mathcore.hpp"
#include "npc/mlp.hpp"
#include "npc/npc_model.hpp"
#include "npc/prior.hpp"

namespace {

std::vector<double> uniform_inputs(std::size_t n, double lo, double hi, std::uint64_t seed) {
  npc::RngState rng = npc::make_rng(seed);
  std::vector<double> out(n);
  for (double& v : out) v = lo + (hi - lo) * npc::next_uniform(rng);
  return out;
}

void BM_LogGamma(benchmark::State& state) {
  const std::vector<double> xs = uniform_inputs(1024, 0.1, 25.0, 1);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(npc::log_gamma(xs[i]));
    i = (i + 1) & 1023;
  }
}
BENCHMARK(BM_LogGamma);

void BM_Digamma(benchmark::State& state) {
  const std::vector<double> xs = uniform_inputs(1024, 0.1, 25.0, 2);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(npc::digamma(xs[i]));
    i = (i + 1) & 1023;
  }
}
BENCHMARK(BM_Digamma);

void BM_GammaIcdf(benchmark::State& state) {
  const std::vector<double> us = uniform_inputs(1024, 0.01, 0.99, 3);
  const std::vector<double> alphas = uniform_inputs(1024, 0.2, 20.0, 4);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(npc::gamma_icdf_approx(us[i], alphas[i]));
    i = (i + 1) & 1023;
  }
}
BENCHMARK(BM_GammaIcdf);

void BM_DirichletSample(benchmark::State& state) {
  const std::uint32_t c = static_cast<std::uint32_t>(state.range(0));
  npc::DirichletParams params;
  params.alpha = uniform_inputs(c, 0.5, 10.0, 5);
  npc::RngState rng = npc::make_rng(6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(npc::dirichlet_sample(params, rng));
  }
  state.SetItemsProcessed(state.iterations() * c);
}
BENCHMARK(BM_DirichletSample)->Arg(4)->Arg(16)->Arg(64);

void BM_KlMultigamma(benchmark::State& state) {
  const std::uint32_t c = static_cast<std::uint32_t>(state.range(0));
  const std::vector<double> alpha_hat = uniform_inputs(c, 0.5, 10.0, 7);
  const std::vector<double> alpha = uniform_inputs(c, 0.5, 10.0, 8);
  for (auto _ : state) {
    benchmark::DoNotOptimize(npc::kl_multigamma(alpha_hat, alpha));
  }
  state.SetItemsProcessed(state.iterations() * c);
}
BENCHMARK(BM_KlMultigamma)->Arg(4)->Arg(16)->Arg(64);

void BM_KnnVote(benchmark::State& state) {
  const std::uint32_t m = 1000;
  const std::uint32_t d = static_cast<std::uint32_t>(state.range(0));
  const std::uint32_t c = 10;
  npc::RngState rng = npc::make_rng(9);
  npc::Matrix anchors(m, d);
  for (double& v : anchors.data()) v = npc::next_normal(rng);
  std::vector<std::uint32_t> labels(m);
  for (auto& l : labels) l = static_cast<std::uint32_t>(npc::next_below(rng, c));
  const std::vector<double> query = uniform_inputs(d, -1.0, 1.0, 10);
  for (auto _ : state) {
    benchmark::DoNotOptimize(npc::knn_vote(anchors, labels, c, query, 10));
  }
}
BENCHMARK(BM_KnnVote)->Arg(16)->Arg(128);

void BM_MlpForward(benchmark::State& state) {
  const std::uint32_t d = static_cast<std::uint32_t>(state.range(0));
  const std::uint32_t batch = 128;
  npc::RngState rng = npc::make_rng(11);
  const npc::MlpModel model = npc::init_mlp({d, 128, 128, 10}, npc::Head::Softmax, rng);
  npc::Matrix x(batch, d);
  for (double& v : x.data()) v = npc::next_normal(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(npc::mlp_logits(model, x));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpForward)->Arg(16)->Arg(784);

void BM_ElboStep(benchmark::State& state) {
  const std::uint32_t d = 16;
  const std::uint32_t c = 4;
  const std::uint32_t batch = 128;
  npc::RngState rng = npc::make_rng(12);
  npc::NpcModel model;
  model.dim = d;
  model.classes = c;
  model.encoder = npc::init_mlp({d + c, 128, 128, c}, npc::Head::Softplus, rng);
  model.decoder = npc::init_mlp({d + c, 128, 128, c}, npc::Head::Sigmoid, rng);
  npc::Matrix x(batch, d);
  for (double& v : x.data()) v = npc::next_normal(rng);
  std::vector<std::uint32_t> y_hat(batch);
  for (auto& y : y_hat) y = static_cast<std::uint32_t>(npc::next_below(rng, c));
  npc::Matrix prior(batch, c, 1.0);
  npc::Matrix u(batch, c);
  for (double& v : u.data()) v = 0.02 + 0.96 * npc::next_uniform(rng);
  npc::NpcGrads grads;
  for (auto _ : state) {
    benchmark::DoNotOptimize(npc::elbo_with_grads(model, x, y_hat, prior, u, grads));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ElboStep);

}  // namespace

BENCHMARK_MAIN();
