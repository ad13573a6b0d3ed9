#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "doctest.h"
#include "npc/data.hpp"
#include "npc/noise.hpp"
#include "npc/transition.hpp"
#include "oracles.hpp"

using namespace npc;

namespace {

Matrix identity(std::uint32_t c) {
  Matrix m(c, c);
  for (std::uint32_t i = 0; i < c; ++i) m(i, i) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("instance tables match the joint-distribution construction") {
  RngState rng = make_rng(91);
  for (int rep = 0; rep < 100; ++rep) {
    oracle::JointCase joint = oracle::random_joint(3, rng, 2.0);
    Matrix h = h_from_t(joint.t, joint.p_y, joint.p_yhat, joint.a);
    CHECK(oracle::max_abs_diff(h.data(), joint.h.data()) < 1e-12);
  }
}

TEST_CASE("per-instance solve inverts the table construction") {
  RngState rng = make_rng(92);
  for (int rep = 0; rep < 100; ++rep) {
    oracle::JointCase joint = oracle::random_joint(3, rng, 2.0);
    auto solved = solve_t_instance(joint.h, joint.p_y, joint.p_yhat, joint.a);
    REQUIRE(solved.has_value());
    CHECK(oracle::frobenius_diff(*solved, joint.t) < 1e-8);
    for (std::uint32_t j = 0; j < 3; ++j) {
      double row_sum = 0.0;
      for (std::uint32_t i = 0; i < 3; ++i) row_sum += (*solved)(j, i);
      CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("ill-conditioned mixing matrices are refused") {
  RngState rng = make_rng(93);
  oracle::JointCase joint = oracle::random_joint(3, rng, 2.0);

  Matrix singular = joint.a;
  for (std::uint32_t i = 0; i < 3; ++i) singular(i, 1) = singular(i, 0);
  CHECK(!solve_t_instance(joint.h, joint.p_y, joint.p_yhat, singular).has_value());

  Matrix near_singular = joint.a;
  for (std::uint32_t i = 0; i < 3; ++i)
    near_singular(i, 1) = near_singular(i, 0) * (1.0 + 1e-12);
  CHECK(!solve_t_instance(joint.h, joint.p_y, joint.p_yhat, near_singular).has_value());

  CHECK(solve_t_instance(joint.h, joint.p_y, joint.p_yhat, joint.a, 1.5).has_value() ==
        false);

  std::vector<double> degenerate_py = {1.0, 0.0, 0.0};
  CHECK(!solve_t_instance(joint.h, degenerate_py, joint.p_yhat, joint.a).has_value());
}

TEST_CASE("solved rows are clamped to the simplex") {
  RngState rng = make_rng(94);
  oracle::JointCase joint = oracle::random_joint(3, rng, 2.0);
  Matrix h = joint.h;
  h(0, 0) -= 0.4;
  h(1, 0) += 0.1;
  auto solved = solve_t_instance(h, joint.p_y, joint.p_yhat, joint.a);
  REQUIRE(solved.has_value());
  for (std::uint32_t j = 0; j < 3; ++j) {
    double row_sum = 0.0;
    for (std::uint32_t i = 0; i < 3; ++i) {
      CHECK((*solved)(j, i) >= 0.0);
      row_sum += (*solved)(j, i);
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("aggregation averages by true class and reports skips") {
  Matrix first(2, 2);
  first(0, 0) = 0.9;
  first(0, 1) = 0.1;
  first(1, 0) = 0.3;
  first(1, 1) = 0.7;
  Matrix second(2, 2);
  second(0, 0) = 0.7;
  second(0, 1) = 0.3;
  second(1, 0) = 0.5;
  second(1, 1) = 0.5;

  std::vector<std::optional<Matrix>> per_instance = {first, second, std::nullopt,
                                                     first};
  std::vector<std::uint32_t> labels = {0, 0, 0, 1};
  TransitionEstimate est = aggregate_t(per_instance, labels, 2);

  CHECK(est.skipped == 1);
  CHECK(est.class_counts == std::vector<std::uint32_t>{2, 1});
  CHECK(est.t_hat(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(est.t_hat(0, 1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(est.t_hat(1, 0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(est.t_hat(1, 1) == doctest::Approx(0.7).epsilon(1e-15));

  std::vector<std::optional<Matrix>> all_skipped = {std::nullopt, std::nullopt};
  std::vector<std::uint32_t> one_class = {0, 0};
  TransitionEstimate empty = aggregate_t(all_skipped, one_class, 2);
  CHECK(empty.skipped == 2);
  CHECK(empty.class_counts == std::vector<std::uint32_t>{0, 0});
  CHECK(oracle::max_abs_diff(empty.t_hat.data(), identity(2).data()) == 0.0);
}

TEST_CASE("mean squared difference between transition matrices") {
  Matrix a = identity(2);
  Matrix b(2, 2);
  b(0, 0) = 0.5;
  b(0, 1) = 0.5;
  b(1, 0) = 0.0;
  b(1, 1) = 1.0;
  CHECK(transition_mse(a, a) == 0.0);
  CHECK(transition_mse(a, b) == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("auxiliary net learns the label-conditional prediction map") {
  // Two separated clusters; the "classifier" prediction equals the true
  // class, and the noisy label is the true class half the time, the other
  // class otherwise. Conditioning on the noisy one-hot must still recover
  // the predicted class from the features alone.
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.num_samples = 120;
  spec.dim = 2;
  RngState gen = make_rng(95);
  Dataset ds = generate_gaussian_mixture(spec, gen);

  std::vector<std::uint32_t> noisy(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    noisy[i] = i % 2 == 0 ? ds.true_labels[i] : 1 - ds.true_labels[i];

  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 1;
  cfg.early_stop = false;
  cfg.seed = 96;
  AuxModel aux = train_aux(ds.features, noisy, 2, ds.true_labels, cfg);
  CHECK(aux.dim == 2);
  CHECK(aux.classes == 2);
  CHECK(aux.net.input_dim() == 4);

  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Matrix a = aux_matrix(aux, ds.features.row_span(i));
    REQUIRE(a.rows() == 2);
    REQUIRE(a.cols() == 2);
    for (std::uint32_t col = 0; col < 2; ++col) {
      double col_sum = 0.0;
      for (std::uint32_t row = 0; row < 2; ++row) col_sum += a(row, col);
      CHECK(col_sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    const std::uint32_t y = ds.true_labels[i];
    if (a(y, 0) > 0.5 && a(y, 1) > 0.5) ++hits;
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(ds.size()) > 0.9);

  AuxModel again = train_aux(ds.features, noisy, 2, ds.true_labels, cfg);
  CHECK(again.net == aux.net);
}

TEST_CASE("whole-dataset estimation matches the per-instance definition") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.num_samples = 90;
  spec.dim = 2;
  RngState gen = make_rng(97);
  Dataset ds = generate_gaussian_mixture(spec, gen);

  RngState noise_rng = make_rng(98);
  NoiseOutcome outcome = inject_symmetric(ds, 0.3, noise_rng);
  ds.noisy_labels = outcome.noisy_labels;

  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 1;
  cfg.early_stop = false;
  cfg.seed = 99;
  MlpModel classifier = train_classifier(ds, cfg);
  PredictionSet classifier_preds = predict(classifier, ds.features);

  std::vector<std::uint32_t> predicted(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    predicted[i] = 0;
    for (std::uint32_t j = 1; j < 3; ++j)
      if (classifier_preds.probs(i, j) > classifier_preds.probs(i, predicted[i]))
        predicted[i] = j;
  }
  AuxModel aux = train_aux(ds.features, ds.noisy_labels, 3, predicted, cfg);

  NpcConfig ncfg;
  ncfg.epochs = 10;
  ncfg.batch_size = 16;
  ncfg.hidden_width = 8;
  ncfg.hidden_layers = 1;
  ncfg.seed = 100;
  PriorConfig pcfg;
  pcfg.k = 5;
  auto rounds = iterate_npc(ds.features, classifier_preds, pcfg, ncfg, 1);
  const NpcModel& model = rounds.back().model;
  const PredictionSet& calibrated = rounds.back().calibrated;

  const double cond_cap = 1e6;
  TransitionEstimate est = estimate_transition(model, aux, ds.features,
                                               classifier_preds, calibrated,
                                               ds.true_labels, cond_cap);
  REQUIRE(est.t_hat.rows() == 3);

  std::vector<std::optional<Matrix>> per_instance(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Matrix h = h_matrix(model, ds.features.row_span(i));
    Matrix a = aux_matrix(aux, ds.features.row_span(i));
    per_instance[i] = solve_t_instance(h, calibrated.probs.row_span(i),
                                       classifier_preds.probs.row_span(i), a,
                                       cond_cap);
  }
  TransitionEstimate reference = aggregate_t(per_instance, ds.true_labels, 3);

  CHECK(est.skipped == reference.skipped);
  CHECK(est.class_counts == reference.class_counts);
  CHECK(oracle::max_abs_diff(est.t_hat.data(), reference.t_hat.data()) < 1e-9);

  std::uint32_t counted = est.skipped;
  for (std::uint32_t v : est.class_counts) counted += v;
  CHECK(counted == ds.size());
  for (std::uint32_t j = 0; j < 3; ++j) {
    double row_sum = 0.0;
    for (std::uint32_t i = 0; i < 3; ++i) row_sum += est.t_hat(j, i);
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}
