#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "npc/classifier.hpp"
#include "npc/data.hpp"
#include "npc/mlp.hpp"
#include "oracles.hpp"

using namespace npc;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("tmp_cls_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

MlpModel two_layer_fixture() {
  MlpModel m;
  m.dims = {2, 2, 2};
  m.head = Head::Softmax;
  m.w.assign(2, Matrix(2, 2));
  m.b.assign(2, std::vector<double>(2, 0.0));
  m.w[0](0, 0) = 1.0;
  m.w[0](0, 1) = 2.0;
  m.w[0](1, 0) = -1.0;
  m.w[0](1, 1) = 0.5;
  m.b[0] = {0.5, -1.0};
  m.w[1](0, 0) = 1.0;
  m.w[1](0, 1) = 1.0;
  m.w[1](1, 0) = 2.0;
  m.w[1](1, 1) = -1.0;
  m.b[1] = {0.0, 1.0};
  return m;
}

MlpModel random_model(std::vector<std::uint32_t> dims, Head head, std::uint64_t seed) {
  RngState rng = make_rng(seed);
  return init_mlp(std::move(dims), head, rng);
}

Matrix random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  Matrix x(n, d);
  RngState rng = make_rng(seed);
  for (double& v : x.data()) v = next_normal(rng);
  return x;
}

double weighted_logit_sum(const MlpModel& model, const Matrix& x, const Matrix& weight) {
  Matrix logits = mlp_logits(model, x);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j)
      total += logits(i, j) * weight(i, j);
  return total;
}

Dataset separated_clusters(std::uint32_t c, std::size_t per_class, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = c;
  spec.num_samples = per_class * c;
  spec.dim = 4;
  spec.spread = 0.5;
  RngState rng = make_rng(seed);
  return generate_gaussian_mixture(spec, rng);
}

double accuracy_against(const MlpModel& model, const Dataset& ds,
                        const std::vector<std::uint32_t>& labels) {
  PredictionSet preds = predict(model, ds.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::uint32_t best = 0;
    for (std::uint32_t j = 1; j < ds.num_classes; ++j)
      if (preds.probs(i, j) > preds.probs(i, best)) best = j;
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

}  // namespace

TEST_CASE("forward pass matches a hand-computed two-layer network") {
  MlpModel m = two_layer_fixture();
  Matrix x(1, 2);
  x(0, 0) = 1.0;
  x(0, 1) = 1.0;

  MlpTrace trace;
  Matrix logits = mlp_logits(m, x, &trace);
  REQUIRE(logits.rows() == 1);
  REQUIRE(logits.cols() == 2);
  CHECK(logits(0, 0) == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(logits(0, 1) == doctest::Approx(8.0).epsilon(1e-15));

  REQUIRE(trace.act.size() == 3);
  CHECK(trace.act[1](0, 0) == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(trace.act[1](0, 1) == 0.0);
  CHECK(trace.act[2] == logits);
}

TEST_CASE("output heads") {
  Matrix logits(1, 2);
  logits(0, 0) = std::log(2.0);
  logits(0, 1) = 0.0;
  Matrix sm = apply_head(Head::Softmax, logits);
  CHECK(sm(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(sm(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  Matrix z(1, 3);
  z(0, 0) = 0.0;
  z(0, 1) = 100.0;
  z(0, 2) = -100.0;
  Matrix sg = apply_head(Head::Sigmoid, z);
  CHECK(sg(0, 0) == 0.5);
  CHECK(sg(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sg(0, 2) == doctest::Approx(0.0).epsilon(1e-12));

  Matrix sp = apply_head(Head::Softplus, z);
  CHECK(sp(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(sp(0, 1) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("backward pass matches finite differences of the forward pass") {
  MlpModel m = random_model({3, 4, 2}, Head::Softmax, 31);
  Matrix x = random_batch(5, 3, 32);
  Matrix weight = random_batch(5, 2, 33);

  MlpTrace trace;
  mlp_logits(m, x, &trace);
  MlpGrads grads = make_grads(m);
  Matrix dx(5, 3);
  mlp_backward(m, trace, weight, grads, &dx);

  const double h = 1e-5;
  for (std::size_t l = 0; l < m.w.size(); ++l) {
    for (std::size_t i = 0; i < m.w[l].data().size(); ++i) {
      MlpModel plus = m;
      MlpModel minus = m;
      plus.w[l].data()[i] += h;
      minus.w[l].data()[i] -= h;
      const double fd =
          (weighted_logit_sum(plus, x, weight) - weighted_logit_sum(minus, x, weight)) /
          (2.0 * h);
      CHECK(oracle::rel_err(grads.w[l].data()[i], fd, 1e-8) < 1e-5);
    }
    for (std::size_t i = 0; i < m.b[l].size(); ++i) {
      MlpModel plus = m;
      MlpModel minus = m;
      plus.b[l][i] += h;
      minus.b[l][i] -= h;
      const double fd =
          (weighted_logit_sum(plus, x, weight) - weighted_logit_sum(minus, x, weight)) /
          (2.0 * h);
      CHECK(oracle::rel_err(grads.b[l][i], fd, 1e-8) < 1e-5);
    }
  }

  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      Matrix plus = x;
      Matrix minus = x;
      plus(i, j) += h;
      minus(i, j) -= h;
      const double fd =
          (weighted_logit_sum(m, plus, weight) - weighted_logit_sum(m, minus, weight)) /
          (2.0 * h);
      CHECK(oracle::rel_err(dx(i, j), fd, 1e-8) < 1e-5);
    }
  }
}

TEST_CASE("adam updates follow the bias-corrected moment estimates") {
  MlpModel m;
  m.dims = {1, 1};
  m.head = Head::Softmax;
  m.w.assign(1, Matrix(1, 1));
  m.b.assign(1, std::vector<double>(1, 0.0));
  m.w[0](0, 0) = 0.5;
  m.b[0][0] = -0.25;

  MlpGrads grads = make_grads(m);
  grads.w[0](0, 0) = 0.2;
  grads.b[0][0] = 0.1;

  AdamState state = make_adam(m);
  const double lr = 0.01;
  double mw = 0.0, vw = 0.0, mb = 0.0, vb = 0.0;
  double w = 0.5, b = -0.25;
  for (int step = 1; step <= 3; ++step) {
    adam_step(m, grads, state, lr);
    mw = 0.9 * mw + 0.1 * 0.2;
    vw = 0.999 * vw + 0.001 * 0.04;
    mb = 0.9 * mb + 0.1 * 0.1;
    vb = 0.999 * vb + 0.001 * 0.01;
    const double c1 = 1.0 - std::pow(0.9, step);
    const double c2 = 1.0 - std::pow(0.999, step);
    w -= lr * (mw / c1) / (std::sqrt(vw / c2) + 1e-8);
    b -= lr * (mb / c1) / (std::sqrt(vb / c2) + 1e-8);
    CHECK(m.w[0](0, 0) == doctest::Approx(w).epsilon(1e-12));
    CHECK(m.b[0][0] == doctest::Approx(b).epsilon(1e-12));
  }
  CHECK(state.step == 3);
}

TEST_CASE("he initialization is replayable with near-target variance") {
  MlpModel a = random_model({100, 128, 10}, Head::Softmax, 34);
  MlpModel b = random_model({100, 128, 10}, Head::Softmax, 34);
  CHECK(a == b);

  for (const auto& bias : a.b)
    for (double v : bias) CHECK(v == 0.0);

  const double fan_in = 100.0;
  double mean = 0.0;
  double var = 0.0;
  const auto& w = a.w[0].data();
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 2.0 / fan_in) < 0.4 / fan_in);
}

TEST_CASE("cross-entropy with label smoothing matches the closed form") {
  MlpModel m;
  m.dims = {2, 3};
  m.head = Head::Softmax;
  m.w.assign(1, Matrix(3, 2));
  m.b.assign(1, std::vector<double>(3, 0.0));
  m.b[0] = {std::log(0.7), std::log(0.2), std::log(0.1)};

  Matrix x(1, 2);
  std::vector<std::uint32_t> labels = {0};
  CHECK(ce_loss(m, x, labels, 0.0) == doctest::Approx(-std::log(0.7)).epsilon(1e-12));

  const double eps = 0.3;
  const double on = 1.0 - eps + eps / 3.0;
  const double off = eps / 3.0;
  const double expected =
      -(on * std::log(0.7) + off * std::log(0.2) + off * std::log(0.1));
  CHECK(ce_loss(m, x, labels, eps) == doctest::Approx(expected).epsilon(1e-12));

  CHECK(1.0 - 0.1 + 0.1 / 10.0 == doctest::Approx(0.91).epsilon(1e-15));

  CHECK_THROWS_AS(ce_loss(m, x, labels, 1.0), std::domain_error);
  CHECK_THROWS_AS(ce_loss(m, x, {0, 1}, 0.0), std::invalid_argument);
}

TEST_CASE("loss under uniform predictions is exactly log c") {
  MlpModel m = random_model({6, 16, 5}, Head::Softmax, 35);
  for (auto& layer : m.w)
    for (double& v : layer.data()) v = 0.0;
  Matrix x = random_batch(40, 6, 36);
  std::vector<std::uint32_t> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = static_cast<std::uint32_t>(i % 5);
  CHECK(ce_loss(m, x, labels, 0.0) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(ce_loss(m, x, labels, 0.3) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("cross-entropy gradients match finite differences") {
  MlpModel m = random_model({4, 8, 3}, Head::Softmax, 37);
  Matrix x = random_batch(6, 4, 38);
  std::vector<std::uint32_t> labels = {0, 2, 1, 1, 0, 2};
  const double smoothing = 0.1;
  MlpGrads grads = ce_gradients(m, x, labels, smoothing);

  const double h = 1e-6;
  for (std::size_t l = 0; l < m.w.size(); ++l) {
    for (std::size_t i = 0; i < m.w[l].data().size(); ++i) {
      MlpModel plus = m;
      MlpModel minus = m;
      plus.w[l].data()[i] += h;
      minus.w[l].data()[i] -= h;
      const double fd = (ce_loss(plus, x, labels, smoothing) -
                         ce_loss(minus, x, labels, smoothing)) /
                        (2.0 * h);
      CHECK(oracle::rel_err(grads.w[l].data()[i], fd, 1e-7) < 1e-4);
    }
    for (std::size_t i = 0; i < m.b[l].size(); ++i) {
      MlpModel plus = m;
      MlpModel minus = m;
      plus.b[l][i] += h;
      minus.b[l][i] -= h;
      const double fd = (ce_loss(plus, x, labels, smoothing) -
                         ce_loss(minus, x, labels, smoothing)) /
                        (2.0 * h);
      CHECK(oracle::rel_err(grads.b[l][i], fd, 1e-7) < 1e-4);
    }
  }
}

TEST_CASE("training separates well-spread clusters and is replayable") {
  Dataset ds = separated_clusters(3, 100, 39);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 32;
  cfg.hidden_width = 32;
  cfg.seed = 40;
  MlpModel model = train_classifier(ds, cfg);
  CHECK(accuracy_against(model, ds, ds.true_labels) >= 0.95);

  MlpModel again = train_classifier(ds, cfg);
  CHECK(model == again);

  cfg.seed = 41;
  MlpModel other = train_classifier(ds, cfg);
  CHECK(model != other);
}

TEST_CASE("training fits the noisy labels when they are present") {
  Dataset ds = separated_clusters(3, 80, 42);
  ds.noisy_labels.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    ds.noisy_labels[i] = (ds.true_labels[i] + 1) % 3;

  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 32;
  cfg.hidden_width = 32;
  cfg.seed = 43;
  MlpModel model = train_classifier(ds, cfg);
  CHECK(accuracy_against(model, ds, ds.noisy_labels) >= 0.95);
  CHECK(accuracy_against(model, ds, ds.true_labels) <= 0.1);
}

TEST_CASE("predictions expose penultimate activations as embeddings") {
  Dataset ds = separated_clusters(2, 30, 44);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 2;
  cfg.early_stop = false;
  cfg.seed = 45;
  MlpModel model = train_classifier(ds, cfg);

  PredictionSet preds = predict(model, ds.features);
  REQUIRE(preds.size() == ds.size());
  REQUIRE(preds.classes() == 2);
  REQUIRE(preds.has_embeddings());
  REQUIRE(preds.embeddings.cols() == 8);

  for (std::size_t i = 0; i < preds.size(); ++i) {
    double sum = 0.0;
    for (std::uint32_t j = 0; j < 2; ++j) sum += preds.probs(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  MlpTrace trace;
  mlp_logits(model, ds.features, &trace);
  const Matrix& penultimate = trace.act[trace.act.size() - 2];
  for (std::size_t j = 0; j < 8; ++j) {
    const double raw = penultimate(0, j);
    const double stored = preds.embeddings(0, j);
    CHECK(stored == doctest::Approx(static_cast<double>(static_cast<float>(raw)))
                        .epsilon(1e-12));
  }
}

TEST_CASE("training validates its configuration") {
  Dataset ds = separated_clusters(2, 10, 46);
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train_classifier(ds, cfg), std::invalid_argument);
  cfg.epochs = 5;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train_classifier(ds, cfg), std::invalid_argument);
  cfg.batch_size = 8;
  cfg.early_stop = true;
  cfg.val_fraction = 0.0;
  CHECK_THROWS_AS(train_classifier(ds, cfg), std::domain_error);
  cfg.val_fraction = 0.1;
  cfg.early_stop = false;

  Dataset unlabeled = ds;
  unlabeled.true_labels.clear();
  CHECK_THROWS_AS(train_classifier(unlabeled, cfg), std::logic_error);
}

TEST_CASE("classifier checkpoints round-trip exactly") {
  TempFile f("model.npcm");
  Dataset ds = separated_clusters(3, 20, 47);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.hidden_width = 8;
  cfg.early_stop = false;
  cfg.seed = 48;
  MlpModel model = train_classifier(ds, cfg);

  save_model(model, f.path);
  MlpModel back = load_model(f.path);
  CHECK(back.dims == model.dims);
  CHECK(back.head == Head::Softmax);
  for (std::size_t l = 0; l < model.w.size(); ++l) {
    for (std::size_t i = 0; i < model.w[l].data().size(); ++i) {
      const double v = model.w[l].data()[i];
      CHECK(back.w[l].data()[i] == static_cast<double>(static_cast<float>(v)));
    }
  }

  RngState rng = make_rng(49);
  MlpModel sigmoid_head = init_mlp({2, 3}, Head::Sigmoid, rng);
  CHECK_THROWS_AS(save_model(sigmoid_head, f.path), std::invalid_argument);

  std::FILE* out = std::fopen(f.path.c_str(), "wb");
  const char junk[4] = {'J', 'U', 'N', 'K'};
  std::fwrite(junk, 1, 4, out);
  std::fclose(out);
  CHECK_THROWS_AS(load_model(f.path), FormatError);
}
