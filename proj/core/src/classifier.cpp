#include "npc/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "byte_io.hpp"

namespace npc {

namespace {

constexpr std::uint32_t kModelMagic = 0x4D43504Eu;  // "NPCM" little-endian
constexpr std::uint32_t kFormatVersion = 1;

std::uint32_t argmax_row(const double* row, std::size_t c) {
  std::uint32_t best = 0;
  for (std::size_t k = 1; k < c; ++k) {
    if (row[k] > row[best]) best = static_cast<std::uint32_t>(k);
  }
  return best;
}

// log-softmax rows, written into logits in place
void log_softmax_inplace(Matrix& logits) {
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double* row = logits.row(i);
    double m = row[0];
    for (std::size_t k = 1; k < logits.cols(); ++k) m = std::max(m, row[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.cols(); ++k) sum += std::exp(row[k] - m);
    const double lse = m + std::log(sum);
    for (std::size_t k = 0; k < logits.cols(); ++k) row[k] -= lse;
  }
}

double ce_loss_and_grads(const MlpModel& model, const Matrix& x,
                         const std::vector<std::uint32_t>& labels, double smoothing,
                         MlpGrads* grads) {
  const std::size_t n = x.rows();
  const std::size_t c = model.output_dim();
  if (labels.size() != n) throw std::invalid_argument("cross-entropy: label count mismatch");
  if (!(smoothing >= 0.0 && smoothing < 1.0))
    throw std::domain_error("cross-entropy: smoothing must lie in [0, 1)");
  if (model.head != Head::Softmax)
    throw std::invalid_argument("cross-entropy: needs a softmax-head model");

  const double off = smoothing / static_cast<double>(c);
  const double on = 1.0 - smoothing + off;

  MlpTrace trace;
  Matrix logits = mlp_logits(model, x, grads ? &trace : nullptr);
  Matrix logp = logits;
  log_softmax_inplace(logp);

  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* lp = logp.row(i);
    if (smoothing > 0.0) {
      for (std::size_t k = 0; k < c; ++k) loss -= off * lp[k];
      loss -= (on - off) * lp[labels[i]];
    } else {
      loss -= lp[labels[i]];
    }
  }
  loss /= static_cast<double>(n);

  if (grads) {
    Matrix dlogits(n, c);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* lp = logp.row(i);
      double* d = dlogits.row(i);
      for (std::size_t k = 0; k < c; ++k) d[k] = (std::exp(lp[k]) - off) * inv;
      d[labels[i]] -= (on - off) * inv;
    }
    mlp_backward(model, trace, dlogits, *grads);
  }
  return loss;
}

double subset_accuracy(const MlpModel& model, const Matrix& features,
                       const std::vector<std::uint32_t>& labels,
                       const std::vector<std::uint32_t>& idx) {
  if (idx.empty()) return 0.0;
  Matrix x(idx.size(), features.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = features.row(idx[i]);
    std::copy(src, src + features.cols(), x.row(i));
  }
  Matrix logits = mlp_logits(model, x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (argmax_row(logits.row(i), logits.cols()) == labels[idx[i]]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

}  // namespace

double ce_loss(const MlpModel& model, const Matrix& x,
               const std::vector<std::uint32_t>& labels, double smoothing) {
  return ce_loss_and_grads(model, x, labels, smoothing, nullptr);
}

MlpGrads ce_gradients(const MlpModel& model, const Matrix& x,
                      const std::vector<std::uint32_t>& labels, double smoothing) {
  MlpGrads grads = make_grads(model);
  ce_loss_and_grads(model, x, labels, smoothing, &grads);
  return grads;
}

MlpModel train_classifier(const Dataset& ds, const TrainConfig& cfg) {
  const std::vector<std::uint32_t>& labels =
      ds.noisy_labels.empty() ? ds.true_labels : ds.noisy_labels;
  if (labels.empty()) throw std::logic_error("train_classifier: dataset has no labels");
  if (ds.num_classes < 2)
    throw std::invalid_argument("train_classifier: need at least 2 classes");
  if (cfg.batch_size == 0) throw std::invalid_argument("train_classifier: batch_size == 0");
  if (cfg.epochs == 0) throw std::invalid_argument("train_classifier: epochs == 0");
  const std::size_t n = ds.size();
  if (n < 2) throw std::invalid_argument("train_classifier: need at least 2 samples");

  // Independent streams per concern so config toggles do not shift each other.
  RngState split_rng = substream(cfg.seed, 1);
  RngState init_rng = substream(cfg.seed, 2);
  RngState batch_rng = substream(cfg.seed, 3);

  std::vector<std::uint32_t> train_idx;
  std::vector<std::uint32_t> val_idx;
  if (cfg.early_stop) {
    if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
      throw std::domain_error("train_classifier: val_fraction must lie in (0, 1)");
    auto perm = shuffle_indices(n, split_rng);
    std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.val_fraction * n)));
    n_val = std::min(n_val, n - 1);
    val_idx.assign(perm.begin(), perm.begin() + n_val);
    train_idx.assign(perm.begin() + n_val, perm.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
  } else {
    train_idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) train_idx[i] = static_cast<std::uint32_t>(i);
  }

  std::vector<std::uint32_t> dims;
  dims.push_back(static_cast<std::uint32_t>(ds.dim()));
  for (std::uint32_t l = 0; l < cfg.hidden_layers; ++l) dims.push_back(cfg.hidden_width);
  dims.push_back(ds.num_classes);
  MlpModel model = init_mlp(dims, Head::Softmax, init_rng);
  AdamState adam = make_adam(model);

  MlpModel best = model;
  double best_acc = -1.0;
  std::uint32_t wait = 0;

  Matrix bx;
  std::vector<std::uint32_t> by;
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = shuffle_indices(train_idx.size(), batch_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      bx = Matrix(count, ds.dim());
      by.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t src = train_idx[order[start + i]];
        std::copy(ds.features.row(src), ds.features.row(src) + ds.dim(), bx.row(i));
        by[i] = labels[src];
      }
      MlpGrads grads = make_grads(model);
      double loss = ce_loss_and_grads(model, bx, by, cfg.smoothing, &grads);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_classifier: loss diverged at epoch " +
                                 std::to_string(epoch));
      adam_step(model, grads, adam, cfg.learning_rate);
    }

    if (cfg.early_stop) {
      double acc = subset_accuracy(model, ds.features, labels, val_idx);
      if (acc > best_acc) {
        best_acc = acc;
        best = model;
        wait = 0;
      } else if (++wait >= cfg.patience) {
        break;
      }
    }
  }
  return cfg.early_stop ? best : model;
}

PredictionSet predict(const MlpModel& model, const Matrix& features) {
  if (model.head != Head::Softmax)
    throw std::invalid_argument("predict: needs a softmax-head model");
  MlpTrace trace;
  Matrix logits = mlp_logits(model, features, &trace);
  PredictionSet out;
  out.probs = apply_head(Head::Softmax, logits);
  out.embeddings = trace.act[trace.act.size() - 2];
  quantize_f32(out.probs);
  quantize_f32(out.embeddings);
  return out;
}

void save_model(const MlpModel& model, const std::string& path) {
  if (model.head != Head::Softmax)
    throw std::invalid_argument("save_model: classifier checkpoints are softmax-head only");
  detail::ByteWriter w;
  w.u32le(kModelMagic);
  w.u32le(kFormatVersion);
  w.u32le(static_cast<std::uint32_t>(model.w.size()));
  for (std::uint32_t d : model.dims) w.u32le(d);
  for (std::size_t l = 0; l < model.w.size(); ++l) {
    for (double v : model.w[l].data()) w.f32le(static_cast<float>(v));
    for (double v : model.b[l]) w.f32le(static_cast<float>(v));
  }
  w.write_to(path);
}

MlpModel load_model(const std::string& path) {
  detail::ByteReader r = detail::open_reader(path);
  if (r.u32le() != kModelMagic) r.fail("bad magic, expected NPCM", 0);
  std::uint32_t version = r.u32le();
  if (version != kFormatVersion) r.fail("unsupported version " + std::to_string(version), 4);
  std::uint64_t layers_at = r.offset();
  std::uint32_t layers = r.u32le();
  if (layers == 0) r.fail("model has no layers", layers_at);

  MlpModel m;
  m.head = Head::Softmax;
  m.dims.resize(layers + 1);
  for (std::uint32_t& d : m.dims) {
    std::uint64_t at = r.offset();
    d = r.u32le();
    if (d == 0) r.fail("zero-width layer", at);
  }
  for (std::uint32_t l = 0; l < layers; ++l) {
    Matrix w(m.dims[l + 1], m.dims[l]);
    for (double& v : w.data()) v = static_cast<double>(r.f32le());
    m.w.push_back(std::move(w));
    std::vector<double> b(m.dims[l + 1]);
    for (double& v : b) v = static_cast<double>(r.f32le());
    m.b.push_back(std::move(b));
  }
  r.finish();
  return m;
}

}  // namespace npc
