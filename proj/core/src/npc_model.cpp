#include "npc/npc_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "byte_io.hpp"

namespace npc {

namespace {

constexpr std::uint32_t kNpcMagic = 0x4E43504Eu;  // "NPCN" little-endian
constexpr std::uint32_t kFormatVersion = 1;
constexpr double kModeClamp = 1.0 + 1e-3;

std::uint32_t argmax_row(const double* row, std::size_t c) {
  std::uint32_t best = 0;
  for (std::size_t k = 1; k < c; ++k) {
    if (row[k] > row[best]) best = static_cast<std::uint32_t>(k);
  }
  return best;
}

// [x ; one-hot(label_of_row)] batches feed both networks.
Matrix concat_onehot(const Matrix& x, const std::vector<std::uint32_t>& labels,
                     std::uint32_t c) {
  Matrix out(x.rows(), x.cols() + c);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* src = x.row(i);
    double* dst = out.row(i);
    std::copy(src, src + x.cols(), dst);
    dst[x.cols() + labels[i]] = 1.0;
  }
  return out;
}

Matrix concat_values(const Matrix& x, const Matrix& values) {
  Matrix out(x.rows(), x.cols() + values.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* src = x.row(i);
    double* dst = out.row(i);
    std::copy(src, src + x.cols(), dst);
    std::copy(values.row(i), values.row(i) + values.cols(), dst + x.cols());
  }
  return out;
}

void check_elbo_args(const NpcModel& model, const Matrix& x,
                     const std::vector<std::uint32_t>& y_hat, const Matrix& prior_alpha,
                     const Matrix& u) {
  const std::size_t n = x.rows();
  const std::uint32_t c = model.classes;
  if (x.cols() != model.dim) throw std::invalid_argument("elbo: feature width mismatch");
  if (y_hat.size() != n) throw std::invalid_argument("elbo: predicted label count mismatch");
  if (prior_alpha.rows() != n || prior_alpha.cols() != c)
    throw std::invalid_argument("elbo: prior shape mismatch");
  if (u.cols() != c || u.rows() == 0 || u.rows() % n != 0)
    throw std::invalid_argument("elbo: uniforms must come in n-row mc blocks");
  for (double a : prior_alpha.data()) {
    if (!(a > 0.0)) throw std::domain_error("elbo: prior concentrations must be > 0");
  }
  for (std::uint32_t label : y_hat) {
    if (label >= c) throw std::invalid_argument("elbo: predicted label outside [0, c)");
  }
}

struct ElboResult {
  double elbo = 0.0;
};

// Forward (and optionally backward) pass of the mean ELBO. Gradients are
// d(mean ELBO)/d(params), accumulated into *grads when non-null.
ElboResult elbo_impl(const NpcModel& model, const Matrix& x,
                     const std::vector<std::uint32_t>& y_hat, const Matrix& prior_alpha,
                     const Matrix& u, NpcGrads* grads) {
  check_elbo_args(model, x, y_hat, prior_alpha, u);
  const std::size_t n = x.rows();
  const std::uint32_t c = model.classes;
  const std::size_t mc = u.rows() / n;

  MlpTrace enc_trace;
  Matrix enc_in = concat_onehot(x, y_hat, c);
  Matrix enc_logits = mlp_logits(model.encoder, enc_in, grads ? &enc_trace : nullptr);

  // alpha_hat = max(softplus(logit), floor); floored entries have zero slope.
  Matrix alpha_hat(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t k = 0; k < c; ++k)
      alpha_hat(i, k) = std::max(softplus(enc_logits(i, k)), model.alpha_floor);
  }

  double total = 0.0;
  Matrix enc_dlogits(n, c);  // d(mean ELBO)/d(encoder logits), accumulated

  // KL term, once per sample regardless of mc count.
  const double kl_w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t k = 0; k < c; ++k) {
      const double ah = alpha_hat(i, k);
      const double ap = prior_alpha(i, k);
      total -= kl_w * (log_gamma(ap) - log_gamma(ah) + (ah - ap) * digamma(ah));
      if (grads) {
        // dKL/d(alpha_hat) = (alpha_hat - alpha) * trigamma(alpha_hat)
        enc_dlogits(i, k) = -kl_w * (ah - ap) * trigamma(ah);
      }
    }
  }

  const double rec_w = 1.0 / static_cast<double>(n * mc);
  MlpGrads dec_grads_acc;
  if (grads) dec_grads_acc = make_grads(model.decoder);

  for (std::size_t s = 0; s < mc; ++s) {
    // Sampler in log space: logz_k = (ln u + ln a + lnG(a)) / a, y = softmax(logz).
    Matrix logz(n, c);
    Matrix y(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::uint32_t k = 0; k < c; ++k) {
        const double uu = u(s * n + i, k);
        if (!(uu > 0.0 && uu < 1.0))
          throw std::domain_error("elbo: uniforms must lie in (0, 1)");
        const double a = alpha_hat(i, k);
        logz(i, k) = (std::log(uu) + std::log(a) + log_gamma(a)) / a;
      }
      auto sm = softmax(logz.row_span(i));
      std::copy(sm.begin(), sm.end(), y.row(i));
    }

    MlpTrace dec_trace;
    Matrix dec_in = concat_values(x, y);
    Matrix dec_logits = mlp_logits(model.decoder, dec_in, grads ? &dec_trace : nullptr);

    // Reconstruction: sum_k yhat_k ln s(t_k) + (1 - yhat_k) ln(1 - s(t_k))
    //               = sum_k yhat_k t_k - softplus(t_k).
    Matrix dec_dlogits;
    if (grads) dec_dlogits = Matrix(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::uint32_t k = 0; k < c; ++k) {
        const double t = dec_logits(i, k);
        const double target = y_hat[i] == k ? 1.0 : 0.0;
        total += rec_w * (target * t - softplus(t));
        if (grads) dec_dlogits(i, k) = rec_w * (target - sigmoid(t));
      }
    }

    if (grads) {
      Matrix dec_dx;
      mlp_backward(model.decoder, dec_trace, dec_dlogits, dec_grads_acc, &dec_dx);
      // Route the latent-input slice back through softmax and the sampler.
      for (std::size_t i = 0; i < n; ++i) {
        const double* dy = dec_dx.row(i) + x.cols();
        const double* yi = y.row(i);
        double dot = 0.0;
        for (std::uint32_t k = 0; k < c; ++k) dot += dy[k] * yi[k];
        for (std::uint32_t k = 0; k < c; ++k) {
          const double ds = yi[k] * (dy[k] - dot);  // softmax backward
          const double a = alpha_hat(i, k);
          // d logz / d alpha at fixed u.
          const double dlogz = ((1.0 / a + digamma(a)) - logz(i, k)) / a;
          enc_dlogits(i, k) += ds * dlogz;
        }
      }
    }
  }

  if (grads) {
    // Concentration -> encoder logit slope: softplus' = logistic, 0 when floored.
    for (std::size_t i = 0; i < n; ++i) {
      for (std::uint32_t k = 0; k < c; ++k) {
        const bool floored = softplus(enc_logits(i, k)) < model.alpha_floor;
        enc_dlogits(i, k) = floored ? 0.0 : enc_dlogits(i, k) * sigmoid(enc_logits(i, k));
      }
    }
    grads->encoder = make_grads(model.encoder);
    mlp_backward(model.encoder, enc_trace, enc_dlogits, grads->encoder);
    grads->decoder = std::move(dec_grads_acc);
  }
  return ElboResult{total};
}

Matrix draw_uniforms(std::size_t rows, std::size_t cols, RngState& rng) {
  Matrix u(rows, cols);
  for (double& v : u.data()) v = next_uniform(rng);
  return u;
}

Matrix alpha_rows(const NpcModel& model, const Matrix& enc_in) {
  Matrix logits = mlp_logits(model.encoder, enc_in);
  for (double& v : logits.data()) v = std::max(softplus(v), model.alpha_floor);
  return logits;
}

}  // namespace

double elbo(const NpcModel& model, const Matrix& x,
            const std::vector<std::uint32_t>& y_hat, const Matrix& prior_alpha,
            const Matrix& u) {
  return elbo_impl(model, x, y_hat, prior_alpha, u, nullptr).elbo;
}

double elbo(const NpcModel& model, const Matrix& x,
            const std::vector<std::uint32_t>& y_hat, const Matrix& prior_alpha,
            RngState& rng, std::uint32_t mc_samples) {
  if (mc_samples == 0) throw std::invalid_argument("elbo: mc_samples must be >= 1");
  Matrix u = draw_uniforms(x.rows() * mc_samples, model.classes, rng);
  return elbo_impl(model, x, y_hat, prior_alpha, u, nullptr).elbo;
}

double elbo_with_grads(const NpcModel& model, const Matrix& x,
                       const std::vector<std::uint32_t>& y_hat,
                       const Matrix& prior_alpha, const Matrix& u, NpcGrads& grads) {
  return elbo_impl(model, x, y_hat, prior_alpha, u, &grads).elbo;
}

NpcModel train_npc(const Matrix& features, const PredictionSet& preds,
                   const PriorAssignment& priors, const NpcConfig& cfg) {
  const std::size_t n = features.rows();
  const std::uint32_t c = static_cast<std::uint32_t>(preds.classes());
  if (preds.size() != n) throw std::invalid_argument("train_npc: feature/prediction row mismatch");
  if (priors.alpha.rows() != n || priors.alpha.cols() != c)
    throw std::invalid_argument("train_npc: prior shape mismatch");
  if (cfg.batch_size == 0) throw std::invalid_argument("train_npc: batch_size == 0");
  if (cfg.epochs == 0) throw std::invalid_argument("train_npc: epochs == 0");
  if (cfg.mc_samples == 0) throw std::invalid_argument("train_npc: mc_samples == 0");
  if (!(cfg.alpha_floor > 0.0)) throw std::domain_error("train_npc: alpha_floor must be > 0");

  RngState enc_rng = substream(cfg.seed, 10);
  RngState dec_rng = substream(cfg.seed, 11);
  RngState batch_rng = substream(cfg.seed, 12);
  RngState noise_rng = substream(cfg.seed, 13);

  const std::uint32_t d = static_cast<std::uint32_t>(features.cols());
  std::vector<std::uint32_t> dims;
  dims.push_back(d + c);
  for (std::uint32_t l = 0; l < cfg.hidden_layers; ++l) dims.push_back(cfg.hidden_width);
  dims.push_back(c);

  NpcModel model;
  model.encoder = init_mlp(dims, Head::Softplus, enc_rng);
  model.decoder = init_mlp(dims, Head::Sigmoid, dec_rng);
  model.dim = d;
  model.classes = c;
  model.alpha_floor = cfg.alpha_floor;

  std::vector<std::uint32_t> y_hat(n);
  for (std::size_t i = 0; i < n; ++i) y_hat[i] = argmax_row(preds.probs.row(i), c);

  AdamState enc_adam = make_adam(model.encoder);
  AdamState dec_adam = make_adam(model.decoder);

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = shuffle_indices(n, batch_rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, n - start);
      Matrix bx(count, d);
      Matrix balpha(count, c);
      std::vector<std::uint32_t> byhat(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t src = order[start + i];
        std::copy(features.row(src), features.row(src) + d, bx.row(i));
        std::copy(priors.alpha.row(src), priors.alpha.row(src) + c, balpha.row(i));
        byhat[i] = y_hat[src];
      }
      Matrix u = draw_uniforms(count * cfg.mc_samples, c, noise_rng);
      NpcGrads grads;
      double value = elbo_with_grads(model, bx, byhat, balpha, u, grads);
      if (!std::isfinite(value))
        throw std::runtime_error("train_npc: objective diverged at epoch " +
                                 std::to_string(epoch));
      // Ascend the ELBO.
      grads.encoder.scale(-1.0);
      grads.decoder.scale(-1.0);
      adam_step(model.encoder, grads.encoder, enc_adam, cfg.learning_rate);
      adam_step(model.decoder, grads.decoder, dec_adam, cfg.learning_rate);
    }
  }
  return model;
}

PosteriorParams posterior_alpha(const NpcModel& model, const Matrix& features,
                                std::uint32_t label) {
  if (label >= model.classes)
    throw std::invalid_argument("posterior_alpha: label outside [0, c)");
  if (features.cols() != model.dim)
    throw std::invalid_argument("posterior_alpha: feature width mismatch");
  std::vector<std::uint32_t> labels(features.rows(), label);
  Matrix enc_in = concat_onehot(features, labels, model.classes);
  return PosteriorParams{alpha_rows(model, enc_in)};
}

std::vector<double> posterior_mode(std::span<const double> alpha) {
  if (alpha.size() < 2) throw std::invalid_argument("posterior_mode: need at least 2 components");
  std::vector<double> clamped(alpha.begin(), alpha.end());
  double sum = 0.0;
  for (double& a : clamped) {
    if (!(a > 0.0)) throw std::domain_error("posterior_mode: concentrations must be > 0");
    if (a <= 1.0) a = kModeClamp;
    sum += a;
  }
  const double denom = sum - static_cast<double>(clamped.size());
  for (double& a : clamped) a = (a - 1.0) / denom;
  return clamped;
}

Matrix h_matrix(const NpcModel& model, std::span<const double> x) {
  if (x.size() != model.dim) throw std::invalid_argument("h_matrix: feature width mismatch");
  const std::uint32_t c = model.classes;
  Matrix single(1, model.dim);
  std::copy(x.begin(), x.end(), single.row(0));
  Matrix h(c, c);
  for (std::uint32_t k = 0; k < c; ++k) {
    PosteriorParams post = posterior_alpha(model, single, k);
    auto mode = posterior_mode(post.alpha.row_span(0));
    std::copy(mode.begin(), mode.end(), h.row(k));
  }
  return h;
}

PredictionSet calibrate(const NpcModel& model, const Matrix& features,
                        const PredictionSet& preds) {
  const std::size_t n = features.rows();
  const std::uint32_t c = model.classes;
  if (preds.size() != n) throw std::invalid_argument("calibrate: feature/prediction row mismatch");
  if (preds.classes() != c) throw std::invalid_argument("calibrate: class count mismatch");

  PredictionSet out;
  out.probs = Matrix(n, c);
  for (std::uint32_t k = 0; k < c; ++k) {
    PosteriorParams post = posterior_alpha(model, features, k);
    for (std::size_t i = 0; i < n; ++i) {
      auto mode = posterior_mode(post.alpha.row_span(i));
      const double weight = preds.probs(i, k);
      double* dst = out.probs.row(i);
      for (std::uint32_t j = 0; j < c; ++j) dst[j] += weight * mode[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.probs.row(i);
    double sum = 0.0;
    for (std::uint32_t j = 0; j < c; ++j) sum += row[j];
    for (std::uint32_t j = 0; j < c; ++j) row[j] /= sum;
  }
  quantize_f32(out.probs);
  out.embeddings = preds.embeddings;
  return out;
}

std::vector<NpcIteration> iterate_npc(const Matrix& features, const PredictionSet& preds,
                                      const PriorConfig& prior_cfg, const NpcConfig& cfg,
                                      std::uint32_t iterations) {
  if (iterations == 0) throw std::invalid_argument("iterate_npc: iterations must be >= 1");
  std::vector<NpcIteration> out;
  const PredictionSet* current = &preds;
  for (std::uint32_t it = 0; it < iterations; ++it) {
    PriorAssignment priors = build_priors(features, *current, prior_cfg);
    NpcConfig round = cfg;
    round.seed = substream(cfg.seed, 100 + it).seed;
    NpcModel model = train_npc(features, *current, priors, round);
    PredictionSet calibrated = calibrate(model, features, *current);
    out.push_back(NpcIteration{std::move(model), std::move(calibrated)});
    current = &out.back().calibrated;
  }
  return out;
}

namespace {

void write_mlp_block(detail::ByteWriter& w, const MlpModel& m) {
  w.u32le(static_cast<std::uint32_t>(m.w.size()));
  for (std::uint32_t d : m.dims) w.u32le(d);
  for (std::size_t l = 0; l < m.w.size(); ++l) {
    for (double v : m.w[l].data()) w.f32le(static_cast<float>(v));
    for (double v : m.b[l]) w.f32le(static_cast<float>(v));
  }
}

MlpModel read_mlp_block(detail::ByteReader& r, Head head) {
  std::uint64_t layers_at = r.offset();
  std::uint32_t layers = r.u32le();
  if (layers == 0) r.fail("model block has no layers", layers_at);
  MlpModel m;
  m.head = head;
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
  return m;
}

}  // namespace

void save_npc(const NpcModel& model, const NpcConfig& cfg, const std::string& path) {
  detail::ByteWriter w;
  w.u32le(kNpcMagic);
  w.u32le(kFormatVersion);
  w.u32le(cfg.epochs);
  w.u32le(cfg.batch_size);
  w.f64le(cfg.learning_rate);
  w.u32le(cfg.mc_samples);
  w.f64le(cfg.alpha_floor);
  w.u32le(cfg.hidden_width);
  w.u32le(cfg.hidden_layers);
  w.u64le(cfg.seed);
  write_mlp_block(w, model.encoder);
  write_mlp_block(w, model.decoder);
  w.write_to(path);
}

std::pair<NpcModel, NpcConfig> load_npc(const std::string& path) {
  detail::ByteReader r = detail::open_reader(path);
  if (r.u32le() != kNpcMagic) r.fail("bad magic, expected NPCN", 0);
  std::uint32_t version = r.u32le();
  if (version != kFormatVersion) r.fail("unsupported version " + std::to_string(version), 4);

  NpcConfig cfg;
  cfg.epochs = r.u32le();
  cfg.batch_size = r.u32le();
  cfg.learning_rate = r.f64le();
  cfg.mc_samples = r.u32le();
  cfg.alpha_floor = r.f64le();
  cfg.hidden_width = r.u32le();
  cfg.hidden_layers = r.u32le();
  cfg.seed = r.u64le();

  NpcModel model;
  model.encoder = read_mlp_block(r, Head::Softplus);
  model.decoder = read_mlp_block(r, Head::Sigmoid);
  std::uint64_t end = r.offset();
  r.finish();

  if (model.encoder.dims != model.decoder.dims)
    throw FormatError(path + ": encoder/decoder layer shapes disagree", end);
  const std::uint32_t out = model.encoder.output_dim();
  if (model.encoder.input_dim() <= out)
    throw FormatError(path + ": input narrower than one-hot block", end);
  model.classes = out;
  model.dim = model.encoder.input_dim() - out;
  model.alpha_floor = cfg.alpha_floor;
  return {std::move(model), cfg};
}

}  // namespace npc
