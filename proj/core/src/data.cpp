#include "npc/data.hpp"

#include <algorithm>
#include <cmath>

#include "byte_io.hpp"

namespace npc {

namespace {

using detail::ByteReader;
using detail::ByteWriter;
using detail::open_reader;

constexpr std::uint32_t kDatasetMagic = 0x4443504Eu;      // "NPCD" little-endian
constexpr std::uint32_t kPredictionsMagic = 0x5043504Eu;  // "NPCP" little-endian
constexpr std::uint32_t kFormatVersion = 1;

constexpr std::uint8_t kHasTrueLabels = 0x01;
constexpr std::uint8_t kHasNoisyLabels = 0x02;
constexpr std::uint8_t kHasEmbeddings = 0x01;

void check_labels(const std::vector<std::uint32_t>& labels, std::uint32_t c,
                  const char* what) {
  for (std::uint32_t v : labels) {
    if (v >= c)
      throw std::invalid_argument(std::string(what) + ": label " + std::to_string(v) +
                                  " outside [0, " + std::to_string(c) + ")");
  }
}

}  // namespace

void quantize_f32(Matrix& m) {
  for (double& v : m.data()) v = static_cast<double>(static_cast<float>(v));
}

Dataset generate_gaussian_mixture(const SyntheticSpec& spec, RngState& rng) {
  if (spec.num_classes < 2)
    throw std::invalid_argument("generate_gaussian_mixture: need at least 2 classes");
  if (spec.num_samples == 0)
    throw std::invalid_argument("generate_gaussian_mixture: need at least 1 sample");
  if (spec.dim < 2)
    throw std::invalid_argument("generate_gaussian_mixture: need dim >= 2");
  if (!(spec.spread >= 0.0))
    throw std::domain_error("generate_gaussian_mixture: spread must be >= 0");

  const std::uint32_t c = spec.num_classes;
  const std::uint32_t n = spec.num_samples;
  const std::uint32_t d = spec.dim;
  const double radius = 4.0 * spec.spread;

  Dataset ds;
  ds.num_classes = c;
  ds.features = Matrix(n, d);
  ds.true_labels.reserve(n);

  std::size_t row = 0;
  for (std::uint32_t k = 0; k < c; ++k) {
    std::uint32_t count = n / c + (k < n % c ? 1 : 0);
    double angle = 2.0 * M_PI * k / c;
    double mx = radius * std::cos(angle);
    double my = radius * std::sin(angle);
    for (std::uint32_t i = 0; i < count; ++i, ++row) {
      double* x = ds.features.row(row);
      for (std::uint32_t j = 0; j < d; ++j) x[j] = spec.spread * next_normal(rng);
      x[0] += mx;
      x[1] += my;
      ds.true_labels.push_back(k);
    }
  }
  quantize_f32(ds.features);
  return ds;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                             RngState& rng) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw std::domain_error("train_test_split: test_fraction must lie in [0, 1)");
  const std::size_t n = ds.size();
  if (n == 0) throw std::invalid_argument("train_test_split: empty dataset");

  auto perm = shuffle_indices(n, rng);
  std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * n));
  std::vector<std::uint32_t> test_idx(perm.begin(), perm.begin() + n_test);
  std::vector<std::uint32_t> train_idx(perm.begin() + n_test, perm.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  auto take = [&](const std::vector<std::uint32_t>& idx) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.features = Matrix(idx.size(), ds.dim());
    out.true_labels.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* src = ds.features.row(idx[i]);
      std::copy(src, src + ds.dim(), out.features.row(i));
      out.true_labels.push_back(ds.true_labels[idx[i]]);
      if (!ds.noisy_labels.empty()) out.noisy_labels.push_back(ds.noisy_labels[idx[i]]);
    }
    return out;
  };
  return {take(train_idx), take(test_idx)};
}

void save_dataset(const Dataset& ds, const std::string& path) {
  const std::size_t n = ds.size();
  if (!ds.true_labels.empty() && ds.true_labels.size() != n)
    throw std::invalid_argument("save_dataset: true label count mismatch");
  if (!ds.noisy_labels.empty() && ds.noisy_labels.size() != n)
    throw std::invalid_argument("save_dataset: noisy label count mismatch");
  if (ds.num_classes == 0) throw std::invalid_argument("save_dataset: num_classes == 0");
  check_labels(ds.true_labels, ds.num_classes, "save_dataset");
  check_labels(ds.noisy_labels, ds.num_classes, "save_dataset");

  ByteWriter w;
  w.u32le(kDatasetMagic);
  w.u32le(kFormatVersion);
  w.u32le(static_cast<std::uint32_t>(n));
  w.u32le(static_cast<std::uint32_t>(ds.dim()));
  w.u32le(ds.num_classes);
  std::uint8_t flags = 0;
  if (!ds.true_labels.empty()) flags |= kHasTrueLabels;
  if (!ds.noisy_labels.empty()) flags |= kHasNoisyLabels;
  w.u8(flags);
  for (double v : ds.features.data()) w.f32le(static_cast<float>(v));
  for (std::uint32_t v : ds.true_labels) w.u32le(v);
  for (std::uint32_t v : ds.noisy_labels) w.u32le(v);
  w.write_to(path);
}

Dataset load_dataset(const std::string& path) {
  ByteReader r = open_reader(path);
  if (r.u32le() != kDatasetMagic) r.fail("bad magic, expected NPCD", 0);
  std::uint32_t version = r.u32le();
  if (version != kFormatVersion)
    r.fail("unsupported version " + std::to_string(version), 4);
  std::uint32_t n = r.u32le();
  std::uint32_t d = r.u32le();
  std::uint32_t c = r.u32le();
  std::uint64_t flags_at = r.offset();
  std::uint8_t flags = r.u8();
  if (flags & ~(kHasTrueLabels | kHasNoisyLabels)) r.fail("unknown flag bits", flags_at);
  if (c == 0) r.fail("num_classes must be nonzero", 16);

  Dataset ds;
  ds.num_classes = c;
  ds.features = Matrix(n, d);
  for (double& v : ds.features.data()) v = static_cast<double>(r.f32le());
  auto read_labels = [&](std::vector<std::uint32_t>& out) {
    out.resize(n);
    for (std::uint32_t& v : out) {
      std::uint64_t at = r.offset();
      v = r.u32le();
      if (v >= c)
        r.fail("label " + std::to_string(v) + " outside [0, " + std::to_string(c) + ")",
               at);
    }
  };
  if (flags & kHasTrueLabels) read_labels(ds.true_labels);
  if (flags & kHasNoisyLabels) read_labels(ds.noisy_labels);
  r.finish();
  return ds;
}

void save_predictions(const PredictionSet& preds, const std::string& path) {
  const std::size_t n = preds.size();
  const std::size_t c = preds.classes();
  if (c == 0) throw std::invalid_argument("save_predictions: empty probability rows");
  if (preds.has_embeddings() && preds.embeddings.rows() != n)
    throw std::invalid_argument("save_predictions: embedding row count mismatch");

  ByteWriter w;
  w.u32le(kPredictionsMagic);
  w.u32le(kFormatVersion);
  w.u32le(static_cast<std::uint32_t>(n));
  w.u32le(static_cast<std::uint32_t>(c));
  w.u8(preds.has_embeddings() ? kHasEmbeddings : 0);
  for (double v : preds.probs.data()) w.f32le(static_cast<float>(v));
  if (preds.has_embeddings()) {
    w.u32le(static_cast<std::uint32_t>(preds.embeddings.cols()));
    for (double v : preds.embeddings.data()) w.f32le(static_cast<float>(v));
  }
  w.write_to(path);
}

PredictionSet load_predictions(const std::string& path) {
  ByteReader r = open_reader(path);
  if (r.u32le() != kPredictionsMagic) r.fail("bad magic, expected NPCP", 0);
  std::uint32_t version = r.u32le();
  if (version != kFormatVersion)
    r.fail("unsupported version " + std::to_string(version), 4);
  std::uint32_t n = r.u32le();
  std::uint32_t c = r.u32le();
  std::uint64_t flags_at = r.offset();
  std::uint8_t flags = r.u8();
  if (flags & ~kHasEmbeddings) r.fail("unknown flag bits", flags_at);
  if (c == 0) r.fail("class count must be nonzero", 12);

  PredictionSet preds;
  preds.probs = Matrix(n, c);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint64_t row_at = r.offset();
    double sum = 0.0;
    for (std::uint32_t k = 0; k < c; ++k) {
      double v = static_cast<double>(r.f32le());
      preds.probs(i, k) = v;
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-4)
      r.fail("probability row " + std::to_string(i) + " sums to " + std::to_string(sum),
             row_at);
  }
  if (flags & kHasEmbeddings) {
    std::uint32_t e = r.u32le();
    preds.embeddings = Matrix(n, e);
    for (double& v : preds.embeddings.data()) v = static_cast<double>(r.f32le());
  }
  r.finish();
  return preds;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 bool normalize) {
  ByteReader ir = open_reader(images_path);
  if (ir.u32be() != 0x00000803u) ir.fail("bad IDX image magic", 0);
  std::uint32_t n = ir.u32be();
  std::uint32_t rows = ir.u32be();
  std::uint32_t cols = ir.u32be();

  ByteReader lr = open_reader(labels_path);
  if (lr.u32be() != 0x00000801u) lr.fail("bad IDX label magic", 0);
  std::uint32_t ln = lr.u32be();
  if (ln != n)
    throw std::invalid_argument("load_idx: image/label count mismatch (" +
                                std::to_string(n) + " vs " + std::to_string(ln) + ")");

  Dataset ds;
  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  ds.features = Matrix(n, d);
  const double scale = normalize ? 1.0 / 255.0 : 1.0;
  for (double& v : ds.features.data()) v = scale * ir.u8();
  ir.finish();

  ds.true_labels.resize(n);
  std::uint32_t max_label = 0;
  for (std::uint32_t& v : ds.true_labels) {
    v = lr.u8();
    max_label = std::max(max_label, v);
  }
  lr.finish();
  ds.num_classes = max_label + 1;
  quantize_f32(ds.features);
  return ds;
}

}  // namespace npc
