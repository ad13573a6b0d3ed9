#include "npc/noise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace npc {

namespace {

void check_injection_args(const Dataset& ds, double ratio) {
  if (ds.true_labels.empty())
    throw std::logic_error("noise injection: dataset has no true labels");
  if (ds.num_classes < 2)
    throw std::invalid_argument("noise injection: need at least 2 classes");
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw std::domain_error("noise injection: ratio must lie in [0, 1)");
}

TransitionMatrix empirical_transition(const Dataset& ds,
                                      const std::vector<std::uint32_t>& noisy) {
  const std::uint32_t c = ds.num_classes;
  Matrix counts(c, c);
  std::vector<double> totals(c, 0.0);
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    counts(ds.true_labels[i], noisy[i]) += 1.0;
    totals[ds.true_labels[i]] += 1.0;
  }
  for (std::uint32_t k = 0; k < c; ++k) {
    if (totals[k] > 0.0) {
      for (std::uint32_t j = 0; j < c; ++j) counts(k, j) /= totals[k];
    } else {
      counts(k, k) = 1.0;  // class absent from the dataset
    }
  }
  return TransitionMatrix{std::move(counts)};
}

double truncated_normal(double mean, double stddev, RngState& rng) {
  for (;;) {
    double x = mean + stddev * next_normal(rng);
    if (x >= 0.0 && x <= 1.0) return x;
  }
}

std::uint32_t categorical(std::span<const double> p, RngState& rng) {
  double u = next_uniform(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    acc += p[k];
    if (u < acc) return static_cast<std::uint32_t>(k);
  }
  return static_cast<std::uint32_t>(p.size() - 1);
}

}  // namespace

NoiseOutcome inject_symmetric(const Dataset& ds, double ratio, RngState& rng) {
  check_injection_args(ds, ratio);
  const std::uint32_t c = ds.num_classes;
  NoiseOutcome out;
  out.noisy_labels = ds.true_labels;
  for (std::size_t i = 0; i < out.noisy_labels.size(); ++i) {
    if (next_uniform(rng) < ratio) {
      std::uint32_t other = static_cast<std::uint32_t>(next_below(rng, c - 1));
      if (other >= ds.true_labels[i]) ++other;
      out.noisy_labels[i] = other;
    }
  }
  out.realized = empirical_transition(ds, out.noisy_labels);
  return out;
}

NoiseOutcome inject_asymmetric(
    const Dataset& ds, double ratio,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& map, RngState& rng) {
  check_injection_args(ds, ratio);
  const std::uint32_t c = ds.num_classes;
  if (map.empty()) throw std::invalid_argument("inject_asymmetric: empty class map");
  std::vector<std::int64_t> target(c, -1);
  for (auto [src, dst] : map) {
    if (src >= c || dst >= c)
      throw std::invalid_argument("inject_asymmetric: map entry outside [0, c)");
    if (src == dst) throw std::invalid_argument("inject_asymmetric: map entry maps class to itself");
    if (target[src] != -1)
      throw std::invalid_argument("inject_asymmetric: duplicate source class " +
                                  std::to_string(src));
    target[src] = dst;
  }

  NoiseOutcome out;
  out.noisy_labels = ds.true_labels;
  for (std::size_t i = 0; i < out.noisy_labels.size(); ++i) {
    std::int64_t dst = target[ds.true_labels[i]];
    if (dst >= 0 && next_uniform(rng) < ratio)
      out.noisy_labels[i] = static_cast<std::uint32_t>(dst);
  }
  out.realized = empirical_transition(ds, out.noisy_labels);
  return out;
}

std::vector<double> idn_row(const IdnInternals& internals, std::span<const double> x,
                            std::uint32_t label, std::uint32_t num_classes) {
  const std::uint32_t c = num_classes;
  const std::size_t d = x.size();
  if (internals.w.rows() != c || internals.w.cols() != d * c)
    throw std::invalid_argument("idn_row: projection shape mismatch");
  if (label >= c) throw std::invalid_argument("idn_row: label outside [0, c)");

  // Scores s_m = x . w_label[:, m]; the true class is masked out and the
  // rest softmaxed, so the flip mass is spread by feature similarity.
  const double* w = internals.w.row(label);
  std::vector<double> score(c, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double xj = x[j];
    const double* wj = w + j * c;
    for (std::uint32_t m = 0; m < c; ++m) score[m] += xj * wj[m];
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::uint32_t m = 0; m < c; ++m) {
    if (m != label) mx = std::max(mx, score[m]);
  }
  double sum = 0.0;
  std::vector<double> p(c, 0.0);
  for (std::uint32_t m = 0; m < c; ++m) {
    if (m == label) continue;
    p[m] = std::exp(score[m] - mx);
    sum += p[m];
  }
  for (std::uint32_t m = 0; m < c; ++m) {
    if (m != label) p[m] /= sum;
  }
  return p;  // caller scales by q and puts 1 - q on the true class
}

NoiseOutcome inject_idn(const Dataset& ds, double ratio, RngState& rng) {
  check_injection_args(ds, ratio);
  const std::uint32_t c = ds.num_classes;
  const std::size_t n = ds.size();
  const std::size_t d = ds.dim();

  IdnInternals internals;
  internals.q.resize(n);
  for (double& q : internals.q) q = truncated_normal(ratio, 0.1, rng);
  internals.w = Matrix(c, d * c);
  for (double& v : internals.w.data()) v = next_normal(rng);

  NoiseOutcome out;
  out.noisy_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t y = ds.true_labels[i];
    std::vector<double> p = idn_row(internals, ds.features.row_span(i), y, c);
    for (double& v : p) v *= internals.q[i];
    p[y] = 1.0 - internals.q[i];
    out.noisy_labels[i] = categorical(p, rng);
  }
  out.realized = empirical_transition(ds, out.noisy_labels);
  out.idn = std::move(internals);
  return out;
}

NoiseOutcome inject_sridn(const Dataset& ds, double ratio, const PredictionSet& preds) {
  check_injection_args(ds, ratio);
  const std::size_t n = ds.size();
  const std::uint32_t c = ds.num_classes;
  if (preds.size() != n)
    throw std::invalid_argument("inject_sridn: prediction row count mismatch");
  if (preds.classes() != c)
    throw std::invalid_argument("inject_sridn: prediction class count mismatch");

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return preds.probs(a, ds.true_labels[a]) < preds.probs(b, ds.true_labels[b]);
  });

  std::size_t flips = static_cast<std::size_t>(
      std::ceil(static_cast<double>(n) * ratio - 1e-9));
  NoiseOutcome out;
  out.noisy_labels = ds.true_labels;
  for (std::size_t r = 0; r < flips; ++r) {
    const std::uint32_t i = order[r];
    const std::uint32_t y = ds.true_labels[i];
    std::uint32_t best = y == 0 ? 1 : 0;
    for (std::uint32_t j = 0; j < c; ++j) {
      if (j != y && preds.probs(i, j) > preds.probs(i, best)) best = j;
    }
    out.noisy_labels[i] = best;
  }
  out.realized = empirical_transition(ds, out.noisy_labels);
  return out;
}

NoiseOutcome inject(const NoiseSpec& spec, const Dataset& ds, RngState& rng,
                    const PredictionSet* sridn_preds) {
  switch (spec.kind) {
    case NoiseKind::None: {
      NoiseOutcome out;
      out.noisy_labels = ds.true_labels;
      out.realized = empirical_transition(ds, out.noisy_labels);
      return out;
    }
    case NoiseKind::Symmetric:
      return inject_symmetric(ds, spec.ratio, rng);
    case NoiseKind::Asymmetric:
      return inject_asymmetric(ds, spec.ratio, spec.asn_map, rng);
    case NoiseKind::InstanceDependent:
      return inject_idn(ds, spec.ratio, rng);
    case NoiseKind::SimilarityRelated:
      if (sridn_preds == nullptr)
        throw std::logic_error("inject: similarity-related noise needs predictions");
      return inject_sridn(ds, spec.ratio, *sridn_preds);
  }
  throw std::logic_error("inject: unknown noise kind");
}

TransitionMatrix true_transition(const NoiseSpec& spec, const Dataset& ds,
                                 const NoiseOutcome& outcome) {
  const std::uint32_t c = ds.num_classes;
  if (c < 2) throw std::invalid_argument("true_transition: need at least 2 classes");
  Matrix t(c, c);
  switch (spec.kind) {
    case NoiseKind::None:
      for (std::uint32_t k = 0; k < c; ++k) t(k, k) = 1.0;
      break;
    case NoiseKind::Symmetric:
      for (std::uint32_t k = 0; k < c; ++k) {
        for (std::uint32_t j = 0; j < c; ++j)
          t(k, j) = k == j ? 1.0 - spec.ratio : spec.ratio / (c - 1);
      }
      break;
    case NoiseKind::Asymmetric: {
      for (std::uint32_t k = 0; k < c; ++k) t(k, k) = 1.0;
      for (auto [src, dst] : spec.asn_map) {
        if (src >= c || dst >= c)
          throw std::invalid_argument("true_transition: map entry outside [0, c)");
        t(src, src) = 1.0 - spec.ratio;
        t(src, dst) = spec.ratio;
      }
      break;
    }
    case NoiseKind::InstanceDependent: {
      if (!outcome.idn.has_value())
        throw std::logic_error("true_transition: outcome lacks instance-dependent internals");
      std::vector<double> counts(c, 0.0);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::uint32_t y = ds.true_labels[i];
        std::vector<double> p = idn_row(*outcome.idn, ds.features.row_span(i), y, c);
        const double q = outcome.idn->q[i];
        for (std::uint32_t j = 0; j < c; ++j) t(y, j) += j == y ? 1.0 - q : q * p[j];
        counts[y] += 1.0;
      }
      for (std::uint32_t k = 0; k < c; ++k) {
        if (counts[k] > 0.0) {
          for (std::uint32_t j = 0; j < c; ++j) t(k, j) /= counts[k];
        } else {
          t(k, k) = 1.0;
        }
      }
      break;
    }
    case NoiseKind::SimilarityRelated:
      if (outcome.noisy_labels.size() != ds.size())
        throw std::logic_error("true_transition: outcome does not match dataset");
      return empirical_transition(ds, outcome.noisy_labels);
  }
  return TransitionMatrix{std::move(t)};
}

}  // namespace npc
