#include "npc/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace npc {

namespace {

std::uint32_t argmax_row(const double* row, std::size_t c) {
  std::uint32_t best = 0;
  for (std::size_t k = 1; k < c; ++k) {
    if (row[k] > row[best]) best = static_cast<std::uint32_t>(k);
  }
  return best;
}

}  // namespace

std::vector<std::uint32_t> select_anchors(const PredictionSet& preds,
                                          const PriorConfig& cfg) {
  const std::size_t n = preds.size();
  const std::size_t c = preds.classes();
  if (n == 0) throw std::invalid_argument("select_anchors: empty predictions");

  std::vector<std::uint32_t> pred_class(n);
  std::vector<double> confidence(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred_class[i] = argmax_row(preds.probs.row(i), c);
    confidence[i] = preds.probs(i, pred_class[i]);
  }

  // Rows of each predicted class, most confident first (ties by index).
  std::vector<std::vector<std::uint32_t>> by_class(c);
  for (std::size_t i = 0; i < n; ++i) by_class[pred_class[i]].push_back(static_cast<std::uint32_t>(i));
  for (auto& rows : by_class) {
    std::stable_sort(rows.begin(), rows.end(), [&](std::uint32_t a, std::uint32_t b) {
      return confidence[a] > confidence[b];
    });
  }

  std::vector<std::uint32_t> anchors;
  if (cfg.conf_threshold >= 0.0) {
    if (cfg.conf_threshold > 1.0)
      throw std::domain_error("select_anchors: conf_threshold must lie in [0, 1]");
    for (const auto& rows : by_class) {
      bool any = false;
      for (std::uint32_t i : rows) {
        if (confidence[i] >= cfg.conf_threshold) {
          anchors.push_back(i);
          any = true;
        }
      }
      // A class whose every row falls under the cutoff keeps its single
      // most confident row so votes can still name it.
      if (!any && !rows.empty()) anchors.push_back(rows.front());
    }
  } else {
    if (!(cfg.anchor_fraction > 0.0 && cfg.anchor_fraction <= 1.0))
      throw std::domain_error("select_anchors: anchor_fraction must lie in (0, 1]");
    for (const auto& rows : by_class) {
      if (rows.empty()) continue;
      std::size_t take = static_cast<std::size_t>(
          std::ceil(cfg.anchor_fraction * static_cast<double>(rows.size()) - 1e-9));
      take = std::max<std::size_t>(1, std::min(take, rows.size()));
      anchors.insert(anchors.end(), rows.begin(), rows.begin() + take);
    }
  }
  if (anchors.empty()) throw std::logic_error("select_anchors: no anchors selected");
  std::sort(anchors.begin(), anchors.end());
  return anchors;
}

std::vector<double> knn_vote(const Matrix& anchor_features,
                             const std::vector<std::uint32_t>& anchor_labels,
                             std::uint32_t num_classes, std::span<const double> query,
                             std::uint32_t k) {
  const std::size_t m = anchor_features.rows();
  if (k == 0) throw std::domain_error("knn_vote: k must be >= 1");
  if (m == 0) throw std::logic_error("knn_vote: empty anchor set");
  if (anchor_labels.size() != m)
    throw std::invalid_argument("knn_vote: anchor label count mismatch");
  if (query.size() != anchor_features.cols())
    throw std::invalid_argument("knn_vote: query width mismatch");

  std::vector<std::pair<double, std::uint32_t>> dist(m);
  const std::size_t d = query.size();
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = anchor_features.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = a[j] - query[j];
      acc += diff * diff;
    }
    dist[i] = {acc, static_cast<std::uint32_t>(i)};
  }

  const std::size_t kk = std::min<std::size_t>(k, m);
  std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());

  std::vector<double> fractions(num_classes, 0.0);
  for (std::size_t r = 0; r < kk; ++r) {
    const std::uint32_t label = anchor_labels[dist[r].second];
    if (label >= num_classes)
      throw std::invalid_argument("knn_vote: anchor label outside [0, c)");
    fractions[label] += 1.0;
  }
  for (double& f : fractions) f /= static_cast<double>(kk);
  return fractions;
}

DirichletParams build_alpha(std::span<const double> vote_fractions,
                            const PriorConfig& cfg) {
  if (vote_fractions.empty()) throw std::invalid_argument("build_alpha: empty vote vector");
  if (!(cfg.delta > 0.0)) throw std::domain_error("build_alpha: delta must be > 0");
  if (!(cfg.rho > 0.0)) throw std::domain_error("build_alpha: rho must be > 0");

  const std::size_t c = vote_fractions.size();
  DirichletParams out;
  out.alpha.assign(c, cfg.delta);
  if (cfg.variant == PriorConfig::Variant::Top1) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (vote_fractions[k] > vote_fractions[best]) best = k;
    }
    out.alpha[best] += cfg.rho;
  } else {
    if (cfg.top_m == 0) throw std::domain_error("build_alpha: top_m must be >= 1");
    std::vector<std::uint32_t> order(c);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return vote_fractions[a] > vote_fractions[b];
    });
    const std::size_t take = std::min<std::size_t>(cfg.top_m, c);
    for (std::size_t r = 0; r < take; ++r)
      out.alpha[order[r]] += cfg.rho * vote_fractions[order[r]];
  }
  return out;
}

PriorAssignment build_priors(const Matrix& features, const PredictionSet& preds,
                             const PriorConfig& cfg) {
  const std::size_t n = preds.size();
  if (features.rows() != n)
    throw std::invalid_argument("build_priors: feature/prediction row mismatch");
  const std::size_t c = preds.classes();

  PriorAssignment out;
  out.anchors = select_anchors(preds, cfg);

  const bool use_emb = cfg.prefer_embeddings && preds.has_embeddings();
  const Matrix& space = use_emb ? preds.embeddings : features;

  Matrix anchor_feats(out.anchors.size(), space.cols());
  std::vector<std::uint32_t> anchor_labels(out.anchors.size());
  for (std::size_t a = 0; a < out.anchors.size(); ++a) {
    const double* src = space.row(out.anchors[a]);
    std::copy(src, src + space.cols(), anchor_feats.row(a));
    anchor_labels[a] = argmax_row(preds.probs.row(out.anchors[a]), c);
  }

  out.alpha = Matrix(n, c);
  out.voted.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto fractions = knn_vote(anchor_feats, anchor_labels,
                              static_cast<std::uint32_t>(c), space.row_span(i), cfg.k);
    DirichletParams alpha = build_alpha(fractions, cfg);
    std::copy(alpha.alpha.begin(), alpha.alpha.end(), out.alpha.row(i));
    out.voted[i] = argmax_row(fractions.data(), c);
  }
  return out;
}

}  // namespace npc
