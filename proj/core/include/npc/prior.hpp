#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "npc/data.hpp"
#include "npc/mathcore.hpp"

namespace npc {

struct PriorConfig {
  std::uint32_t k = 10;     // neighbors per query
  double rho = 10.0;        // vote weight added on top of delta
  double delta = 1.0;       // base concentration for every class
  // Anchor rule: the top anchor_fraction most confident samples per
  // predicted class; conf_threshold in [0, 1] switches to an absolute
  // max-probability cutoff (with a top-1-per-class fallback).
  double anchor_fraction = 0.25;
  double conf_threshold = -1.0;
  enum class Variant { Top1, TopM };
  Variant variant = Variant::Top1;
  std::uint32_t top_m = 2;  // classes receiving vote mass under TopM
  bool prefer_embeddings = true;
};

struct PriorAssignment {
  Matrix alpha;                        // n x c concentration rows
  std::vector<std::uint32_t> anchors;  // dataset indices, ascending
  std::vector<std::uint32_t> voted;    // top-voted class per sample
};

// High-confidence rows grouped by predicted class; see PriorConfig.
std::vector<std::uint32_t> select_anchors(const PredictionSet& preds,
                                          const PriorConfig& cfg);

// Euclidean k-nearest anchors vote their label; returns per-class vote
// fractions. Distance ties break by anchor position, ascending.
std::vector<double> knn_vote(const Matrix& anchor_features,
                             const std::vector<std::uint32_t>& anchor_labels,
                             std::uint32_t num_classes, std::span<const double> query,
                             std::uint32_t k);

// Top1: delta everywhere, delta + rho on the winning class.
// TopM: delta + rho * fraction on the top_m most voted classes, delta elsewhere.
DirichletParams build_alpha(std::span<const double> vote_fractions,
                            const PriorConfig& cfg);

// Anchor selection + votes + concentration rows for a whole dataset.
// Votes run in embedding space when available (and preferred), else on the
// raw features; anchors vote their predicted class.
PriorAssignment build_priors(const Matrix& features, const PredictionSet& preds,
                             const PriorConfig& cfg);

}  // namespace npc
