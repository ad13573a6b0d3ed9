#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "npc/data.hpp"
#include "npc/mathcore.hpp"

namespace npc {

enum class NoiseKind { None, Symmetric, Asymmetric, InstanceDependent, SimilarityRelated };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::None;
  double ratio = 0.0;  // flip probability / fraction, in [0, 1)
  // Asymmetric class map, source -> target; classes not listed stay clean.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> asn_map;
};

// Instance-dependent noise internals, kept so per-instance flip
// distributions can be reconstructed exactly.
struct IdnInternals {
  std::vector<double> q;  // per-sample flip rate, length n
  // Per-class projections; row k holds w_k in R^{d x c}, flattened row-major.
  Matrix w;
};

// probs(i, j) = p(noisy = j | true = i).
struct TransitionMatrix {
  Matrix probs;
};

struct NoiseOutcome {
  std::vector<std::uint32_t> noisy_labels;
  TransitionMatrix realized;  // empirical counts of true -> noisy flips
  std::optional<IdnInternals> idn;
};

// Each sample flips with probability ratio to a uniformly chosen other class.
NoiseOutcome inject_symmetric(const Dataset& ds, double ratio, RngState& rng);

// Samples of a mapped source class flip to the mapped target with
// probability ratio; unmapped classes stay clean.
NoiseOutcome inject_asymmetric(
    const Dataset& ds, double ratio,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& map, RngState& rng);

// Instance-dependent noise: per-sample flip rate q_i drawn from a truncated
// normal around ratio, flip targets scored by a random per-class projection
// of the features.
NoiseOutcome inject_idn(const Dataset& ds, double ratio, RngState& rng);

// Similarity-related noise: flips the ceil(n * ratio) samples whose
// classifier confidence in the true class is lowest, each to its strongest
// competing class. Deterministic given preds.
NoiseOutcome inject_sridn(const Dataset& ds, double ratio, const PredictionSet& preds);

// Dispatch on spec.kind; sridn_preds is required for SimilarityRelated.
NoiseOutcome inject(const NoiseSpec& spec, const Dataset& ds, RngState& rng,
                    const PredictionSet* sridn_preds = nullptr);

// Per-instance flip distribution for instance-dependent noise.
std::vector<double> idn_row(const IdnInternals& internals, std::span<const double> x,
                            std::uint32_t label, std::uint32_t num_classes);

// Ground-truth instance-averaged transition matrix: closed form for the
// symmetric/asymmetric kinds, average of per-instance rows for the
// instance-dependent kind, empirical counts for the similarity-related kind.
TransitionMatrix true_transition(const NoiseSpec& spec, const Dataset& ds,
                                 const NoiseOutcome& outcome);

}  // namespace npc
