#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "npc/mathcore.hpp"

namespace npc {

// Parse or validation failure of a binary container; offset points at the
// first byte that could not be accepted.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t byte_offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// Feature matrix plus labels. noisy_labels is empty until noise is injected.
// All feature values sit exactly on the f32 grid so container round-trips
// reproduce the in-memory values bit for bit.
struct Dataset {
  Matrix features;                          // n x d
  std::vector<std::uint32_t> true_labels;   // size n, values in [0, num_classes)
  std::vector<std::uint32_t> noisy_labels;  // empty or size n
  std::uint32_t num_classes = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool operator==(const Dataset&) const = default;
};

// Per-sample class probabilities and optional penultimate-layer embeddings.
// Values sit on the f32 grid, same rationale as Dataset.
struct PredictionSet {
  Matrix probs;       // n x c, each row sums to 1 within 1e-5
  Matrix embeddings;  // n x e, or 0 x 0 when absent

  std::size_t size() const { return probs.rows(); }
  std::size_t classes() const { return probs.cols(); }
  bool has_embeddings() const { return !embeddings.empty(); }
  bool operator==(const PredictionSet&) const = default;
};

struct SyntheticSpec {
  std::uint32_t num_classes = 4;
  std::uint32_t num_samples = 1000;
  std::uint32_t dim = 2;
  double spread = 1.0;  // cluster standard deviation
};

// Rounds every entry to the nearest f32 value (kept in doubles).
void quantize_f32(Matrix& m);

// c isotropic Gaussian clusters; means on a circle of radius 4 * spread in
// the first two dimensions, zero elsewhere. Class counts are balanced, with
// the first (num_samples mod c) classes taking one extra sample.
Dataset generate_gaussian_mixture(const SyntheticSpec& spec, RngState& rng);

// Shuffled split; subsets keep ascending original order internally.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                             RngState& rng);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

void save_predictions(const PredictionSet& preds, const std::string& path);
PredictionSet load_predictions(const std::string& path);

// Reads a big-endian IDX image/label file pair (u8 payloads). Pixels are
// scaled to [0, 1] when normalize is set, else kept as raw byte values.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 bool normalize);

}  // namespace npc
