#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "npc/classifier.hpp"
#include "npc/data.hpp"
#include "npc/mathcore.hpp"
#include "npc/noise.hpp"
#include "npc/npc_model.hpp"
#include "npc/prior.hpp"
#include "npc/transition.hpp"

namespace npc {

struct RunConfig {
  // Dataset source: "synthetic", "idx" (reads idx_images/idx_labels), or a
  // path to a dataset container.
  std::string data = "synthetic";
  std::string idx_images;
  std::string idx_labels;
  bool idx_normalize = true;
  SyntheticSpec synth;
  double test_fraction = 0.2;

  NoiseSpec noise;

  TrainConfig classifier;
  PriorConfig prior;
  NpcConfig npc;
  std::uint32_t npc_iterations = 1;

  bool estimate_t = false;
  double cond_cap = 1e6;

  // Output paths; not part of the config echo so reports stay comparable
  // across output locations.
  std::string report_out;
  std::string t_csv_out;

  std::uint64_t seed = 0;
};

const char* noise_kind_name(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

// Class map syntax: "2>7,3>8,5>6"; empty string means no map.
std::vector<std::pair<std::uint32_t, std::uint32_t>> parse_asn_map(const std::string& text);
std::string format_asn_map(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& map);

// Applies one `key = value` assignment; unknown keys or unparsable values
// raise std::invalid_argument.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat text config: one `key = value` per line, `#` starts a comment.
// Values are type-checked here; range checks live in validate_run_config,
// which run_pipeline applies on entry.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

void validate_run_config(const RunConfig& cfg);

// Every config key except the output paths, in canonical order with
// canonical value formatting.
std::vector<std::pair<std::string, std::string>> config_echo(const RunConfig& cfg);

// Eight-region split of an evaluation set by annotation cleanliness and by
// which of the two predictors is right. Ordering within each half is
// (classifier, post-processor): a miss/miss, b miss/hit, c hit/hit,
// d hit/miss on the clean subset; e..h repeat the pattern on the corrupted
// subset.
struct VennCounts {
  std::uint64_t a = 0, b = 0, c = 0, d = 0;
  std::uint64_t e = 0, f = 0, g = 0, h = 0;
  std::uint64_t total() const { return a + b + c + d + e + f + g + h; }
  bool operator==(const VennCounts&) const = default;
};

struct EvalReport {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  // confusion[i][j] counts samples of true class i predicted as class j.
  std::vector<std::vector<std::uint64_t>> confusion_before;
  std::vector<std::vector<std::uint64_t>> confusion_after;
  VennCounts venn_counts;
  std::int64_t net_gain = 0;
  std::optional<double> t_mse;
  std::optional<Matrix> t_hat;
  std::optional<Matrix> t_true;
  // Instances excluded from transition aggregation as ill-conditioned.
  std::optional<std::uint64_t> t_excluded;
  // Stage seconds in execution order, followed by "total".
  std::vector<std::pair<std::string, double>> wall_times;
  bool operator==(const EvalReport&) const = default;
};

double accuracy(const std::vector<std::uint32_t>& predicted,
                const std::vector<std::uint32_t>& truth);

std::vector<std::vector<std::uint64_t>> confusion_counts(
    const std::vector<std::uint32_t>& truth, const std::vector<std::uint32_t>& predicted,
    std::uint32_t num_classes);

// Arguments: true labels, annotations, classifier labels, post-processed
// labels.
VennCounts venn_counts(const std::vector<std::uint32_t>& y,
                       const std::vector<std::uint32_t>& y_noisy,
                       const std::vector<std::uint32_t>& y_cls,
                       const std::vector<std::uint32_t>& y_post);

// (b + f) - (d + h): samples fixed minus samples broken by post-processing.
std::int64_t net_gain(const VennCounts& v);

// Row-wise argmax; ties break toward the smaller class index.
std::vector<std::uint32_t> argmax_labels(const Matrix& probs);

// Full deterministic run: data, noise, classifier, priors, calibration,
// optional transition estimation, metrics. Writes report_out/t_csv_out when
// set. Stage failures rethrow as std::runtime_error naming the stage.
EvalReport run_pipeline(const RunConfig& cfg);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

void save_transition_csv(const Matrix& t, const std::string& path);

}  // namespace npc
