#include "npc/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <type_traits>
#include <utility>

#include "json.hpp"

namespace npc {

namespace {

using ordered_json = nlohmann::ordered_json;

template <typename T>
T parse_number(const std::string& value, const char* what) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  const bool bad = ec != std::errc() || ptr != last;
  if (bad) throw std::invalid_argument(std::string("expected ") + what + ", got '" + value + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out))
      throw std::invalid_argument(std::string("expected a finite ") + what + ", got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("expected a boolean, got '" + value + "'");
}

std::string format_bool(bool v) { return v ? "true" : "false"; }

std::string format_real(double v) { return nlohmann::json(v).dump(); }

std::string trim(const std::string& s) {
  std::size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  std::size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

class StageClock {
 public:
  StageClock() : start_(std::chrono::steady_clock::now()) {}

  template <typename F>
  void run(const char* name, F&& body) {
    const auto begin = std::chrono::steady_clock::now();
    try {
      std::forward<F>(body)();
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("stage ") + name + " failed: " + e.what());
    }
    add(name, since(begin));
  }

  std::vector<std::pair<std::string, double>> finish() const {
    auto out = stages_;
    out.emplace_back("total", since(start_));
    return out;
  }

 private:
  static double since(std::chrono::steady_clock::time_point begin) {
    const std::chrono::duration<double> d = std::chrono::steady_clock::now() - begin;
    return std::max(d.count(), 1e-9);
  }

  void add(const char* name, double seconds) {
    for (auto& [stage, total] : stages_) {
      if (stage == name) {
        total += seconds;
        return;
      }
    }
    stages_.emplace_back(name, seconds);
  }

  std::chrono::steady_clock::time_point start_;
  std::vector<std::pair<std::string, double>> stages_;
};

ordered_json matrix_to_rows(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_rows(const ordered_json& rows) {
  if (!rows.is_array()) throw std::invalid_argument("report: expected an array of rows");
  if (rows.empty()) return {};
  const std::size_t r = rows.size();
  const std::size_t c = rows.at(0).is_array() ? rows.at(0).size() : 0;
  if (c == 0) throw std::invalid_argument("report: expected non-empty rows");
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const auto& row = rows.at(i);
    if (!row.is_array() || row.size() != c)
      throw std::invalid_argument("report: ragged matrix rows");
    for (std::size_t j = 0; j < c; ++j) m(i, j) = row.at(j).get<double>();
  }
  return m;
}

}  // namespace

const char* noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::None: return "none";
    case NoiseKind::Symmetric: return "symmetric";
    case NoiseKind::Asymmetric: return "asymmetric";
    case NoiseKind::InstanceDependent: return "idn";
    case NoiseKind::SimilarityRelated: return "sridn";
  }
  throw std::logic_error("noise_kind_name: unknown kind");
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "none") return NoiseKind::None;
  if (name == "symmetric") return NoiseKind::Symmetric;
  if (name == "asymmetric") return NoiseKind::Asymmetric;
  if (name == "idn") return NoiseKind::InstanceDependent;
  if (name == "sridn") return NoiseKind::SimilarityRelated;
  throw std::invalid_argument("unknown noise kind '" + name +
                              "' (expected none|symmetric|asymmetric|idn|sridn)");
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> parse_asn_map(const std::string& text) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> map;
  if (trim(text).empty()) return map;
  std::stringstream ss(text);
  std::string entry;
  while (std::getline(ss, entry, ',')) {
    entry = trim(entry);
    const std::size_t sep = entry.find('>');
    if (sep == std::string::npos)
      throw std::invalid_argument("class map entry '" + entry + "' lacks '>'");
    const std::uint32_t src = parse_number<std::uint32_t>(trim(entry.substr(0, sep)), "a class index");
    const std::uint32_t dst = parse_number<std::uint32_t>(trim(entry.substr(sep + 1)), "a class index");
    map.emplace_back(src, dst);
  }
  return map;
}

std::string format_asn_map(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& map) {
  std::string out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(map[i].first);
    out += '>';
    out += std::to_string(map[i].second);
  }
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "data") cfg.data = value;
  else if (key == "idx_images") cfg.idx_images = value;
  else if (key == "idx_labels") cfg.idx_labels = value;
  else if (key == "idx_normalize") cfg.idx_normalize = parse_bool(value);
  else if (key == "classes") cfg.synth.num_classes = parse_number<std::uint32_t>(value, "a class count");
  else if (key == "samples") cfg.synth.num_samples = parse_number<std::uint32_t>(value, "a sample count");
  else if (key == "dim") cfg.synth.dim = parse_number<std::uint32_t>(value, "a dimension");
  else if (key == "spread") cfg.synth.spread = parse_number<double>(value, "a real");
  else if (key == "test_fraction") cfg.test_fraction = parse_number<double>(value, "a real");
  else if (key == "noise") cfg.noise.kind = parse_noise_kind(value);
  else if (key == "noise_ratio") cfg.noise.ratio = parse_number<double>(value, "a real");
  else if (key == "asn_map") cfg.noise.asn_map = parse_asn_map(value);
  else if (key == "classifier_epochs") cfg.classifier.epochs = parse_number<std::uint32_t>(value, "an epoch count");
  else if (key == "classifier_batch") cfg.classifier.batch_size = parse_number<std::uint32_t>(value, "a batch size");
  else if (key == "classifier_lr") cfg.classifier.learning_rate = parse_number<double>(value, "a real");
  else if (key == "classifier_smoothing") cfg.classifier.smoothing = parse_number<double>(value, "a real");
  else if (key == "classifier_early_stop") cfg.classifier.early_stop = parse_bool(value);
  else if (key == "classifier_val_fraction") cfg.classifier.val_fraction = parse_number<double>(value, "a real");
  else if (key == "classifier_patience") cfg.classifier.patience = parse_number<std::uint32_t>(value, "a patience");
  else if (key == "classifier_hidden_width") cfg.classifier.hidden_width = parse_number<std::uint32_t>(value, "a width");
  else if (key == "classifier_hidden_layers") cfg.classifier.hidden_layers = parse_number<std::uint32_t>(value, "a layer count");
  else if (key == "prior_k") cfg.prior.k = parse_number<std::uint32_t>(value, "a neighbor count");
  else if (key == "prior_rho") cfg.prior.rho = parse_number<double>(value, "a real");
  else if (key == "prior_delta") cfg.prior.delta = parse_number<double>(value, "a real");
  else if (key == "prior_anchor_fraction") cfg.prior.anchor_fraction = parse_number<double>(value, "a real");
  else if (key == "prior_conf_threshold") cfg.prior.conf_threshold = parse_number<double>(value, "a real");
  else if (key == "prior_variant") {
    if (value == "top1") cfg.prior.variant = PriorConfig::Variant::Top1;
    else if (value == "topm") cfg.prior.variant = PriorConfig::Variant::TopM;
    else throw std::invalid_argument("unknown prior variant '" + value + "' (expected top1|topm)");
  }
  else if (key == "prior_top_m") cfg.prior.top_m = parse_number<std::uint32_t>(value, "a class count");
  else if (key == "prior_use_embeddings") cfg.prior.prefer_embeddings = parse_bool(value);
  else if (key == "npc_epochs") cfg.npc.epochs = parse_number<std::uint32_t>(value, "an epoch count");
  else if (key == "npc_batch") cfg.npc.batch_size = parse_number<std::uint32_t>(value, "a batch size");
  else if (key == "npc_lr") cfg.npc.learning_rate = parse_number<double>(value, "a real");
  else if (key == "npc_mc_samples") cfg.npc.mc_samples = parse_number<std::uint32_t>(value, "a sample count");
  else if (key == "npc_alpha_floor") cfg.npc.alpha_floor = parse_number<double>(value, "a real");
  else if (key == "npc_hidden_width") cfg.npc.hidden_width = parse_number<std::uint32_t>(value, "a width");
  else if (key == "npc_hidden_layers") cfg.npc.hidden_layers = parse_number<std::uint32_t>(value, "a layer count");
  else if (key == "npc_iterations") cfg.npc_iterations = parse_number<std::uint32_t>(value, "an iteration count");
  else if (key == "estimate_t") cfg.estimate_t = parse_bool(value);
  else if (key == "cond_cap") cfg.cond_cap = parse_number<double>(value, "a real");
  else if (key == "report_out") cfg.report_out = value;
  else if (key == "t_csv_out") cfg.t_csv_out = value;
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(value, "a seed");
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    try {
      set_config_value(cfg, key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

void validate_run_config(const RunConfig& cfg) {
  auto reject = [](const std::string& why) { throw std::invalid_argument("config: " + why); };

  if (cfg.data.empty()) reject("data must name a source");
  if (cfg.data == "idx") {
    if (cfg.idx_images.empty() || cfg.idx_labels.empty())
      reject("data = idx needs idx_images and idx_labels");
  } else if (!cfg.idx_images.empty() || !cfg.idx_labels.empty()) {
    reject("idx_images/idx_labels need data = idx");
  }
  if (cfg.data == "synthetic") {
    if (cfg.synth.num_classes < 2) reject("classes must be >= 2");
    if (cfg.synth.num_samples < 2) reject("samples must be >= 2");
    if (cfg.synth.dim < 2) reject("dim must be >= 2");
    if (!(cfg.synth.spread > 0.0)) reject("spread must be > 0");
  }
  if (!(cfg.test_fraction > 0.0) || !(cfg.test_fraction < 1.0))
    reject("test_fraction must lie in (0, 1)");

  if (!(cfg.noise.ratio >= 0.0) || !(cfg.noise.ratio < 1.0))
    reject("noise_ratio must lie in [0, 1)");
  if (cfg.noise.kind == NoiseKind::Asymmetric && cfg.noise.asn_map.empty())
    reject("asymmetric noise needs asn_map");

  if (cfg.classifier.epochs == 0) reject("classifier_epochs must be >= 1");
  if (cfg.classifier.batch_size == 0) reject("classifier_batch must be >= 1");
  if (!(cfg.classifier.learning_rate > 0.0)) reject("classifier_lr must be > 0");
  if (!(cfg.classifier.smoothing >= 0.0) || !(cfg.classifier.smoothing < 1.0))
    reject("classifier_smoothing must lie in [0, 1)");
  if (!(cfg.classifier.val_fraction > 0.0) || !(cfg.classifier.val_fraction < 1.0))
    reject("classifier_val_fraction must lie in (0, 1)");
  if (cfg.classifier.patience == 0) reject("classifier_patience must be >= 1");
  if (cfg.classifier.hidden_width == 0) reject("classifier_hidden_width must be >= 1");
  if (cfg.classifier.hidden_layers == 0) reject("classifier_hidden_layers must be >= 1");

  if (cfg.prior.k == 0) reject("prior_k must be >= 1");
  if (!(cfg.prior.rho > 0.0)) reject("prior_rho must be > 0");
  if (!(cfg.prior.delta > 0.0)) reject("prior_delta must be > 0");
  if (!(cfg.prior.anchor_fraction > 0.0) || !(cfg.prior.anchor_fraction <= 1.0))
    reject("prior_anchor_fraction must lie in (0, 1]");
  if (cfg.prior.conf_threshold > 1.0) reject("prior_conf_threshold must be <= 1");
  if (cfg.prior.top_m == 0) reject("prior_top_m must be >= 1");

  if (cfg.npc.epochs == 0) reject("npc_epochs must be >= 1");
  if (cfg.npc.batch_size == 0) reject("npc_batch must be >= 1");
  if (!(cfg.npc.learning_rate > 0.0)) reject("npc_lr must be > 0");
  if (cfg.npc.mc_samples == 0) reject("npc_mc_samples must be >= 1");
  if (!(cfg.npc.alpha_floor > 0.0)) reject("npc_alpha_floor must be > 0");
  if (cfg.npc.hidden_width == 0) reject("npc_hidden_width must be >= 1");
  if (cfg.npc.hidden_layers == 0) reject("npc_hidden_layers must be >= 1");
  if (cfg.npc_iterations == 0) reject("npc_iterations must be >= 1");

  if (!(cfg.cond_cap > 0.0)) reject("cond_cap must be > 0");
  if (!cfg.t_csv_out.empty() && !cfg.estimate_t) reject("t_csv_out needs estimate_t = true");
}

std::vector<std::pair<std::string, std::string>> config_echo(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> echo;
  auto put = [&echo](const char* key, std::string value) {
    echo.emplace_back(key, std::move(value));
  };
  put("data", cfg.data);
  put("idx_images", cfg.idx_images);
  put("idx_labels", cfg.idx_labels);
  put("idx_normalize", format_bool(cfg.idx_normalize));
  put("classes", std::to_string(cfg.synth.num_classes));
  put("samples", std::to_string(cfg.synth.num_samples));
  put("dim", std::to_string(cfg.synth.dim));
  put("spread", format_real(cfg.synth.spread));
  put("test_fraction", format_real(cfg.test_fraction));
  put("noise", noise_kind_name(cfg.noise.kind));
  put("noise_ratio", format_real(cfg.noise.ratio));
  put("asn_map", format_asn_map(cfg.noise.asn_map));
  put("classifier_epochs", std::to_string(cfg.classifier.epochs));
  put("classifier_batch", std::to_string(cfg.classifier.batch_size));
  put("classifier_lr", format_real(cfg.classifier.learning_rate));
  put("classifier_smoothing", format_real(cfg.classifier.smoothing));
  put("classifier_early_stop", format_bool(cfg.classifier.early_stop));
  put("classifier_val_fraction", format_real(cfg.classifier.val_fraction));
  put("classifier_patience", std::to_string(cfg.classifier.patience));
  put("classifier_hidden_width", std::to_string(cfg.classifier.hidden_width));
  put("classifier_hidden_layers", std::to_string(cfg.classifier.hidden_layers));
  put("prior_k", std::to_string(cfg.prior.k));
  put("prior_rho", format_real(cfg.prior.rho));
  put("prior_delta", format_real(cfg.prior.delta));
  put("prior_anchor_fraction", format_real(cfg.prior.anchor_fraction));
  put("prior_conf_threshold", format_real(cfg.prior.conf_threshold));
  put("prior_variant", cfg.prior.variant == PriorConfig::Variant::Top1 ? "top1" : "topm");
  put("prior_top_m", std::to_string(cfg.prior.top_m));
  put("prior_use_embeddings", format_bool(cfg.prior.prefer_embeddings));
  put("npc_epochs", std::to_string(cfg.npc.epochs));
  put("npc_batch", std::to_string(cfg.npc.batch_size));
  put("npc_lr", format_real(cfg.npc.learning_rate));
  put("npc_mc_samples", std::to_string(cfg.npc.mc_samples));
  put("npc_alpha_floor", format_real(cfg.npc.alpha_floor));
  put("npc_hidden_width", std::to_string(cfg.npc.hidden_width));
  put("npc_hidden_layers", std::to_string(cfg.npc.hidden_layers));
  put("npc_iterations", std::to_string(cfg.npc_iterations));
  put("estimate_t", format_bool(cfg.estimate_t));
  put("cond_cap", format_real(cfg.cond_cap));
  put("seed", std::to_string(cfg.seed));
  return echo;
}

double accuracy(const std::vector<std::uint32_t>& predicted,
                const std::vector<std::uint32_t>& truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("accuracy: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("accuracy: empty inputs");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

std::vector<std::vector<std::uint64_t>> confusion_counts(
    const std::vector<std::uint32_t>& truth, const std::vector<std::uint32_t>& predicted,
    std::uint32_t num_classes) {
  if (truth.size() != predicted.size())
    throw std::invalid_argument("confusion_counts: length mismatch");
  std::vector<std::vector<std::uint64_t>> counts(
      num_classes, std::vector<std::uint64_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes)
      throw std::invalid_argument("confusion_counts: label outside [0, c)");
    ++counts[truth[i]][predicted[i]];
  }
  return counts;
}

VennCounts venn_counts(const std::vector<std::uint32_t>& y,
                       const std::vector<std::uint32_t>& y_noisy,
                       const std::vector<std::uint32_t>& y_cls,
                       const std::vector<std::uint32_t>& y_post) {
  const std::size_t n = y.size();
  if (y_noisy.size() != n || y_cls.size() != n || y_post.size() != n)
    throw std::invalid_argument("venn_counts: length mismatch");
  VennCounts v;
  for (std::size_t i = 0; i < n; ++i) {
    const bool clean = y_noisy[i] == y[i];
    const bool cls_hit = y_cls[i] == y[i];
    const bool post_hit = y_post[i] == y[i];
    if (clean) {
      if (!cls_hit && !post_hit) ++v.a;
      else if (!cls_hit) ++v.b;
      else if (post_hit) ++v.c;
      else ++v.d;
    } else {
      if (!cls_hit && !post_hit) ++v.e;
      else if (!cls_hit) ++v.f;
      else if (post_hit) ++v.g;
      else ++v.h;
    }
  }
  return v;
}

std::int64_t net_gain(const VennCounts& v) {
  return static_cast<std::int64_t>(v.b + v.f) - static_cast<std::int64_t>(v.d + v.h);
}

std::vector<std::uint32_t> argmax_labels(const Matrix& probs) {
  std::vector<std::uint32_t> labels(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const double* row = probs.row(i);
    std::uint32_t best = 0;
    for (std::size_t j = 1; j < probs.cols(); ++j) {
      if (row[j] > row[best]) best = static_cast<std::uint32_t>(j);
    }
    labels[i] = best;
  }
  return labels;
}

EvalReport run_pipeline(const RunConfig& cfg) {
  validate_run_config(cfg);
  StageClock clock;

  Dataset full;
  clock.run("gen_data", [&] {
    if (cfg.data == "synthetic") {
      RngState rng = substream(cfg.seed, 1);
      full = generate_gaussian_mixture(cfg.synth, rng);
    } else if (cfg.data == "idx") {
      full = load_idx(cfg.idx_images, cfg.idx_labels, cfg.idx_normalize);
    } else {
      full = load_dataset(cfg.data);
    }
    if (full.true_labels.empty())
      throw std::invalid_argument("pipeline needs true labels for evaluation");
  });

  std::optional<NoiseOutcome> outcome;
  clock.run("inject_noise", [&] {
    if (cfg.noise.kind == NoiseKind::None && !full.noisy_labels.empty()) return;
    RngState rng = substream(cfg.seed, 2);
    if (cfg.noise.kind == NoiseKind::SimilarityRelated) {
      TrainConfig pre = cfg.classifier;
      pre.seed = substream(cfg.seed, 7).seed;
      MlpModel reference = train_classifier(full, pre);
      PredictionSet reference_preds = predict(reference, full.features);
      outcome = inject(cfg.noise, full, rng, &reference_preds);
    } else {
      outcome = inject(cfg.noise, full, rng);
    }
    full.noisy_labels = outcome->noisy_labels;
  });

  Dataset train;
  Dataset test;
  clock.run("split", [&] {
    RngState rng = substream(cfg.seed, 6);
    std::tie(train, test) = train_test_split(full, cfg.test_fraction, rng);
  });

  MlpModel classifier;
  clock.run("train_classifier", [&] {
    TrainConfig tc = cfg.classifier;
    tc.seed = substream(cfg.seed, 3).seed;
    classifier = train_classifier(train, tc);
  });

  PredictionSet preds_train;
  PredictionSet preds_test;
  clock.run("predict", [&] {
    preds_train = predict(classifier, train.features);
    preds_test = predict(classifier, test.features);
  });

  NpcConfig base = cfg.npc;
  base.seed = substream(cfg.seed, 4).seed;
  std::vector<NpcModel> rounds;
  PredictionSet cur_train = preds_train;
  for (std::uint32_t it = 0; it < cfg.npc_iterations; ++it) {
    PriorAssignment priors;
    clock.run("build_prior", [&] {
      priors = build_priors(train.features, cur_train, cfg.prior);
    });
    clock.run("train_npc", [&] {
      NpcConfig round = base;
      round.seed = substream(base.seed, 100 + it).seed;
      rounds.push_back(train_npc(train.features, cur_train, priors, round));
    });
    clock.run("calibrate", [&] {
      cur_train = calibrate(rounds.back(), train.features, cur_train);
    });
  }
  PredictionSet cur_test = preds_test;
  clock.run("calibrate", [&] {
    for (const NpcModel& model : rounds)
      cur_test = calibrate(model, test.features, cur_test);
  });

  std::optional<double> t_mse_value;
  std::optional<Matrix> t_hat;
  std::optional<Matrix> t_true;
  std::optional<std::uint64_t> t_excluded;
  if (cfg.estimate_t) {
    clock.run("estimate_t", [&] {
      TrainConfig ac = cfg.classifier;
      ac.seed = substream(cfg.seed, 5).seed;
      AuxModel aux = train_aux(train.features, train.noisy_labels, full.num_classes,
                               argmax_labels(preds_train.probs), ac);
      TransitionEstimate est =
          estimate_transition(rounds.back(), aux, train.features, preds_train, cur_train,
                              train.true_labels, cfg.cond_cap);
      t_hat = est.t_hat;
      t_excluded = est.skipped;
      if (outcome.has_value()) {
        t_true = true_transition(cfg.noise, full, *outcome).probs;
        t_mse_value = transition_mse(*t_hat, *t_true);
      }
    });
  }

  EvalReport report;
  clock.run("eval", [&] {
    const auto yhat_test = argmax_labels(preds_test.probs);
    const auto ystar_test = argmax_labels(cur_test.probs);
    report.accuracy_before = accuracy(yhat_test, test.true_labels);
    report.accuracy_after = accuracy(ystar_test, test.true_labels);
    report.confusion_before = confusion_counts(test.true_labels, yhat_test, full.num_classes);
    report.confusion_after = confusion_counts(test.true_labels, ystar_test, full.num_classes);
    report.venn_counts = venn_counts(train.true_labels, train.noisy_labels,
                                     argmax_labels(preds_train.probs),
                                     argmax_labels(cur_train.probs));
    report.net_gain = net_gain(report.venn_counts);
  });

  report.seed = cfg.seed;
  report.config = config_echo(cfg);
  report.t_mse = t_mse_value;
  report.t_hat = t_hat;
  report.t_true = t_true;
  report.t_excluded = t_excluded;
  report.wall_times = clock.finish();

  if (!cfg.report_out.empty()) save_report(report, cfg.report_out);
  if (!cfg.t_csv_out.empty() && t_hat.has_value()) save_transition_csv(*t_hat, cfg.t_csv_out);
  return report;
}

std::string report_to_json(const EvalReport& report) {
  ordered_json j;
  j["seed"] = report.seed;
  ordered_json cfg = ordered_json::object();
  for (const auto& [key, value] : report.config) cfg[key] = value;
  j["config"] = std::move(cfg);
  j["accuracy_before"] = report.accuracy_before;
  j["accuracy_after"] = report.accuracy_after;
  j["confusion_before"] = report.confusion_before;
  j["confusion_after"] = report.confusion_after;
  ordered_json venn;
  venn["a"] = report.venn_counts.a;
  venn["b"] = report.venn_counts.b;
  venn["c"] = report.venn_counts.c;
  venn["d"] = report.venn_counts.d;
  venn["e"] = report.venn_counts.e;
  venn["f"] = report.venn_counts.f;
  venn["g"] = report.venn_counts.g;
  venn["h"] = report.venn_counts.h;
  j["venn_counts"] = std::move(venn);
  j["net_gain"] = report.net_gain;
  if (report.t_mse.has_value()) j["t_mse"] = *report.t_mse;
  else j["t_mse"] = nullptr;
  if (report.t_hat.has_value()) j["t_hat"] = matrix_to_rows(*report.t_hat);
  else j["t_hat"] = nullptr;
  if (report.t_true.has_value()) j["t_true"] = matrix_to_rows(*report.t_true);
  else j["t_true"] = nullptr;
  if (report.t_excluded.has_value()) j["t_excluded"] = *report.t_excluded;
  else j["t_excluded"] = nullptr;
  ordered_json times = ordered_json::object();
  for (const auto& [stage, seconds] : report.wall_times) times[stage] = seconds;
  j["wall_times"] = std::move(times);
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const ordered_json j = ordered_json::parse(text);
    EvalReport report;
    report.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [key, value] : j.at("config").items())
      report.config.emplace_back(key, value.get<std::string>());
    report.accuracy_before = j.at("accuracy_before").get<double>();
    report.accuracy_after = j.at("accuracy_after").get<double>();
    report.confusion_before =
        j.at("confusion_before").get<std::vector<std::vector<std::uint64_t>>>();
    report.confusion_after =
        j.at("confusion_after").get<std::vector<std::vector<std::uint64_t>>>();
    const ordered_json& venn = j.at("venn_counts");
    report.venn_counts.a = venn.at("a").get<std::uint64_t>();
    report.venn_counts.b = venn.at("b").get<std::uint64_t>();
    report.venn_counts.c = venn.at("c").get<std::uint64_t>();
    report.venn_counts.d = venn.at("d").get<std::uint64_t>();
    report.venn_counts.e = venn.at("e").get<std::uint64_t>();
    report.venn_counts.f = venn.at("f").get<std::uint64_t>();
    report.venn_counts.g = venn.at("g").get<std::uint64_t>();
    report.venn_counts.h = venn.at("h").get<std::uint64_t>();
    report.net_gain = j.at("net_gain").get<std::int64_t>();
    if (!j.at("t_mse").is_null()) report.t_mse = j.at("t_mse").get<double>();
    if (!j.at("t_hat").is_null()) report.t_hat = matrix_from_rows(j.at("t_hat"));
    if (!j.at("t_true").is_null()) report.t_true = matrix_from_rows(j.at("t_true"));
    if (!j.at("t_excluded").is_null())
      report.t_excluded = j.at("t_excluded").get<std::uint64_t>();
    for (const auto& [stage, seconds] : j.at("wall_times").items())
      report.wall_times.emplace_back(stage, seconds.get<double>());
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("report: ") + e.what());
  }
}

void save_report(const EvalReport& report, const std::string& path) {
  write_text_file(path, report_to_json(report));
}

EvalReport load_report(const std::string& path) {
  return report_from_json(read_text_file(path));
}

void save_transition_csv(const Matrix& t, const std::string& path) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) {
      if (j) out << ',';
      out << t(i, j);
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace npc
