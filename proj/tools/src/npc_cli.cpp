#include <algorithm>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "npc/harness.hpp"

namespace {

using nlohmann::ordered_json;

std::string dashed(const std::string& key) {
  std::string flag = "--";
  for (char ch : key) flag += ch == '_' ? '-' : ch;
  return flag;
}

ordered_json matrix_to_rows(const npc::Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct TrainFlags {
  npc::TrainConfig cfg;
  std::uint64_t seed = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--batch", cfg.batch_size, "minibatch size");
    cmd->add_option("--lr", cfg.learning_rate, "Adam learning rate");
    cmd->add_option("--smoothing", cfg.smoothing, "label smoothing mass");
    cmd->add_option("--val-fraction", cfg.val_fraction, "held-out fraction for early stopping");
    cmd->add_option("--patience", cfg.patience, "epochs without improvement before stopping");
    cmd->add_option("--hidden-width", cfg.hidden_width, "hidden layer width");
    cmd->add_option("--hidden-layers", cfg.hidden_layers, "hidden layer count");
    cmd->add_flag("--early-stop,!--no-early-stop", cfg.early_stop,
                  "stop at the best validation accuracy instead of the full epoch budget");
    cmd->add_option("--seed", seed, "global seed");
  }
};

void setup_gen_data(CLI::App& app) {
  auto* cmd = app.add_subcommand("gen-data", "Generate or ingest a dataset container");
  auto out = std::make_shared<std::string>();
  auto spec = std::make_shared<npc::SyntheticSpec>();
  auto seed = std::make_shared<std::uint64_t>(0);
  auto idx_images = std::make_shared<std::string>();
  auto idx_labels = std::make_shared<std::string>();
  auto raw_pixels = std::make_shared<bool>(false);
  cmd->add_option("--out", *out, "output dataset path")->required();
  cmd->add_option("--classes", spec->num_classes, "synthetic class count");
  cmd->add_option("--samples", spec->num_samples, "synthetic sample count");
  cmd->add_option("--dim", spec->dim, "synthetic feature dimension");
  cmd->add_option("--spread", spec->spread, "synthetic cluster standard deviation");
  cmd->add_option("--seed", *seed, "global seed");
  cmd->add_option("--idx-images", *idx_images, "IDX image file to ingest instead");
  cmd->add_option("--idx-labels", *idx_labels, "IDX label file to ingest instead");
  cmd->add_flag("--raw-pixels", *raw_pixels, "keep byte values instead of scaling to [0, 1]");
  cmd->callback([=] {
    npc::Dataset ds;
    if (!idx_images->empty() || !idx_labels->empty()) {
      if (idx_images->empty() || idx_labels->empty())
        throw std::invalid_argument("--idx-images and --idx-labels go together");
      ds = npc::load_idx(*idx_images, *idx_labels, !*raw_pixels);
    } else {
      npc::RngState rng = npc::substream(*seed, 1);
      ds = npc::generate_gaussian_mixture(*spec, rng);
    }
    npc::save_dataset(ds, *out);
    std::cerr << "wrote " << ds.size() << " samples (" << ds.dim() << " features, "
              << ds.num_classes << " classes) to " << *out << "\n";
  });
}

void setup_inject_noise(CLI::App& app) {
  auto* cmd = app.add_subcommand("inject-noise", "Corrupt a dataset's labels");
  auto in = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto kind = std::make_shared<std::string>();
  auto ratio = std::make_shared<double>(0.0);
  auto asn_map = std::make_shared<std::string>();
  auto seed = std::make_shared<std::uint64_t>(0);
  auto sridn_preds = std::make_shared<std::string>();
  cmd->add_option("--in", *in, "input dataset path")->required();
  cmd->add_option("--out", *out, "output dataset path")->required();
  cmd->add_option("--noise", *kind, "none|symmetric|asymmetric|idn|sridn")->required();
  cmd->add_option("--ratio", *ratio, "noise ratio");
  cmd->add_option("--asn-map", *asn_map, "asymmetric class map, e.g. 2>7,3>8");
  cmd->add_option("--seed", *seed, "global seed");
  cmd->add_option("--sridn-preds", *sridn_preds,
                  "predictions used to rank confidence (default: train a fresh classifier)");
  cmd->callback([=] {
    npc::Dataset ds = npc::load_dataset(*in);
    npc::NoiseSpec spec;
    spec.kind = npc::parse_noise_kind(*kind);
    spec.ratio = *ratio;
    spec.asn_map = npc::parse_asn_map(*asn_map);
    npc::RngState rng = npc::substream(*seed, 2);
    npc::NoiseOutcome outcome;
    if (spec.kind == npc::NoiseKind::SimilarityRelated) {
      npc::PredictionSet preds;
      if (sridn_preds->empty()) {
        npc::TrainConfig pre;
        pre.seed = npc::substream(*seed, 7).seed;
        npc::MlpModel reference = npc::train_classifier(ds, pre);
        preds = npc::predict(reference, ds.features);
      } else {
        preds = npc::load_predictions(*sridn_preds);
      }
      outcome = npc::inject(spec, ds, rng, &preds);
    } else {
      outcome = npc::inject(spec, ds, rng);
    }
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      flipped += outcome.noisy_labels[i] != ds.true_labels[i];
    ds.noisy_labels = std::move(outcome.noisy_labels);
    npc::save_dataset(ds, *out);
    std::cerr << "flipped " << flipped << "/" << ds.size() << " labels, wrote " << *out << "\n";
  });
}

void setup_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "Train the baseline classifier");
  auto in = std::make_shared<std::string>();
  auto model_out = std::make_shared<std::string>();
  auto flags = std::make_shared<TrainFlags>();
  cmd->add_option("--in", *in, "training dataset path")->required();
  cmd->add_option("--model-out", *model_out, "output model path")->required();
  flags->attach(cmd);
  cmd->callback([=] {
    npc::Dataset ds = npc::load_dataset(*in);
    npc::TrainConfig tc = flags->cfg;
    tc.seed = npc::substream(flags->seed, 3).seed;
    npc::MlpModel model = npc::train_classifier(ds, tc);
    npc::save_model(model, *model_out);
    std::cerr << "wrote model to " << *model_out << "\n";
  });
}

void setup_predict(CLI::App& app) {
  auto* cmd = app.add_subcommand("predict", "Run a trained classifier over a dataset");
  auto in = std::make_shared<std::string>();
  auto model_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  cmd->add_option("--in", *in, "dataset path")->required();
  cmd->add_option("--model", *model_path, "model path")->required();
  cmd->add_option("--out", *out, "output predictions path")->required();
  cmd->callback([=] {
    npc::Dataset ds = npc::load_dataset(*in);
    npc::MlpModel model = npc::load_model(*model_path);
    npc::PredictionSet preds = npc::predict(model, ds.features);
    npc::save_predictions(preds, *out);
    std::cerr << "wrote predictions for " << preds.size() << " samples to " << *out << "\n";
  });
}

void setup_calibrate(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "calibrate", "Post-process predictions with the latent-label model");
  auto in = std::make_shared<std::string>();
  auto preds_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto npc_in = std::make_shared<std::string>();
  auto npc_out = std::make_shared<std::string>();
  auto prior = std::make_shared<npc::PriorConfig>();
  auto variant = std::make_shared<std::string>("top1");
  auto raw_features = std::make_shared<bool>(false);
  auto cfg = std::make_shared<npc::NpcConfig>();
  auto iterations = std::make_shared<std::uint32_t>(1);
  auto seed = std::make_shared<std::uint64_t>(0);
  cmd->add_option("--in", *in, "dataset path (features)")->required();
  cmd->add_option("--preds", *preds_path, "predictions to calibrate")->required();
  cmd->add_option("--out", *out, "output predictions path")->required();
  cmd->add_option("--npc-in", *npc_in, "apply an already trained calibration model");
  cmd->add_option("--npc-out", *npc_out, "save the trained calibration model");
  cmd->add_option("--prior-k", prior->k, "prior neighbors");
  cmd->add_option("--prior-rho", prior->rho, "prior vote weight");
  cmd->add_option("--prior-delta", prior->delta, "prior base concentration");
  cmd->add_option("--prior-anchor-fraction", prior->anchor_fraction,
                  "most-confident fraction kept as anchors");
  cmd->add_option("--prior-conf-threshold", prior->conf_threshold,
                  "absolute confidence cutoff for anchors");
  cmd->add_option("--prior-variant", *variant, "top1|topm");
  cmd->add_option("--prior-top-m", prior->top_m, "classes receiving vote mass under topm");
  cmd->add_flag("--prior-raw-features", *raw_features,
                "vote on raw features even when embeddings are available");
  cmd->add_option("--epochs", cfg->epochs, "training epochs");
  cmd->add_option("--batch", cfg->batch_size, "minibatch size");
  cmd->add_option("--lr", cfg->learning_rate, "Adam learning rate");
  cmd->add_option("--mc-samples", cfg->mc_samples, "Monte-Carlo samples per datum");
  cmd->add_option("--alpha-floor", cfg->alpha_floor, "encoder concentration floor");
  cmd->add_option("--hidden-width", cfg->hidden_width, "hidden layer width");
  cmd->add_option("--hidden-layers", cfg->hidden_layers, "hidden layer count");
  cmd->add_option("--iterations", *iterations, "calibration rounds");
  cmd->add_option("--seed", *seed, "global seed");
  cmd->callback([=] {
    npc::Dataset ds = npc::load_dataset(*in);
    npc::PredictionSet preds = npc::load_predictions(*preds_path);
    if (*variant == "top1") prior->variant = npc::PriorConfig::Variant::Top1;
    else if (*variant == "topm") prior->variant = npc::PriorConfig::Variant::TopM;
    else throw std::invalid_argument("unknown prior variant '" + *variant + "'");
    prior->prefer_embeddings = !*raw_features;
    if (!npc_in->empty()) {
      auto [model, saved_cfg] = npc::load_npc(*npc_in);
      npc::PredictionSet calibrated = npc::calibrate(model, ds.features, preds);
      npc::save_predictions(calibrated, *out);
      std::cerr << "calibrated " << calibrated.size() << " rows with " << *npc_in << "\n";
      return;
    }
    npc::NpcConfig run = *cfg;
    run.seed = npc::substream(*seed, 4).seed;
    auto rounds = npc::iterate_npc(ds.features, preds, *prior, run, *iterations);
    npc::save_predictions(rounds.back().calibrated, *out);
    if (!npc_out->empty()) npc::save_npc(rounds.back().model, run, *npc_out);
    std::cerr << "calibrated " << preds.size() << " rows over " << rounds.size()
              << " round(s), wrote " << *out << "\n";
  });
}

void setup_estimate_t(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "estimate-t", "Recover the label transition matrix from a calibrated run");
  auto in = std::make_shared<std::string>();
  auto preds_path = std::make_shared<std::string>();
  auto calibrated_path = std::make_shared<std::string>();
  auto npc_in = std::make_shared<std::string>();
  auto csv_out = std::make_shared<std::string>();
  auto cond_cap = std::make_shared<double>(1e6);
  auto flags = std::make_shared<TrainFlags>();
  cmd->add_option("--in", *in, "dataset path (needs noisy and true labels)")->required();
  cmd->add_option("--preds", *preds_path, "classifier predictions")->required();
  cmd->add_option("--calibrated", *calibrated_path, "calibrated predictions")->required();
  cmd->add_option("--npc-in", *npc_in, "trained calibration model")->required();
  cmd->add_option("--csv-out", *csv_out, "also write the estimate as CSV");
  cmd->add_option("--cond-cap", *cond_cap, "condition number cap for per-instance solves");
  flags->attach(cmd);
  cmd->callback([=] {
    npc::Dataset ds = npc::load_dataset(*in);
    npc::PredictionSet preds = npc::load_predictions(*preds_path);
    npc::PredictionSet calibrated = npc::load_predictions(*calibrated_path);
    auto [model, saved_cfg] = npc::load_npc(*npc_in);
    if (ds.noisy_labels.empty())
      throw std::invalid_argument("estimate-t needs noisy labels in the dataset");
    if (ds.true_labels.empty())
      throw std::invalid_argument("estimate-t needs true labels to aggregate per class");
    npc::TrainConfig ac = flags->cfg;
    ac.seed = npc::substream(flags->seed, 5).seed;
    npc::AuxModel aux = npc::train_aux(ds.features, ds.noisy_labels, ds.num_classes,
                                       npc::argmax_labels(preds.probs), ac);
    npc::TransitionEstimate est = npc::estimate_transition(
        model, aux, ds.features, preds, calibrated, ds.true_labels, *cond_cap);
    if (!csv_out->empty()) npc::save_transition_csv(est.t_hat, *csv_out);
    ordered_json j;
    j["t_hat"] = matrix_to_rows(est.t_hat);
    j["class_counts"] = est.class_counts;
    j["skipped"] = est.skipped;
    std::cout << j.dump(2) << "\n";
  });
}

void setup_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "Score predictions against a labeled dataset");
  auto data = std::make_shared<std::string>();
  auto preds_path = std::make_shared<std::string>();
  auto calibrated_path = std::make_shared<std::string>();
  auto disagreements = std::make_shared<std::uint32_t>(0);
  cmd->add_option("--data", *data, "dataset path")->required();
  cmd->add_option("--preds", *preds_path, "classifier predictions")->required();
  cmd->add_option("--calibrated", *calibrated_path, "calibrated predictions");
  cmd->add_option("--disagreements", *disagreements,
                  "list the N most confident prediction/annotation disagreements");
  cmd->callback([=] {
    npc::Dataset ds = npc::load_dataset(*data);
    npc::PredictionSet preds = npc::load_predictions(*preds_path);
    std::optional<npc::PredictionSet> calibrated;
    if (!calibrated_path->empty()) calibrated = npc::load_predictions(*calibrated_path);

    const auto yhat = npc::argmax_labels(preds.probs);
    std::vector<std::uint32_t> ystar;
    if (calibrated) ystar = npc::argmax_labels(calibrated->probs);

    ordered_json j;
    if (!ds.true_labels.empty()) {
      j["accuracy_before"] = npc::accuracy(yhat, ds.true_labels);
      if (calibrated) j["accuracy_after"] = npc::accuracy(ystar, ds.true_labels);
      j["confusion_before"] = npc::confusion_counts(ds.true_labels, yhat, ds.num_classes);
      if (calibrated)
        j["confusion_after"] = npc::confusion_counts(ds.true_labels, ystar, ds.num_classes);
      if (calibrated && !ds.noisy_labels.empty()) {
        const npc::VennCounts v =
            npc::venn_counts(ds.true_labels, ds.noisy_labels, yhat, ystar);
        j["venn_counts"] = {{"a", v.a}, {"b", v.b}, {"c", v.c}, {"d", v.d},
                            {"e", v.e}, {"f", v.f}, {"g", v.g}, {"h", v.h}};
        j["net_gain"] = npc::net_gain(v);
      }
    }

    if (*disagreements > 0) {
      const std::vector<std::uint32_t>& annotation =
          !ds.noisy_labels.empty() ? ds.noisy_labels : ds.true_labels;
      if (annotation.empty())
        throw std::invalid_argument("eval --disagreements needs labels in the dataset");
      const npc::PredictionSet& ranked = calibrated ? *calibrated : preds;
      const auto labels = npc::argmax_labels(ranked.probs);
      std::vector<std::size_t> order;
      for (std::size_t i = 0; i < ranked.size(); ++i)
        if (labels[i] != annotation[i]) order.push_back(i);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t lhs, std::size_t rhs) {
        return ranked.probs(lhs, labels[lhs]) > ranked.probs(rhs, labels[rhs]);
      });
      if (order.size() > *disagreements) order.resize(*disagreements);
      ordered_json list = ordered_json::array();
      for (std::size_t i : order) {
        ordered_json entry;
        entry["index"] = i;
        entry["annotation"] = annotation[i];
        entry["predicted"] = labels[i];
        entry["confidence"] = ranked.probs(i, labels[i]);
        list.push_back(std::move(entry));
      }
      j["disagreements"] = std::move(list);
    }
    std::cout << j.dump(2) << "\n";
  });
}

void setup_pipeline(CLI::App& app) {
  auto* cmd = app.add_subcommand("pipeline", "Run the full experiment and emit a JSON report");
  static const char* kKeys[] = {
      "data", "idx_images", "idx_labels", "idx_normalize", "classes", "samples", "dim",
      "spread", "test_fraction", "noise", "noise_ratio", "asn_map", "classifier_epochs",
      "classifier_batch", "classifier_lr", "classifier_smoothing", "classifier_early_stop",
      "classifier_val_fraction", "classifier_patience", "classifier_hidden_width",
      "classifier_hidden_layers", "prior_k", "prior_rho", "prior_delta",
      "prior_anchor_fraction", "prior_conf_threshold", "prior_variant", "prior_top_m",
      "prior_use_embeddings", "npc_epochs", "npc_batch", "npc_lr", "npc_mc_samples",
      "npc_alpha_floor", "npc_hidden_width", "npc_hidden_layers", "npc_iterations",
      "estimate_t", "cond_cap"};
  auto overrides = std::make_shared<std::vector<std::pair<std::string, std::string>>>();
  auto config_path = std::make_shared<std::string>();
  auto seed = std::make_shared<std::uint64_t>(0);
  auto report_out = std::make_shared<std::string>();
  auto t_csv_out = std::make_shared<std::string>();
  cmd->add_option("--config", *config_path, "key = value config file");
  cmd->add_option("--seed", *seed, "global seed")->required();
  cmd->add_option("--out", *report_out, "report path (default: print to stdout)");
  cmd->add_option("--t-csv-out", *t_csv_out, "transition estimate CSV path");
  for (const char* key : kKeys) {
    cmd->add_option(dashed(key))
        ->description(std::string("config key ") + key)
        ->each([overrides, key](const std::string& value) {
          overrides->emplace_back(key, value);
        });
  }
  cmd->callback([=] {
    npc::RunConfig cfg;
    if (!config_path->empty()) cfg = npc::load_run_config(*config_path);
    for (const auto& [key, value] : *overrides) npc::set_config_value(cfg, key, value);
    cfg.seed = *seed;
    cfg.report_out = *report_out;
    cfg.t_csv_out = *t_csv_out;
    npc::EvalReport report = npc::run_pipeline(cfg);
    if (cfg.report_out.empty()) {
      std::cout << npc::report_to_json(report);
    } else {
      std::cerr << "report written to " << cfg.report_out << "\n";
    }
    std::cerr << "accuracy " << report.accuracy_before << " -> " << report.accuracy_after
              << ", net gain " << report.net_gain << "\n";
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-hoc calibration of classifiers trained on noisy labels"};
  app.require_subcommand(1);
  setup_gen_data(app);
  setup_inject_noise(app);
  setup_train(app);
  setup_predict(app);
  setup_calibrate(app);
  setup_estimate_t(app);
  setup_eval(app);
  setup_pipeline(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
