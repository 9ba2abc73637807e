#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "moi/harness/pipeline.hpp"
#include "moi/harness/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moi;

namespace {

json read_json_file(const std::string& path) {
  return detail::parse_json(detail::read_file(path), path);
}

// Explicit --out wins; otherwise a fresh run directory under the output root.
fs::path resolve_out(const std::string& out, const std::string& config_hash) {
  if (!out.empty()) {
    fs::create_directories(out);
    return out;
  }
  return harness::make_run_dir(config_hash);
}

std::string args_hash(const json& args) { return sha256_hex(args.dump()).substr(0, 12); }

struct GenerateArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> train_scenes, validation_scenes, test_scenes, min_objects, max_objects;
  std::optional<double> duplicate_prefab_prob;
};

int run_generate(const GenerateArgs& a) {
  auto cfg = a.config.empty() ? synth::SyntheticGenConfig::defaults()
                              : synth::SyntheticGenConfig::from_json(read_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.train_scenes) cfg.num_train_scenes = *a.train_scenes;
  if (a.validation_scenes) cfg.num_validation_scenes = *a.validation_scenes;
  if (a.test_scenes) cfg.num_test_scenes = *a.test_scenes;
  if (a.min_objects) cfg.min_objects = *a.min_objects;
  if (a.max_objects) cfg.max_objects = *a.max_objects;
  if (a.duplicate_prefab_prob) cfg.duplicate_prefab_prob = *a.duplicate_prefab_prob;
  const fs::path out = resolve_out(a.out, sha256_hex(cfg.to_json().dump()).substr(0, 12));
  const auto ds = synth::generate_synthetic_dataset(cfg, out);
  for (const auto& [split, path] : ds.manifests) {
    std::printf("%-10s %s  positive_ratio %.4f\n", to_string(split).c_str(), path.string().c_str(),
                ds.positive_ratio.at(split));
  }
  return 0;
}

struct TrainArgs {
  std::string config, preset, approach, train, validation, detector_checkpoint, train_features, validation_features, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> learning_rate, weight_decay;
  std::optional<int> max_epochs, batch_size, patience;
};

int run_train(const TrainArgs& a) {
  json j = json::object();
  if (!a.preset.empty()) {
    if (a.preset != "desk") throw ConfigError("unknown preset '" + a.preset + "'");
    if (a.approach.empty()) throw ConfigError("--preset needs --approach");
    j = harness::desk_scale_config(harness::parse_approach(a.approach)).to_json();
  }
  if (!a.config.empty()) j.merge_patch(read_json_file(a.config));
  if (!a.approach.empty()) j["approach"] = a.approach;
  if (!a.train.empty()) j["train_manifest"] = a.train;
  if (!a.validation.empty()) j["validation_manifest"] = a.validation;
  if (!a.detector_checkpoint.empty()) j["detector_checkpoint"] = a.detector_checkpoint;
  if (!a.train_features.empty()) j["train_features"] = a.train_features;
  if (!a.validation_features.empty()) j["validation_features"] = a.validation_features;
  if (a.seed) j["seed"] = *a.seed;
  if (a.learning_rate) j["learning_rate"] = *a.learning_rate;
  if (a.weight_decay) j["weight_decay"] = *a.weight_decay;
  if (a.max_epochs) j["max_epochs"] = *a.max_epochs;
  if (a.batch_size) j["batch_size"] = *a.batch_size;
  if (a.patience) j["early_stop_patience"] = *a.patience;
  if (j.contains("optimizer") && a.weight_decay) j["optimizer"]["weight_decay"] = *a.weight_decay;
  const harness::TrainConfig cfg = harness::TrainConfig::from_json(j);
  const fs::path out = resolve_out(a.out, cfg.hash());
  std::printf("run directory %s\n", out.string().c_str());
  const auto result = harness::run_training(cfg, out, [](const harness::EpochRecord& r) {
    std::printf("epoch %3d  lr %.3g  loss %.4f  %s %.4f%s\n", r.epoch, r.learning_rate, r.train_loss,
                r.metric_name.c_str(), r.validation_metric, r.improved ? "  *" : "");
    std::fflush(stdout);
  });
  std::printf("best %.4f at epoch %d%s; checkpoint %s (sha256 %s)\n", result.best_metric, result.best_epoch,
              result.early_stopped ? " (early stop)" : "", result.checkpoint_path.string().c_str(),
              result.checkpoint_hash.c_str());
  return 0;
}

struct ExtractArgs {
  std::string checkpoint, split, out;
  bool box_only = false;
};

int run_extract(const ExtractArgs& a) {
  const auto det = harness::detector_from_checkpoint(harness::load_checkpoint(a.checkpoint));
  const DatasetSplit split = load_split(a.split);
  const auto cache = harness::extract_feature_cache(det, harness::checkpoint_hash(a.checkpoint), split, a.box_only);
  fs::path out = a.out;
  if (out.empty()) {
    const json args{{"checkpoint", harness::checkpoint_hash(a.checkpoint)}, {"split", a.split}, {"box_only", a.box_only}};
    out = harness::make_run_dir(args_hash(args)) / ("features_" + to_string(split.name) + ".json");
  }
  cache.save(out);
  std::printf("%zu scenes -> %s (sha256 %s)\n", cache.scenes().size(), out.string().c_str(),
              sha256_hex(detail::read_file(out)).c_str());
  return 0;
}

struct PredictArgs {
  std::string checkpoint, heuristic, split, strategy, features, detector_checkpoint, out;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  double min_object_prob = 0.5;
};

int run_predict(const PredictArgs& a) {
  if (a.checkpoint.empty() == a.heuristic.empty()) throw ConfigError("give exactly one of --checkpoint and --heuristic");
  const DatasetSplit split = load_split(a.split);
  std::vector<harness::PredictionRecord> records;
  if (!a.heuristic.empty()) {
    const auto kind = eval::parse_heuristic(a.heuristic);
    records = harness::make_records(split, harness::heuristic_predictions(split, kind, a.seed),
                                    std::string(eval::to_string(kind)));
  } else {
    harness::PredictOptions opt{a.strategy, a.features, a.detector_checkpoint, a.threshold, a.min_object_prob};
    records = harness::predict_with_checkpoint(harness::load_checkpoint(a.checkpoint), split, opt);
  }
  fs::path out = a.out;
  if (out.empty()) {
    const json args{{"checkpoint", a.checkpoint.empty() ? a.heuristic : harness::checkpoint_hash(a.checkpoint)},
                    {"split", a.split},
                    {"strategy", a.strategy},
                    {"seed", a.seed}};
    out = harness::make_run_dir(args_hash(args)) / "predictions.jsonl";
  }
  harness::save_predictions(records, out);
  std::printf("%zu predictions (%s) -> %s\n", records.size(), records.empty() ? "" : records.front().strategy.c_str(),
              out.string().c_str());
  return 0;
}

struct EvaluateArgs {
  std::string predictions, split, strategy, out;
};

int run_evaluate(const EvaluateArgs& a) {
  const DatasetSplit split = load_split(a.split);
  const auto report = harness::run_evaluate(harness::load_predictions(a.predictions), split, a.strategy);
  fs::path out = a.out;
  if (out.empty()) {
    const json args{{"predictions", sha256_hex(detail::read_file(a.predictions))}, {"split", a.split}};
    out = harness::make_run_dir(args_hash(args)) / "report.json";
  }
  harness::save_report(report, out);
  std::cout << eval::format_table(std::span<const eval::MetricReport>(&report, 1));
  std::printf("report -> %s\n", out.string().c_str());
  return 0;
}

struct ReportArgs {
  std::vector<std::string> reports;
  std::string out;
};

int run_report(const ReportArgs& a) {
  std::vector<eval::MetricReport> reports;
  for (const auto& p : a.reports) reports.push_back(harness::load_report(p));
  const std::string table = eval::format_table(reports);
  std::cout << table;
  if (!a.out.empty()) detail::write_file(a.out, table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal object identification toolkit"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Render a synthetic scene-dialogue data set");
  gen->add_option("--config", ga.config, "SyntheticGenConfig JSON file");
  gen->add_option("--out", ga.out, "Output directory (default: a new run directory)");
  gen->add_option("--seed", ga.seed, "Generator seed");
  gen->add_option("--train-scenes", ga.train_scenes);
  gen->add_option("--validation-scenes", ga.validation_scenes);
  gen->add_option("--test-scenes", ga.test_scenes);
  gen->add_option("--min-objects", ga.min_objects);
  gen->add_option("--max-objects", ga.max_objects);
  gen->add_option("--duplicate-prefab-prob", ga.duplicate_prefab_prob);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one approach");
  train->add_option("--config", ta.config, "TrainConfig JSON file");
  train->add_option("--preset", ta.preset, "Start from a named preset (desk)");
  train->add_option("--approach", ta.approach,
                    "detr | sitcom_detr | clipper_original | clipper_v1 | clipper_v2 | scene_dialogue");
  train->add_option("--train", ta.train, "Train split manifest");
  train->add_option("--validation", ta.validation, "Validation split manifest");
  train->add_option("--detector-checkpoint", ta.detector_checkpoint);
  train->add_option("--train-features", ta.train_features);
  train->add_option("--validation-features", ta.validation_features);
  train->add_option("--out", ta.out, "Output directory (default: a new run directory)");
  train->add_option("--seed", ta.seed);
  train->add_option("--learning-rate", ta.learning_rate);
  train->add_option("--weight-decay", ta.weight_decay);
  train->add_option("--max-epochs", ta.max_epochs);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--early-stop-patience", ta.patience);

  ExtractArgs ea;
  auto* extract = app.add_subcommand("extract-features", "Cache per-object detector features for a split");
  extract->add_option("--checkpoint", ea.checkpoint, "Detector checkpoint")->required();
  extract->add_option("--split", ea.split, "Split manifest")->required();
  extract->add_option("--out", ea.out, "Cache file (default: inside a new run directory)");
  extract->add_flag("--box-only", ea.box_only, "Match queries to objects on boxes alone");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Write a prediction dump for a split");
  predict->add_option("--checkpoint", pa.checkpoint, "Trained model checkpoint");
  predict->add_option("--heuristic", pa.heuristic, "no_object | all_objects | random");
  predict->add_option("--split", pa.split, "Split manifest")->required();
  predict->add_option("--strategy", pa.strategy, "Alignment inference: sigmoid | mean | oracle");
  predict->add_option("--features", pa.features, "Feature cache for scene_dialogue");
  predict->add_option("--detector-checkpoint", pa.detector_checkpoint, "Detector used to extract features");
  predict->add_option("--threshold", pa.threshold, "Probability threshold for scene_dialogue");
  predict->add_option("--min-object-prob", pa.min_object_prob, "Object probability floor for sitcom_detr");
  predict->add_option("--seed", pa.seed, "Seed of the random heuristic");
  predict->add_option("--out", pa.out, "Prediction file (default: inside a new run directory)");

  EvaluateArgs va;
  auto* evaluate = app.add_subcommand("evaluate", "Score a prediction dump");
  evaluate->add_option("--predictions", va.predictions, "Prediction JSON-lines file")->required();
  evaluate->add_option("--split", va.split, "Split manifest")->required();
  evaluate->add_option("--strategy", va.strategy, "Only score records with this strategy tag");
  evaluate->add_option("--out", va.out, "Report JSON (a .txt table is written next to it)");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Tabulate evaluation reports");
  report->add_option("reports", ra.reports, "Report JSON files")->required();
  report->add_option("--out", ra.out, "Also write the table here");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return run_generate(ga);
    if (train->parsed()) return run_train(ta);
    if (extract->parsed()) return run_extract(ea);
    if (predict->parsed()) return run_predict(pa);
    if (evaluate->parsed()) return run_evaluate(va);
    if (report->parsed()) return run_report(ra);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
