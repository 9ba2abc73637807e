#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/harness/train.hpp"

namespace moi::harness {

// One line of a prediction dump.
struct PredictionRecord {
  std::string dialogue_id;
  int turn_index = 1;
  std::string strategy;
  ObjectIdSet predicted_object_ids;

  nlohmann::json to_json() const {
    return {{"dialogue_id", dialogue_id},
            {"turn_index", turn_index},
            {"strategy", strategy},
            {"predicted_object_ids", std::vector<ObjectId>(predicted_object_ids.begin(), predicted_object_ids.end())}};
  }

  static PredictionRecord from_json(const nlohmann::json& j) {
    PredictionRecord r;
    try {
      r.dialogue_id = j.at("dialogue_id").get<std::string>();
      r.turn_index = j.at("turn_index").get<int>();
      r.strategy = j.at("strategy").get<std::string>();
      for (const auto& id : j.at("predicted_object_ids")) r.predicted_object_ids.insert(id.get<ObjectId>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("prediction record", e.what());
    }
    return r;
  }
};

inline std::vector<PredictionRecord> make_records(const DatasetSplit& split, const std::vector<ObjectIdSet>& predictions,
                                                  const std::string& strategy) {
  if (predictions.size() != split.samples.size()) throw InvalidInput("one prediction per sample is required");
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    out.push_back({split.samples[i].dialogue_id, split.samples[i].turn_index, strategy, predictions[i]});
  }
  return out;
}

inline void save_predictions(const std::vector<PredictionRecord>& records, const fs::path& path) {
  std::string text;
  for (const auto& r : records) text += r.to_json().dump() + "\n";
  detail::write_file(path, text);
}

inline std::vector<PredictionRecord> load_predictions(const fs::path& path) {
  std::istringstream in(detail::read_file(path));
  std::vector<PredictionRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(PredictionRecord::from_json(detail::parse_json(line, path.string() + ":" + std::to_string(n))));
  }
  return out;
}

inline std::vector<ObjectIdSet> heuristic_predictions(const DatasetSplit& split, eval::Heuristic kind,
                                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ObjectIdSet> out;
  for (const auto& s : split.samples) out.push_back(eval::heuristic_predict(kind, split.scene(s.scene_id), rng));
  return out;
}

struct PredictOptions {
  // Inference strategy for alignment models; empty picks the approach default.
  std::string strategy;
  // Precomputed features for scene_dialogue; extracted from the detector
  // checkpoint when empty.
  std::string features;
  std::string detector_checkpoint;
  double threshold = 0.5;
  double min_object_prob = 0.5;
};

// Predictions of a trained checkpoint on every sample of `split`, tagged with
// the strategy that produced them.
inline std::vector<PredictionRecord> predict_with_checkpoint(const Checkpoint& ckpt, const DatasetSplit& split,
                                                             const PredictOptions& opt = {}) {
  const SceneImages images(split);
  switch (ckpt.approach) {
    case Approach::kDetr:
      throw ConfigError("a detr checkpoint is a feature extractor and does not identify objects");
    case Approach::kSitcomDetr: {
      const auto det = detector_from_checkpoint(ckpt);
      return make_records(split, sitcom_predict(det, split, images, opt.min_object_prob), "sitcom_detr");
    }
    case Approach::kClipperOriginal:
    case Approach::kClipperV1:
    case Approach::kClipperV2: {
      const auto model = alignment_from_checkpoint(ckpt);
      const auto strategy =
          opt.strategy.empty() ? default_strategy(ckpt.approach) : alignment::parse_strategy(opt.strategy);
      const SceneCrops crops = SceneCrops::build(model, split, images);
      return make_records(split, clipper_predict(model, split, crops, strategy),
                          to_string(ckpt.approach) + "/" + std::string(alignment::to_string(strategy)));
    }
    case Approach::kSceneDialogue: {
      const auto model = scene_dialogue_from_checkpoint(ckpt);
      const std::string expected = ckpt.train_config.value("feature_extractor_hash", std::string());
      scene::ObjectFeatureCache cache;
      if (!opt.features.empty()) {
        cache = scene::ObjectFeatureCache::load(opt.features);
      } else if (!opt.detector_checkpoint.empty()) {
        const auto det = detector_from_checkpoint(load_checkpoint(opt.detector_checkpoint));
        cache = extract_feature_cache(det, checkpoint_hash(opt.detector_checkpoint), split);
      } else {
        throw ConfigError("scene_dialogue prediction needs features or a detector checkpoint");
      }
      if (!expected.empty()) cache.require_extractor(expected);
      cache.validate_against(split);
      return make_records(split, scene_dialogue_predict(model, split, cache, opt.threshold), "scene_dialogue");
    }
  }
  throw ConfigError("unknown approach");
}

// Scores the records tagged `strategy` (all records when empty) against the
// split. Every sample must be predicted exactly once; unknown dialogue turns
// and object ids outside the sample's scene are errors.
inline eval::MetricReport run_evaluate(const std::vector<PredictionRecord>& records, const DatasetSplit& split,
                                       const std::string& strategy = {}) {
  std::map<std::pair<std::string, int>, std::size_t> index;
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    index[{split.samples[i].dialogue_id, split.samples[i].turn_index}] = i;
  }
  std::vector<const PredictionRecord*> by_sample(split.samples.size(), nullptr);
  std::string tag = strategy;
  for (const auto& r : records) {
    if (!strategy.empty() && r.strategy != strategy) continue;
    if (tag.empty()) tag = r.strategy;
    if (r.strategy != tag) throw InvalidInput("predictions mix strategies '" + tag + "' and '" + r.strategy + "'");
    auto it = index.find({r.dialogue_id, r.turn_index});
    if (it == index.end()) {
      throw ValidationError("prediction for unknown dialogue turn " + r.dialogue_id + "#" + std::to_string(r.turn_index));
    }
    const auto& sample = split.samples[it->second];
    const Scene& scene = split.scene(sample.scene_id);
    for (ObjectId id : r.predicted_object_ids) {
      if (scene.find(id) == nullptr) {
        throw ValidationError("object " + std::to_string(id) + " is not in scene " + sample.scene_id);
      }
    }
    if (by_sample[it->second] != nullptr) {
      throw InvalidInput("duplicate prediction for " + r.dialogue_id + "#" + std::to_string(r.turn_index));
    }
    by_sample[it->second] = &r;
  }
  std::vector<eval::SampleScore> scores;
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    if (by_sample[i] == nullptr) {
      throw InvalidInput("no prediction for " + split.samples[i].dialogue_id + "#" +
                         std::to_string(split.samples[i].turn_index));
    }
    scores.push_back(eval::score_sample(split.samples[i].label_object_ids, by_sample[i]->predicted_object_ids));
  }
  return eval::aggregate(scores, tag);
}

inline eval::MetricReport report_from_json(const nlohmann::json& j) {
  eval::MetricReport r;
  auto prf = [](const nlohmann::json& x) {
    return eval::PrfScore{x.at("recall").get<double>(), x.at("precision").get<double>(), x.at("f1").get<double>()};
  };
  try {
    r.strategy = j.at("strategy").get<std::string>();
    r.macro = prf(j.at("macro"));
    r.micro = prf(j.at("micro"));
    const auto& c = j.at("counts");
    r.counts = {c.at("total_labels").get<std::size_t>(), c.at("total_predictions").get<std::size_t>(),
                c.at("total_correct").get<std::size_t>()};
    r.precision_equals_recall = j.value("precision_equals_recall", false);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("metric report", e.what());
  }
  return r;
}

inline void save_report(const eval::MetricReport& r, const fs::path& json_path) {
  detail::write_file(json_path, r.to_json().dump(2) + "\n");
  fs::path table = json_path;
  table.replace_extension(".txt");
  detail::write_file(table, eval::format_table(std::span<const eval::MetricReport>(&r, 1)));
}

inline eval::MetricReport load_report(const fs::path& path) {
  return report_from_json(detail::parse_json(detail::read_file(path), path.string()));
}

// Run directory "<root>/<UTC timestamp>-<config hash>". The root comes from
// MOI_OUTPUT_ROOT when set, otherwise "runs" under the working directory.
inline fs::path output_root() {
  const char* env = std::getenv("MOI_OUTPUT_ROOT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

inline fs::path make_run_dir(const std::string& config_hash) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  fs::path dir = output_root() / (std::string(stamp) + "-" + config_hash);
  for (int k = 1; fs::exists(dir); ++k) {
    dir = output_root() / (std::string(stamp) + "-" + config_hash + "-" + std::to_string(k));
  }
  fs::create_directories(dir);
  return dir;
}

}  // namespace moi::harness
