#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "moi/alignment/clipper.hpp"
#include "moi/core/hash.hpp"
#include "moi/detection/detector.hpp"
#include "moi/scene/classifier.hpp"

namespace moi::harness {

enum class Approach { kDetr, kSitcomDetr, kClipperOriginal, kClipperV1, kClipperV2, kSceneDialogue };

inline Approach parse_approach(std::string_view s) {
  if (s == "detr") return Approach::kDetr;
  if (s == "sitcom_detr") return Approach::kSitcomDetr;
  if (s == "clipper_original") return Approach::kClipperOriginal;
  if (s == "clipper_v1") return Approach::kClipperV1;
  if (s == "clipper_v2") return Approach::kClipperV2;
  if (s == "scene_dialogue") return Approach::kSceneDialogue;
  throw ConfigError("unknown approach '" + std::string(s) + "'");
}

inline std::string to_string(Approach a) {
  switch (a) {
    case Approach::kDetr: return "detr";
    case Approach::kSitcomDetr: return "sitcom_detr";
    case Approach::kClipperOriginal: return "clipper_original";
    case Approach::kClipperV1: return "clipper_v1";
    case Approach::kClipperV2: return "clipper_v2";
    case Approach::kSceneDialogue: return "scene_dialogue";
  }
  return "detr";
}

inline bool is_clipper(Approach a) {
  return a == Approach::kClipperOriginal || a == Approach::kClipperV1 || a == Approach::kClipperV2;
}

constexpr double kMinLearningRate = 1e-5;
constexpr double kMaxLearningRate = 1e-4;

struct TrainConfig {
  Approach approach = Approach::kSceneDialogue;
  int max_epochs = 200;
  double learning_rate = 3e-5;
  int early_stop_patience = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  // Global gradient-norm clip; <= 0 disables.
  double grad_clip = 1.0;
  // Random horizontal/vertical flips of scene images (detector approaches).
  bool augment_flips = false;
  // Weight positives by negatives/positives of the training split.
  bool balance_positive_weight = true;
  // Extraction matching without the class term.
  bool box_only_feature_matching = false;
  // SitCoM-DETR: queries with object probability below this are not offered
  // to the identification matcher.
  double min_object_prob = 0.5;

  std::string train_manifest;
  std::string validation_manifest;
  // Detector checkpoint: initialisation for sitcom_detr, feature extractor
  // for scene_dialogue.
  std::string detector_checkpoint;
  // Optional precomputed feature caches for scene_dialogue.
  std::string train_features;
  std::string validation_features;

  detection::DetectionModelConfig detector;
  alignment::AlignmentModelConfig alignment;
  scene::SceneDialogueConfig scene_dialogue;

  void validate() const {
    if (!(learning_rate >= kMinLearningRate && learning_rate <= kMaxLearningRate)) {
      throw ConfigError("learning_rate " + std::to_string(learning_rate) + " outside [1e-5, 1e-4]");
    }
    if (max_epochs <= 0 || max_epochs > 200) throw ConfigError("max_epochs must lie in [1, 200]");
    if (early_stop_patience <= 0) throw ConfigError("early_stop_patience must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (is_clipper(approach) && batch_size < 2) throw ConfigError("contrastive training needs batch_size >= 2");
  }

  nlohmann::json to_json() const {
    return {{"approach", to_string(approach)},
            {"max_epochs", max_epochs},
            {"learning_rate", learning_rate},
            {"lr_schedule", "linear"},
            {"early_stop_patience", early_stop_patience},
            {"batch_size", batch_size},
            {"seed", seed},
            {"optimizer", {{"name", "adamw"}, {"weight_decay", weight_decay}, {"beta1", beta1}, {"beta2", beta2}}},
            {"grad_clip", grad_clip},
            {"augment_flips", augment_flips},
            {"balance_positive_weight", balance_positive_weight},
            {"box_only_feature_matching", box_only_feature_matching},
            {"min_object_prob", min_object_prob},
            {"train_manifest", train_manifest},
            {"validation_manifest", validation_manifest},
            {"detector_checkpoint", detector_checkpoint},
            {"train_features", train_features},
            {"validation_features", validation_features},
            {"detector", detector.to_json()},
            {"alignment", alignment.to_json()},
            {"scene_dialogue", scene_dialogue.to_json()}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("approach")) c.approach = parse_approach(j["approach"].get<std::string>());
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("lr_schedule") && j["lr_schedule"] != "linear") throw ConfigError("only the linear schedule is supported");
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      if (o.value("name", std::string("adamw")) != "adamw") throw ConfigError("only adamw is supported");
      c.weight_decay = o.value("weight_decay", c.weight_decay);
      c.beta1 = o.value("beta1", c.beta1);
      c.beta2 = o.value("beta2", c.beta2);
    }
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.augment_flips = j.value("augment_flips", c.augment_flips);
    c.balance_positive_weight = j.value("balance_positive_weight", c.balance_positive_weight);
    c.box_only_feature_matching = j.value("box_only_feature_matching", c.box_only_feature_matching);
    c.min_object_prob = j.value("min_object_prob", c.min_object_prob);
    c.train_manifest = j.value("train_manifest", c.train_manifest);
    c.validation_manifest = j.value("validation_manifest", c.validation_manifest);
    c.detector_checkpoint = j.value("detector_checkpoint", c.detector_checkpoint);
    c.train_features = j.value("train_features", c.train_features);
    c.validation_features = j.value("validation_features", c.validation_features);
    if (j.contains("detector")) c.detector = detection::DetectionModelConfig::from_json(j["detector"]);
    if (j.contains("alignment")) c.alignment = alignment::AlignmentModelConfig::from_json(j["alignment"]);
    if (j.contains("scene_dialogue")) c.scene_dialogue = scene::SceneDialogueConfig::from_json(j["scene_dialogue"]);
    c.validate();
    return c;
  }

  // Short stable digest of the configuration, used in run directory names.
  std::string hash() const { return sha256_hex(to_json().dump()).substr(0, 12); }
};

// Settings for the default synthetic data set, where every model trains from
// scratch. The detector stands in for a pretrained one and runs the full epoch
// budget; the two alignment approaches share one batch size.
inline TrainConfig desk_scale_config(Approach a) {
  TrainConfig c;
  c.approach = a;
  c.learning_rate = 1e-4;
  switch (a) {
    case Approach::kDetr:
      c.batch_size = 1;
      c.augment_flips = true;
      c.early_stop_patience = c.max_epochs;
      break;
    case Approach::kSitcomDetr:
      c.batch_size = 1;
      c.augment_flips = true;
      break;
    default:
      c.batch_size = 4;
      break;
  }
  return c;
}

}  // namespace moi::harness
