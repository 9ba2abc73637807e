#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/data/io.hpp"
#include "moi/detection/loss.hpp"

namespace moi::scene {

using nn::Matrix;

struct ObjectFeature {
  ObjectId object_id = 0;
  std::vector<double> feature;
};

// Per-scene object features from a frozen detector, tagged with the hash of
// the checkpoint that produced them.
class ObjectFeatureCache {
 public:
  static constexpr int kSchemaVersion = 1;

  ObjectFeatureCache() = default;
  explicit ObjectFeatureCache(std::string extractor_hash) : hash_(std::move(extractor_hash)) {}

  const std::string& extractor_checkpoint_hash() const { return hash_; }
  std::size_t size() const { return scenes_.size(); }
  bool contains(const std::string& scene_id) const { return scenes_.count(scene_id) != 0; }

  void put(const std::string& scene_id, std::vector<ObjectFeature> features) {
    std::optional<std::size_t> width;
    for (const auto& f : features) {
      if (width && *width != f.feature.size()) throw ValidationError("feature widths differ within scene " + scene_id);
      width = f.feature.size();
    }
    scenes_[scene_id] = std::move(features);
  }

  const std::vector<ObjectFeature>& get(const std::string& scene_id) const {
    auto it = scenes_.find(scene_id);
    if (it == scenes_.end()) throw MissingFeatureError("no cached features for scene '" + scene_id + "'");
    return it->second;
  }

  const std::vector<double>& feature(const std::string& scene_id, ObjectId object_id) const {
    for (const auto& f : get(scene_id))
      if (f.object_id == object_id) return f.feature;
    throw MissingFeatureError("no cached feature for object " + std::to_string(object_id) + " in scene '" + scene_id +
                              "'");
  }

  const std::map<std::string, std::vector<ObjectFeature>>& scenes() const { return scenes_; }

  // Throws unless the cache was produced by the given checkpoint.
  void require_extractor(const std::string& checkpoint_hash) const {
    if (checkpoint_hash != hash_) {
      throw MissingFeatureError("feature cache was built by checkpoint " + hash_ + ", expected " + checkpoint_hash);
    }
  }

  // Every object of every scene has exactly one feature.
  void validate_against(const DatasetSplit& split) const {
    for (const auto& [id, s] : split.scenes) {
      const auto& feats = get(id);
      ObjectIdSet seen;
      for (const auto& f : feats) {
        if (!seen.insert(f.object_id).second) throw ValidationError("duplicate feature for object in scene " + id);
      }
      if (seen != s.object_ids()) throw ValidationError("feature cache does not cover the objects of scene " + id);
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json scenes = nlohmann::json::object();
    for (const auto& [id, feats] : scenes_) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& f : feats) arr.push_back({{"object_id", f.object_id}, {"feature", f.feature}});
      scenes[id] = std::move(arr);
    }
    return {{"schema_version", kSchemaVersion}, {"extractor_checkpoint_hash", hash_}, {"scenes", scenes}};
  }

  static ObjectFeatureCache from_json(const nlohmann::json& j) {
    const int version = detail::require_as<int>(j, "schema_version", "");
    if (version != kSchemaVersion) throw ParseError("schema_version", "unsupported feature cache version");
    ObjectFeatureCache c(detail::require_as<std::string>(j, "extractor_checkpoint_hash", ""));
    for (const auto& [id, arr] : detail::require(j, "scenes", "").items()) {
      std::vector<ObjectFeature> feats;
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string where = "scenes." + id + "[" + std::to_string(i) + "]";
        feats.push_back({detail::require_as<ObjectId>(arr[i], "object_id", where),
                         detail::require_as<std::vector<double>>(arr[i], "feature", where)});
      }
      c.put(id, std::move(feats));
    }
    return c;
  }

  void save(const std::filesystem::path& path) const { detail::write_file(path, to_json().dump() + "\n"); }

  static ObjectFeatureCache load(const std::filesystem::path& path) {
    return from_json(detail::parse_json(detail::read_file(path), path.string()));
  }

 private:
  std::string hash_;
  std::map<std::string, std::vector<ObjectFeature>> scenes_;
};

struct ExtractionOptions {
  // Drop the class-probability term from the matching cost.
  bool box_only_matching = false;
};

// Runs the detector on a scene image, Hungarian-matches queries to the
// ground-truth objects, and returns the final decoder state of each object's
// query, ordered by object_id.
inline std::vector<ObjectFeature> extract_object_features(const detection::DetectionOutput& out, const Scene& scene,
                                                          const ExtractionOptions& opt = {}) {
  std::vector<ObjectFeature> feats;
  if (scene.objects.empty()) return feats;
  if (out.num_queries() < static_cast<Eigen::Index>(scene.objects.size())) {
    throw ConfigError("detector has " + std::to_string(out.num_queries()) + " queries but scene " + scene.scene_id +
                      " has " + std::to_string(scene.objects.size()) + " objects");
  }
  const auto targets = detection::targets_from_objects(scene.objects, scene.image_size);
  const auto assignment = geometry::hungarian_assign(
      detection::detection_matching_cost(out, targets, detection::LossWeights{}, !opt.box_only_matching));
  const auto pred_for_target = assignment.pred_for_target(scene.objects.size());
  for (std::size_t t = 0; t < scene.objects.size(); ++t) {
    const auto q = static_cast<Eigen::Index>(pred_for_target[t]);
    const auto row = out.hidden.row(q);
    feats.push_back({scene.objects[t].object_id, std::vector<double>(row.data(), row.data() + row.size())});
  }
  std::sort(feats.begin(), feats.end(), [](const auto& a, const auto& b) { return a.object_id < b.object_id; });
  return feats;
}

inline std::vector<ObjectFeature> extract_object_features(const detection::Detector& detector, const Image& image,
                                                          const Scene& scene, const ExtractionOptions& opt = {}) {
  if (detector.config().num_queries < static_cast<int>(scene.objects.size())) {
    throw ConfigError("detector has " + std::to_string(detector.config().num_queries) + " queries but scene " +
                      scene.scene_id + " has " + std::to_string(scene.objects.size()) + " objects");
  }
  if (scene.objects.empty()) return {};
  return extract_object_features(detector.detect(image), scene, opt);
}

}  // namespace moi::scene
