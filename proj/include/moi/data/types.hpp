#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "moi/core/error.hpp"

namespace moi {

using ObjectId = std::int64_t;
using ObjectIdSet = std::set<ObjectId>;

// Axis-aligned box in pixel coordinates, (x, y) is the top-left corner.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }

  bool valid() const { return w > 0.0 && h > 0.0; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline BoundingBox make_box(double x, double y, double w, double h) {
  BoundingBox b{x, y, w, h};
  if (!b.valid()) {
    throw InvalidInput("bounding box must have positive width and height");
  }
  return b;
}

struct ImageSize {
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct SceneObject {
  ObjectId object_id = 0;
  BoundingBox box;
  int category = 0;
  std::string prefab_id;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  std::string scene_id;
  // Image path as written in the scene file, relative to the file's directory.
  std::string image_ref;
  ImageSize image_size;
  std::vector<SceneObject> objects;

  const SceneObject* find(ObjectId id) const {
    for (const auto& o : objects) {
      if (o.object_id == id) return &o;
    }
    return nullptr;
  }

  ObjectIdSet object_ids() const {
    ObjectIdSet ids;
    for (const auto& o : objects) ids.insert(o.object_id);
    return ids;
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

enum class Speaker { kUser, kSystem };

struct Utterance {
  Speaker speaker = Speaker::kUser;
  std::string text;
};

struct DialogueTurnContext {
  std::string dialogue_id;
  int turn_index = 1;  // 1-based index of the user turn
  std::string encoded_text;
  std::string scene_id;
  ObjectIdSet label_object_ids;
};

enum class SplitName { kTrain, kValidation, kTest };

inline std::string to_string(SplitName s) {
  switch (s) {
    case SplitName::kTrain: return "train";
    case SplitName::kValidation: return "validation";
    case SplitName::kTest: return "test";
  }
  return "train";
}

inline SplitName split_name_from_string(const std::string& s) {
  if (s == "train") return SplitName::kTrain;
  if (s == "validation") return SplitName::kValidation;
  if (s == "test") return SplitName::kTest;
  throw ParseError("name", "unknown split '" + s + "'");
}

struct DatasetSplit {
  SplitName name = SplitName::kTrain;
  std::vector<DialogueTurnContext> samples;
  std::map<std::string, Scene> scenes;
  // Directory the scene files (and their images) were read from.
  std::filesystem::path scene_dir;

  const Scene& scene(const std::string& id) const {
    auto it = scenes.find(id);
    if (it == scenes.end()) throw ValidationError("unknown scene_id '" + id + "'");
    return it->second;
  }

  std::filesystem::path image_path(const Scene& s) const { return scene_dir / s.image_ref; }
};

// Per-row metadata of a contrastive training batch.
struct PairMeta {
  std::string dialogue_id;
  int turn_index = 1;
  std::string scene_id;
  ObjectId object_id = 0;
  std::string prefab_id;
  ObjectIdSet label_object_ids;
};

}  // namespace moi
