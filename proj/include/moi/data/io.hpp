#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/core/error.hpp"
#include "moi/data/dialogue.hpp"
#include "moi/data/types.hpp"

namespace moi {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace detail {

inline const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

template <class T>
T require_as(const json& j, const std::string& key, const std::string& path) {
  const json& v = require(j, key, path);
  const std::string field = path.empty() ? key : path + "." + key;
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ParseError(field, e.what());
  }
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(where, e.what());
  }
}

inline void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + p.string() + "'");
  out << text;
}

}  // namespace detail

// Checks object id uniqueness, box validity and image bounds (1 px slack).
// When num_categories > 0 categories must lie in [0, num_categories).
inline void validate_scene(const Scene& s, int num_categories = 0) {
  if (s.image_size.width <= 0 || s.image_size.height <= 0) {
    throw ValidationError("scene '" + s.scene_id + "': image_size must be positive");
  }
  std::set<ObjectId> seen;
  for (const auto& o : s.objects) {
    if (!seen.insert(o.object_id).second) {
      throw ValidationError("scene '" + s.scene_id + "': duplicate object_id " + std::to_string(o.object_id));
    }
    if (!o.box.valid()) {
      throw ValidationError("scene '" + s.scene_id + "': object " + std::to_string(o.object_id) +
                            " has a non-positive box size");
    }
    constexpr double kSlack = 1.0;
    if (o.box.x < -kSlack || o.box.y < -kSlack || o.box.right() > s.image_size.width + kSlack ||
        o.box.bottom() > s.image_size.height + kSlack) {
      throw ValidationError("scene '" + s.scene_id + "': object " + std::to_string(o.object_id) +
                            " box lies outside the image");
    }
    if (o.category < 0 || (num_categories > 0 && o.category >= num_categories)) {
      throw ValidationError("scene '" + s.scene_id + "': object " + std::to_string(o.object_id) +
                            " has category outside the label set");
    }
  }
}

inline json scene_to_json(const Scene& s) {
  json objs = json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"object_id", o.object_id},
                    {"bbox", {o.box.x, o.box.y, o.box.w, o.box.h}},
                    {"category", o.category},
                    {"prefab_id", o.prefab_id}});
  }
  return {{"scene_id", s.scene_id},
          {"image", s.image_ref},
          {"image_size", {s.image_size.width, s.image_size.height}},
          {"objects", objs}};
}

inline Scene scene_from_json(const json& j) {
  Scene s;
  s.scene_id = detail::require_as<std::string>(j, "scene_id", "");
  s.image_ref = detail::require_as<std::string>(j, "image", "");
  const auto size = detail::require_as<std::vector<int>>(j, "image_size", "");
  if (size.size() != 2) throw ParseError("image_size", "expected [width, height]");
  s.image_size = {size[0], size[1]};
  const json& objs = detail::require(j, "objects", "");
  if (!objs.is_array()) throw ParseError("objects", "expected an array");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const std::string path = "objects[" + std::to_string(i) + "]";
    SceneObject o;
    o.object_id = detail::require_as<ObjectId>(objs[i], "object_id", path);
    const auto bb = detail::require_as<std::vector<double>>(objs[i], "bbox", path);
    if (bb.size() != 4) throw ParseError(path + ".bbox", "expected [x, y, w, h]");
    o.box = BoundingBox{bb[0], bb[1], bb[2], bb[3]};
    o.category = detail::require_as<int>(objs[i], "category", path);
    o.prefab_id = detail::require_as<std::string>(objs[i], "prefab_id", path);
    s.objects.push_back(std::move(o));
  }
  return s;
}

inline std::string serialize_scene(const Scene& s) { return scene_to_json(s).dump(2) + "\n"; }

inline Scene parse_scene(const std::string& text, int num_categories = 0) {
  Scene s = scene_from_json(detail::parse_json(text, "scene"));
  validate_scene(s, num_categories);
  return s;
}

inline Scene load_scene(const fs::path& path, int num_categories = 0) {
  return parse_scene(detail::read_file(path), num_categories);
}

inline void save_scene(const Scene& s, const fs::path& path) { detail::write_file(path, serialize_scene(s)); }

struct TurnAnnotation {
  int turn_index = 1;
  std::string scene_id;
  ObjectIdSet label_object_ids;
};

struct DialogueRecord {
  std::string dialogue_id;
  std::vector<Utterance> turns;
  std::vector<TurnAnnotation> annotations;
};

inline json dialogue_to_json(const DialogueRecord& d) {
  json turns = json::array();
  for (const auto& u : d.turns) turns.push_back({{"speaker", u.speaker == Speaker::kUser ? "U" : "S"}, {"text", u.text}});
  json anns = json::array();
  for (const auto& a : d.annotations) {
    anns.push_back({{"turn_index", a.turn_index},
                    {"scene_id", a.scene_id},
                    {"label_object_ids", std::vector<ObjectId>(a.label_object_ids.begin(), a.label_object_ids.end())}});
  }
  return {{"dialogue_id", d.dialogue_id}, {"turns", turns}, {"annotations", anns}};
}

inline DialogueRecord dialogue_from_json(const json& j, const std::string& where) {
  DialogueRecord d;
  d.dialogue_id = detail::require_as<std::string>(j, "dialogue_id", where);
  const json& turns = detail::require(j, "turns", where);
  if (!turns.is_array()) throw ParseError(where + ".turns", "expected an array");
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const std::string path = where + ".turns[" + std::to_string(i) + "]";
    const auto sp = detail::require_as<std::string>(turns[i], "speaker", path);
    if (sp != "U" && sp != "S") throw ParseError(path + ".speaker", "expected \"U\" or \"S\"");
    d.turns.push_back({sp == "U" ? Speaker::kUser : Speaker::kSystem,
                       detail::require_as<std::string>(turns[i], "text", path)});
  }
  const json& anns = detail::require(j, "annotations", where);
  if (!anns.is_array()) throw ParseError(where + ".annotations", "expected an array");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string path = where + ".annotations[" + std::to_string(i) + "]";
    TurnAnnotation a;
    a.turn_index = detail::require_as<int>(anns[i], "turn_index", path);
    a.scene_id = detail::require_as<std::string>(anns[i], "scene_id", path);
    for (ObjectId id : detail::require_as<std::vector<ObjectId>>(anns[i], "label_object_ids", path)) {
      a.label_object_ids.insert(id);
    }
    d.annotations.push_back(std::move(a));
  }
  return d;
}

inline std::vector<DialogueRecord> load_dialogues(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  std::vector<DialogueRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    out.push_back(dialogue_from_json(detail::parse_json(line, where), where));
  }
  return out;
}

inline void save_dialogues(const std::vector<DialogueRecord>& ds, const fs::path& path) {
  std::string text;
  for (const auto& d : ds) text += dialogue_to_json(d).dump() + "\n";
  detail::write_file(path, text);
}

struct SplitManifest {
  std::string name;
  std::vector<std::string> dialogue_files;
  std::string scene_dir;
};

inline json manifest_to_json(const SplitManifest& m) {
  return {{"name", m.name}, {"dialogue_files", m.dialogue_files}, {"scene_dir", m.scene_dir}};
}

inline SplitManifest manifest_from_json(const json& j) {
  SplitManifest m;
  m.name = detail::require_as<std::string>(j, "name", "");
  m.dialogue_files = detail::require_as<std::vector<std::string>>(j, "dialogue_files", "");
  m.scene_dir = detail::require_as<std::string>(j, "scene_dir", "");
  return m;
}

// Turns dialogue records into per-user-turn samples for one split.
inline std::vector<DialogueTurnContext> samples_from_dialogues(const std::vector<DialogueRecord>& dialogues) {
  std::vector<DialogueTurnContext> out;
  for (const auto& d : dialogues) {
    for (const auto& a : d.annotations) {
      DialogueTurnContext c;
      c.dialogue_id = d.dialogue_id;
      c.turn_index = a.turn_index;
      c.encoded_text = encode_dialogue_context(d.turns, a.turn_index);
      c.scene_id = a.scene_id;
      c.label_object_ids = a.label_object_ids;
      out.push_back(std::move(c));
    }
  }
  return out;
}

// Every sample must reference a loaded scene and only label its objects.
inline void validate_split(const DatasetSplit& split) {
  for (const auto& s : split.samples) {
    auto it = split.scenes.find(s.scene_id);
    if (it == split.scenes.end()) {
      throw ValidationError("sample " + s.dialogue_id + "#" + std::to_string(s.turn_index) +
                            " references unknown scene '" + s.scene_id + "'");
    }
    for (ObjectId id : s.label_object_ids) {
      if (it->second.find(id) == nullptr) {
        throw ValidationError("sample " + s.dialogue_id + "#" + std::to_string(s.turn_index) + " labels object " +
                              std::to_string(id) + " absent from scene '" + s.scene_id + "'");
      }
    }
  }
}

// Loads a split manifest; relative paths resolve against the manifest's directory.
// Every *.json file in scene_dir is read as a scene.
inline DatasetSplit load_split(const fs::path& manifest_path, int num_categories = 0) {
  const SplitManifest m = manifest_from_json(detail::parse_json(detail::read_file(manifest_path), "manifest"));
  const fs::path base = manifest_path.parent_path();
  DatasetSplit split;
  split.name = split_name_from_string(m.name);
  split.scene_dir = base / m.scene_dir;
  if (!fs::is_directory(split.scene_dir)) throw InvalidInput("scene_dir '" + split.scene_dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(split.scene_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    Scene s = load_scene(f, num_categories);
    const std::string id = s.scene_id;
    if (!split.scenes.emplace(id, std::move(s)).second) throw ValidationError("duplicate scene_id '" + id + "'");
  }
  for (const auto& df : m.dialogue_files) {
    auto recs = load_dialogues(base / df);
    auto samples = samples_from_dialogues(recs);
    split.samples.insert(split.samples.end(), samples.begin(), samples.end());
  }
  validate_split(split);
  return split;
}

}  // namespace moi
