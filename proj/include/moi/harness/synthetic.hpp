#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/data/image.hpp"
#include "moi/data/io.hpp"

namespace moi::synth {

struct PaletteEntry {
  std::string color;
  std::array<double, 3> rgb{};
  std::string shape;  // "square" | "circle" | "triangle"
  std::string prefab_id;
  int category = 0;
  int size_px = 12;
};

// A user request pattern. Placeholders {color} {shape} {hpos} {vpos} are
// filled from the sampled target; each placeholder present is a constraint.
struct DialogueTemplate {
  std::string text;
};

struct SyntheticGenConfig {
  int num_train_scenes = 200;
  int num_validation_scenes = 50;
  int num_test_scenes = 50;
  int min_objects = 3;
  int max_objects = 8;
  std::vector<PaletteEntry> palette;
  double duplicate_prefab_prob = 0.5;
  std::vector<DialogueTemplate> templates;
  std::vector<std::string> system_replies;
  int dialogues_per_scene = 3;
  int max_user_turns = 2;
  int image_size = 64;
  int grid = 4;
  std::uint64_t seed = 7;

  static SyntheticGenConfig defaults();

  int num_scenes(SplitName s) const {
    switch (s) {
      case SplitName::kTrain: return num_train_scenes;
      case SplitName::kValidation: return num_validation_scenes;
      case SplitName::kTest: return num_test_scenes;
    }
    return 0;
  }

  void validate() const {
    if (palette.empty()) throw ConfigError("synthetic palette is empty");
    if (templates.empty()) throw ConfigError("synthetic generator needs at least one dialogue template");
    if (!(duplicate_prefab_prob >= 0.0 && duplicate_prefab_prob <= 1.0)) {
      throw ConfigError("duplicate_prefab_prob must lie in [0, 1]");
    }
    if (min_objects < 1 || max_objects < min_objects) throw ConfigError("bad objects_per_scene range");
    if (max_objects > grid * grid) throw ConfigError("more objects than grid cells");
    if (image_size % grid != 0) throw ConfigError("grid must divide the image size");
    for (const auto& p : palette) {
      if (p.size_px <= 1 || p.size_px > image_size / grid) throw ConfigError("palette object does not fit a grid cell");
    }
    if (dialogues_per_scene < 1 || max_user_turns < 1) throw ConfigError("need at least one dialogue turn");
  }

  int num_categories() const {
    int n = 0;
    for (const auto& p : palette) n = std::max(n, p.category + 1);
    return n;
  }

  const PaletteEntry* prefab(const std::string& id) const {
    for (const auto& p : palette)
      if (p.prefab_id == id) return &p;
    return nullptr;
  }

  nlohmann::json to_json() const {
    nlohmann::json pal = nlohmann::json::array();
    for (const auto& p : palette) {
      pal.push_back({{"color", p.color}, {"rgb", p.rgb}, {"shape", p.shape}, {"prefab_id", p.prefab_id},
                     {"category", p.category}, {"size_px", p.size_px}});
    }
    nlohmann::json tpl = nlohmann::json::array();
    for (const auto& t : templates) tpl.push_back(t.text);
    return {{"num_train_scenes", num_train_scenes},
            {"num_validation_scenes", num_validation_scenes},
            {"num_test_scenes", num_test_scenes},
            {"objects_per_scene", {min_objects, max_objects}},
            {"palette", pal},
            {"duplicate_prefab_prob", duplicate_prefab_prob},
            {"templates", tpl},
            {"system_replies", system_replies},
            {"dialogues_per_scene", dialogues_per_scene},
            {"max_user_turns", max_user_turns},
            {"image_size", image_size},
            {"grid", grid},
            {"seed", seed}};
  }

  static SyntheticGenConfig from_json(const nlohmann::json& j) {
    SyntheticGenConfig c = defaults();
    c.num_train_scenes = j.value("num_train_scenes", c.num_train_scenes);
    c.num_validation_scenes = j.value("num_validation_scenes", c.num_validation_scenes);
    c.num_test_scenes = j.value("num_test_scenes", c.num_test_scenes);
    if (j.contains("objects_per_scene")) {
      const auto r = j["objects_per_scene"].get<std::vector<int>>();
      if (r.size() != 2) throw ParseError("objects_per_scene", "expected [min, max]");
      c.min_objects = r[0];
      c.max_objects = r[1];
    }
    if (j.contains("palette")) {
      c.palette.clear();
      for (const auto& p : j["palette"]) {
        c.palette.push_back({p.at("color").get<std::string>(), p.at("rgb").get<std::array<double, 3>>(),
                             p.at("shape").get<std::string>(), p.at("prefab_id").get<std::string>(),
                             p.at("category").get<int>(), p.value("size_px", 12)});
      }
    }
    c.duplicate_prefab_prob = j.value("duplicate_prefab_prob", c.duplicate_prefab_prob);
    if (j.contains("templates")) {
      c.templates.clear();
      for (const auto& t : j["templates"]) c.templates.push_back({t.get<std::string>()});
    }
    if (j.contains("system_replies")) c.system_replies = j["system_replies"].get<std::vector<std::string>>();
    c.dialogues_per_scene = j.value("dialogues_per_scene", c.dialogues_per_scene);
    c.max_user_turns = j.value("max_user_turns", c.max_user_turns);
    c.image_size = j.value("image_size", c.image_size);
    c.grid = j.value("grid", c.grid);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

inline SyntheticGenConfig SyntheticGenConfig::defaults() {
  SyntheticGenConfig c;
  const std::array<std::pair<const char*, std::array<double, 3>>, 4> colors{{
      {"red", {0.90, 0.15, 0.15}},
      {"green", {0.15, 0.70, 0.20}},
      {"blue", {0.15, 0.30, 0.90}},
      {"yellow", {0.95, 0.85, 0.10}},
  }};
  const std::array<const char*, 3> shapes{"square", "circle", "triangle"};
  int category = 0;
  for (std::size_t ci = 0; ci < colors.size(); ++ci) {
    for (std::size_t si = 0; si < shapes.size(); ++si) {
      PaletteEntry e;
      e.color = colors[ci].first;
      e.rgb = colors[ci].second;
      e.shape = shapes[si];
      e.prefab_id = e.color + "-" + e.shape;
      e.category = category++;
      e.size_px = 10 + 2 * static_cast<int>((ci + si) % 3);
      c.palette.push_back(e);
    }
  }
  c.templates = {
      {"show me the {color} {shape}"},
      {"i am looking for the {color} {shape} on the {hpos}"},
      {"what about the {shape} on the {hpos}"},
      {"do you have anything {color}"},
      {"show me every {shape}"},
      {"the {color} one at the {vpos} please"},
  };
  c.system_replies = {"sure , here you go", "let me check the rack", "these are available", "take a look at these"};
  return c;
}

// Attribute values of one object as the dialogue templates see them.
struct ObjectAttributes {
  std::string color;
  std::string shape;
  std::string hpos;  // "left" | "right" of the image centre
  std::string vpos;  // "top" | "bottom"
};

inline ObjectAttributes attributes_of(const SceneObject& o, const ImageSize& img, const SyntheticGenConfig& cfg) {
  const PaletteEntry* p = cfg.prefab(o.prefab_id);
  if (p == nullptr) throw ValidationError("prefab '" + o.prefab_id + "' not in palette");
  return {p->color, p->shape, o.box.center_x() < img.width / 2.0 ? "left" : "right",
          o.box.center_y() < img.height / 2.0 ? "top" : "bottom"};
}

struct Constraint {
  std::optional<std::string> color, shape, hpos, vpos;

  bool matches(const ObjectAttributes& a) const {
    return (!color || *color == a.color) && (!shape || *shape == a.shape) && (!hpos || *hpos == a.hpos) &&
           (!vpos || *vpos == a.vpos);
  }
};

inline std::string fill_template(const std::string& tpl, const ObjectAttributes& a, Constraint& c) {
  std::string out;
  for (std::size_t i = 0; i < tpl.size();) {
    if (tpl[i] == '{') {
      const std::size_t end = tpl.find('}', i);
      if (end == std::string::npos) throw ConfigError("unterminated placeholder in template '" + tpl + "'");
      const std::string key = tpl.substr(i + 1, end - i - 1);
      if (key == "color") {
        out += a.color;
        c.color = a.color;
      } else if (key == "shape") {
        out += a.shape;
        c.shape = a.shape;
      } else if (key == "hpos") {
        out += a.hpos;
        c.hpos = a.hpos;
      } else if (key == "vpos") {
        out += a.vpos;
        c.vpos = a.vpos;
      } else {
        throw ConfigError("unknown placeholder {" + key + "}");
      }
      i = end + 1;
    } else {
      out += tpl[i++];
    }
  }
  return out;
}

inline void draw_object(Image& img, const SceneObject& o, const PaletteEntry& p) {
  const int x0 = static_cast<int>(o.box.x);
  const int y0 = static_cast<int>(o.box.y);
  const int s = p.size_px;
  for (int dy = 0; dy < s; ++dy) {
    for (int dx = 0; dx < s; ++dx) {
      const double u = dx + 0.5;
      const double v = dy + 0.5;
      bool inside = true;
      if (p.shape == "circle") {
        const double r = s / 2.0;
        inside = (u - r) * (u - r) + (v - r) * (v - r) <= r * r;
      } else if (p.shape == "triangle") {
        // Apex at the top centre, base along the bottom edge.
        inside = std::abs(u - s / 2.0) <= v / 2.0;
      }
      if (!inside) continue;
      for (int c = 0; c < 3; ++c) img.at(x0 + dx, y0 + dy, c) = p.rgb[static_cast<std::size_t>(c)];
    }
  }
}

struct GeneratedScene {
  Scene scene;
  Image image;
};

struct GeneratedSplit {
  SplitName name = SplitName::kTrain;
  std::vector<GeneratedScene> scenes;
  std::vector<DialogueRecord> dialogues;
  std::size_t total_labels = 0;
  std::size_t total_candidates = 0;

  double positive_ratio() const {
    return total_candidates == 0 ? 0.0 : static_cast<double>(total_labels) / static_cast<double>(total_candidates);
  }
};

inline GeneratedSplit generate_split(const SyntheticGenConfig& cfg, SplitName name) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(name) + 1u};
  std::mt19937_64 rng(seq);
  const std::string prefix = to_string(name);
  const int cell = cfg.image_size / cfg.grid;
  GeneratedSplit out;
  out.name = name;

  for (int si = 0; si < cfg.num_scenes(name); ++si) {
    GeneratedScene gs;
    Scene& scene = gs.scene;
    char sid[64];
    std::snprintf(sid, sizeof sid, "%s-s%04d", prefix.c_str(), si);
    scene.scene_id = sid;
    scene.image_ref = scene.scene_id + ".ppm";
    scene.image_size = {cfg.image_size, cfg.image_size};

    const int n = std::uniform_int_distribution<int>(cfg.min_objects, cfg.max_objects)(rng);
    std::vector<int> cells(static_cast<std::size_t>(cfg.grid * cfg.grid));
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    std::shuffle(cells.begin(), cells.end(), rng);

    std::vector<std::size_t> unused(cfg.palette.size());
    for (std::size_t i = 0; i < unused.size(); ++i) unused[i] = i;
    std::shuffle(unused.begin(), unused.end(), rng);
    std::vector<std::size_t> used;
    std::bernoulli_distribution dup(cfg.duplicate_prefab_prob);

    gs.image = Image(cfg.image_size, cfg.image_size, 0.85);
    for (int k = 0; k < n; ++k) {
      std::size_t pi;
      if ((!used.empty() && dup(rng)) || unused.empty()) {
        pi = used[std::uniform_int_distribution<std::size_t>(0, used.size() - 1)(rng)];
      } else {
        pi = unused.back();
        unused.pop_back();
      }
      used.push_back(pi);
      const PaletteEntry& p = cfg.palette[pi];
      const int c = cells[static_cast<std::size_t>(k)];
      const int slack = cell - p.size_px;
      const int ox = std::uniform_int_distribution<int>(0, slack)(rng);
      const int oy = std::uniform_int_distribution<int>(0, slack)(rng);
      SceneObject o;
      o.object_id = k + 1;
      o.box = BoundingBox{static_cast<double>((c % cfg.grid) * cell + ox), static_cast<double>((c / cfg.grid) * cell + oy),
                          static_cast<double>(p.size_px), static_cast<double>(p.size_px)};
      o.category = p.category;
      o.prefab_id = p.prefab_id;
      draw_object(gs.image, o, p);
      scene.objects.push_back(std::move(o));
    }

    for (int di = 0; di < cfg.dialogues_per_scene; ++di) {
      DialogueRecord d;
      char did[64];
      std::snprintf(did, sizeof did, "%s-d%04d-%d", prefix.c_str(), si, di);
      d.dialogue_id = did;
      const int turns = std::uniform_int_distribution<int>(1, cfg.max_user_turns)(rng);
      for (int ti = 1; ti <= turns; ++ti) {
        if (ti > 1 && !cfg.system_replies.empty()) {
          const auto& reply =
              cfg.system_replies[std::uniform_int_distribution<std::size_t>(0, cfg.system_replies.size() - 1)(rng)];
          d.turns.push_back({Speaker::kSystem, reply});
        }
        const auto& target = scene.objects[std::uniform_int_distribution<std::size_t>(0, scene.objects.size() - 1)(rng)];
        const auto& tpl = cfg.templates[std::uniform_int_distribution<std::size_t>(0, cfg.templates.size() - 1)(rng)];
        Constraint constraint;
        d.turns.push_back({Speaker::kUser, fill_template(tpl.text, attributes_of(target, scene.image_size, cfg), constraint)});
        TurnAnnotation ann;
        ann.turn_index = ti;
        ann.scene_id = scene.scene_id;
        for (const auto& o : scene.objects) {
          if (constraint.matches(attributes_of(o, scene.image_size, cfg))) ann.label_object_ids.insert(o.object_id);
        }
        out.total_labels += ann.label_object_ids.size();
        out.total_candidates += scene.objects.size();
        d.annotations.push_back(std::move(ann));
      }
      out.dialogues.push_back(std::move(d));
    }
    out.scenes.push_back(std::move(gs));
  }
  return out;
}

struct GeneratedDataset {
  std::filesystem::path root;
  std::map<SplitName, std::filesystem::path> manifests;
  std::map<SplitName, double> positive_ratio;

  const std::filesystem::path& manifest(SplitName s) const { return manifests.at(s); }
};

// Writes scenes (JSON + PPM), dialogue JSON-lines, one manifest per split,
// the generator config echo and per-split label statistics under `root`.
inline GeneratedDataset generate_synthetic_dataset(const SyntheticGenConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  GeneratedDataset ds;
  ds.root = root;
  nlohmann::json stats = nlohmann::json::object();
  for (SplitName name : {SplitName::kTrain, SplitName::kValidation, SplitName::kTest}) {
    const GeneratedSplit g = generate_split(cfg, name);
    const std::string split = to_string(name);
    const auto scene_dir = root / "scenes" / split;
    std::filesystem::create_directories(scene_dir);
    for (const auto& gs : g.scenes) {
      save_scene(gs.scene, scene_dir / (gs.scene.scene_id + ".json"));
      write_ppm(gs.image, scene_dir / gs.scene.image_ref);
    }
    save_dialogues(g.dialogues, root / "dialogues" / (split + ".jsonl"));
    SplitManifest m{split, {"dialogues/" + split + ".jsonl"}, "scenes/" + split};
    const auto mpath = root / (split + ".json");
    detail::write_file(mpath, manifest_to_json(m).dump(2) + "\n");
    ds.manifests[name] = mpath;
    ds.positive_ratio[name] = g.positive_ratio();
    stats[split] = {{"scenes", g.scenes.size()},
                    {"dialogues", g.dialogues.size()},
                    {"total_labels", g.total_labels},
                    {"total_candidates", g.total_candidates},
                    {"positive_ratio", g.positive_ratio()}};
  }
  detail::write_file(root / "generator_config.json", cfg.to_json().dump(2) + "\n");
  detail::write_file(root / "stats.json", stats.dump(2) + "\n");
  return ds;
}

}  // namespace moi::synth
