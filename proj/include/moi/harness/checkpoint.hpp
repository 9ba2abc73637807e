#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "moi/data/io.hpp"
#include "moi/harness/config.hpp"

namespace moi::harness {

inline constexpr const char* kCheckpointSchema = "moi-checkpoint/1";

inline nlohmann::json params_to_json(const nn::ParameterSet& ps) {
  nlohmann::json arr = nlohmann::json::array();
  for (nn::ParamId i = 0; i < ps.size(); ++i) {
    const nn::Matrix& m = ps.value(i);
    arr.push_back({{"name", ps.name(i)},
                   {"rows", m.rows()},
                   {"cols", m.cols()},
                   {"data", std::vector<double>(m.data(), m.data() + m.size())}});
  }
  return arr;
}

// Copies stored values into `ps`; names and shapes must match exactly.
inline void load_params(nn::ParameterSet& ps, const nlohmann::json& arr) {
  if (!arr.is_array() || arr.size() != ps.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(arr.size()) + " tensors, model expects " +
                      std::to_string(ps.size()));
  }
  for (const auto& e : arr) {
    const std::string name = e.at("name").get<std::string>();
    if (!ps.contains(name)) throw ConfigError("checkpoint tensor '" + name + "' is not part of the model");
    nn::Matrix& m = ps.value(ps.id(name));
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    const auto data = e.at("data").get<std::vector<double>>();
    if (rows != m.rows() || cols != m.cols() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw ConfigError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    std::copy(data.begin(), data.end(), m.data());
  }
}

struct Checkpoint {
  Approach approach = Approach::kDetr;
  nlohmann::json model_config;
  nlohmann::json train_config;
  std::optional<nn::Vocabulary> vocab;
  int epoch = 0;
  double validation_metric = 0.0;
  nlohmann::json parameters;

  nlohmann::json to_json() const {
    nlohmann::json j{{"schema", kCheckpointSchema},
                     {"approach", to_string(approach)},
                     {"model_config", model_config},
                     {"train_config", train_config},
                     {"epoch", epoch},
                     {"validation_metric", validation_metric},
                     {"parameters", parameters}};
    if (vocab) j["vocab"] = vocab->to_json();
    return j;
  }

  static Checkpoint from_json(const nlohmann::json& j) {
    if (j.value("schema", std::string()) != kCheckpointSchema) throw ConfigError("not a checkpoint file");
    Checkpoint c;
    c.approach = parse_approach(j.at("approach").get<std::string>());
    c.model_config = j.at("model_config");
    c.train_config = j.value("train_config", nlohmann::json::object());
    c.epoch = j.value("epoch", 0);
    c.validation_metric = j.value("validation_metric", 0.0);
    c.parameters = j.at("parameters");
    if (j.contains("vocab")) c.vocab = nn::Vocabulary::from_json(j["vocab"]);
    return c;
  }
};

inline std::string serialize_checkpoint(const Checkpoint& c) { return c.to_json().dump() + "\n"; }

// Writes the checkpoint and returns the SHA-256 of the file contents.
inline std::string save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string text = serialize_checkpoint(c);
  detail::write_file(path, text);
  return sha256_hex(text);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return Checkpoint::from_json(detail::parse_json(detail::read_file(path), path.string()));
}

inline std::string checkpoint_hash(const std::filesystem::path& path) { return sha256_hex(detail::read_file(path)); }

inline Checkpoint make_checkpoint(Approach a, nlohmann::json model_config, const TrainConfig& cfg,
                                  const nn::ParameterSet& ps, std::optional<nn::Vocabulary> vocab, int epoch,
                                  double metric) {
  return {a, std::move(model_config), cfg.to_json(), std::move(vocab), epoch, metric, params_to_json(ps)};
}

inline detection::Detector detector_from_checkpoint(const Checkpoint& c) {
  if (c.approach != Approach::kDetr && c.approach != Approach::kSitcomDetr) {
    throw ConfigError("checkpoint holds a " + to_string(c.approach) + " model, not a detector");
  }
  detection::Detector d(detection::DetectionModelConfig::from_json(c.model_config), 0, c.vocab);
  load_params(d.params(), c.parameters);
  return d;
}

inline alignment::AlignmentModel alignment_from_checkpoint(const Checkpoint& c) {
  if (!is_clipper(c.approach)) throw ConfigError("checkpoint holds a " + to_string(c.approach) + " model");
  if (!c.vocab) throw ConfigError("alignment checkpoint has no vocabulary");
  alignment::AlignmentModel m(alignment::AlignmentModelConfig::from_json(c.model_config), *c.vocab, 0);
  load_params(m.params(), c.parameters);
  return m;
}

inline scene::SceneDialogueModel scene_dialogue_from_checkpoint(const Checkpoint& c) {
  if (c.approach != Approach::kSceneDialogue) throw ConfigError("checkpoint holds a " + to_string(c.approach) + " model");
  if (!c.vocab) throw ConfigError("scene-dialogue checkpoint has no vocabulary");
  scene::SceneDialogueModel m(scene::SceneDialogueConfig::from_json(c.model_config), *c.vocab, 0);
  load_params(m.params(), c.parameters);
  return m;
}

}  // namespace moi::harness
