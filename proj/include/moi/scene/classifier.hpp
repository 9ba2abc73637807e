#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/nn/layers.hpp"
#include "moi/nn/text.hpp"
#include "moi/scene/features.hpp"

namespace moi::scene {

using nn::Var;

struct SceneDialogueConfig {
  nn::TextEncoderConfig text;
  int feature_dim = 64;  // detector hidden width
  int latent_dim = 64;
  bool use_bias = true;

  void validate() const {
    if (feature_dim <= 0 || latent_dim <= 0) throw ConfigError("scene-dialogue widths must be positive");
  }

  nlohmann::json to_json() const {
    return {{"text", text.to_json()}, {"feature_dim", feature_dim}, {"latent_dim", latent_dim}, {"use_bias", use_bias}};
  }

  static SceneDialogueConfig from_json(const nlohmann::json& j) {
    SceneDialogueConfig c;
    if (j.contains("text")) c.text = nn::TextEncoderConfig::from_json(j["text"]);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.use_bias = j.value("use_bias", c.use_bias);
    c.validate();
    return c;
  }
};

struct PairLogit {
  std::string dialogue_id;
  int turn_index = 0;
  ObjectId object_id = 0;
  double logit = 0.0;
};

// Binary classifier over (dialogue, object feature) pairs:
// logit_j = <W_d d, W_o f_j> + b.
class SceneDialogueModel {
 public:
  SceneDialogueModel(const SceneDialogueConfig& cfg, nn::Vocabulary vocab, std::uint64_t seed)
      : config_(cfg), vocab_(std::move(vocab)) {
    cfg.validate();
    nn::Rng rng(seed);
    text_encoder_ = nn::TextEncoder::create(params_, "text_encoder", vocab_.size(), cfg.text, rng);
    dialogue_proj_ = nn::Linear::create(params_, "dialogue_projection", cfg.text.dim, cfg.latent_dim, rng, false);
    object_proj_ = nn::Linear::create(params_, "object_projection", cfg.feature_dim, cfg.latent_dim, rng, false);
    if (cfg.use_bias) bias_ = params_.add("bias", Matrix::Zero(1, 1));
  }

  const SceneDialogueConfig& config() const { return config_; }
  const nn::ParameterSet& params() const { return params_; }
  nn::ParameterSet& params() { return params_; }
  const nn::Vocabulary& vocabulary() const { return vocab_; }

  nn::EncodedText encode(const std::string& text) const {
    return nn::encode_text(vocab_, text, config_.text.max_len, config_.text.max_segments);
  }

  // Pooled dialogue vector, 1 x text.dim.
  Var embed_dialogue(nn::Tape& t, const nn::EncodedText& text) const { return text_encoder_(t, text); }

  // One logit per feature row, n x 1.
  Var classify(nn::Tape& t, Var dialogue_emb, Var object_features) const {
    if (dialogue_emb.rows() != 1 || dialogue_emb.cols() != config_.text.dim) {
      throw InvalidInput("dialogue embedding width does not match the classifier");
    }
    if (object_features.cols() != config_.feature_dim) {
      throw InvalidInput("object feature width " + std::to_string(object_features.cols()) + " does not match " +
                         std::to_string(config_.feature_dim));
    }
    Var logits = nn::matmul_nt(object_proj_(t, object_features), dialogue_proj_(t, dialogue_emb));
    if (config_.use_bias) logits = nn::add(logits, t.param(bias_));
    return logits;
  }

  std::vector<double> classify_pairs(const Matrix& dialogue_emb, const Matrix& object_features) const {
    nn::Tape t(&params_, nullptr);
    t.set_grad_enabled(false);
    const Matrix v = classify(t, t.constant(dialogue_emb), t.constant(object_features)).value();
    return std::vector<double>(v.data(), v.data() + v.size());
  }

  // Logits for every object of the sample's scene, in cache order.
  std::vector<PairLogit> score(const DialogueTurnContext& sample, const ObjectFeatureCache& cache) const {
    const auto& feats = cache.get(sample.scene_id);
    std::vector<PairLogit> out;
    if (feats.empty()) return out;
    Matrix f(static_cast<Eigen::Index>(feats.size()), static_cast<Eigen::Index>(feats.front().feature.size()));
    for (std::size_t i = 0; i < feats.size(); ++i)
      for (std::size_t k = 0; k < feats[i].feature.size(); ++k)
        f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = feats[i].feature[k];
    nn::Tape t(&params_, nullptr);
    t.set_grad_enabled(false);
    const Matrix v = classify(t, embed_dialogue(t, encode(sample.encoded_text)), t.constant(f)).value();
    for (std::size_t i = 0; i < feats.size(); ++i) {
      out.push_back({sample.dialogue_id, sample.turn_index, feats[i].object_id, v(static_cast<Eigen::Index>(i), 0)});
    }
    return out;
  }

 private:
  SceneDialogueConfig config_;
  nn::Vocabulary vocab_;
  nn::ParameterSet params_;
  nn::TextEncoder text_encoder_;
  nn::Linear dialogue_proj_;
  nn::Linear object_proj_;
  nn::ParamId bias_ = 0;
};

// Mean binary cross-entropy over pairs; positives weighted by pos_weight.
inline Var identification_bce_loss(Var logits, std::span<const int> labels, double pos_weight = 1.0) {
  if (static_cast<std::size_t>(logits.value().size()) != labels.size() || logits.cols() != 1) {
    throw InvalidInput("identification loss: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(logits.value().size()) + " logits");
  }
  Matrix y(logits.rows(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), 0) = labels[i] != 0 ? 1.0 : 0.0;
  return nn::bce_with_logits(logits, y, pos_weight);
}

inline double identification_bce_loss(const Matrix& logits, std::span<const int> labels, double pos_weight = 1.0) {
  nn::Tape t;
  t.set_grad_enabled(false);
  return identification_bce_loss(t.constant(logits), labels, pos_weight).scalar();
}

// {object_id : sigmoid(logit) >= threshold}. Throws MissingFeatureError when
// the sample's scene is not cached.
inline ObjectIdSet identify(const SceneDialogueModel& model, const DialogueTurnContext& sample,
                            const ObjectFeatureCache& cache, double threshold = 0.5) {
  ObjectIdSet out;
  for (const auto& p : model.score(sample, cache)) {
    const double prob = 1.0 / (1.0 + std::exp(-p.logit));
    if (prob >= threshold) out.insert(p.object_id);
  }
  return out;
}

}  // namespace moi::scene
