#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/data/image.hpp"
#include "moi/data/masks.hpp"
#include "moi/nn/layers.hpp"
#include "moi/nn/text.hpp"

namespace moi::alignment {

using nn::Matrix;
using nn::Var;

struct AlignmentModelConfig {
  // "mlp": crops are flattened and fed through a two-layer perceptron.
  std::string image_encoder_spec = "mlp";
  int crop_resolution = 16;
  // Padding around each object box, as a fraction of its size per side.
  double crop_pad = 0.1;
  int image_hidden = 128;
  // "transformer": token/position/segment embeddings, encoder, mean pooling.
  std::string text_encoder_spec = "transformer";
  nn::TextEncoderConfig text;
  int projection_dim = 64;
  // Initial logit scale (inverse temperature).
  double temperature_init = 1.0 / 0.07;

  void validate() const {
    if (image_encoder_spec != "mlp") throw ConfigError("unsupported image encoder '" + image_encoder_spec + "'");
    if (text_encoder_spec != "transformer") throw ConfigError("unsupported text encoder '" + text_encoder_spec + "'");
    if (projection_dim <= 0) throw ConfigError("projection_dim must be positive");
    if (!(temperature_init > 0.0)) throw ConfigError("temperature_init must be positive");
    if (crop_resolution <= 0 || image_hidden <= 0) throw ConfigError("bad image encoder sizes");
  }

  nlohmann::json to_json() const {
    return {{"image_encoder_spec", image_encoder_spec}, {"crop_resolution", crop_resolution},
            {"crop_pad", crop_pad},                     {"image_hidden", image_hidden},
            {"text_encoder_spec", text_encoder_spec},   {"text", text.to_json()},
            {"projection_dim", projection_dim},         {"temperature_init", temperature_init}};
  }

  static AlignmentModelConfig from_json(const nlohmann::json& j) {
    AlignmentModelConfig c;
    c.image_encoder_spec = j.value("image_encoder_spec", c.image_encoder_spec);
    c.crop_resolution = j.value("crop_resolution", c.crop_resolution);
    c.crop_pad = j.value("crop_pad", c.crop_pad);
    c.image_hidden = j.value("image_hidden", c.image_hidden);
    c.text_encoder_spec = j.value("text_encoder_spec", c.text_encoder_spec);
    if (j.contains("text")) c.text = nn::TextEncoderConfig::from_json(j["text"]);
    c.projection_dim = j.value("projection_dim", c.projection_dim);
    c.temperature_init = j.value("temperature_init", c.temperature_init);
    c.validate();
    return c;
  }
};

// Flattens square crops (one per row), centred around zero.
inline Matrix crops_to_rows(std::span<const Image> crops, int resolution) {
  Matrix out(static_cast<Eigen::Index>(crops.size()), resolution * resolution * Image::kChannels);
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const Image& c = crops[i];
    if (c.width() != resolution || c.height() != resolution) {
      throw InvalidInput("crop is " + std::to_string(c.width()) + "x" + std::to_string(c.height()) +
                         ", encoder expects " + std::to_string(resolution) + "x" + std::to_string(resolution));
    }
    for (Eigen::Index k = 0; k < out.cols(); ++k) out(static_cast<Eigen::Index>(i), k) = c.data()[static_cast<std::size_t>(k)] - 0.5;
  }
  return out;
}

// Dual encoder: image tower over object crops, text tower over dialogue
// context, bias-free linear projections into a shared space, unit-norm rows.
class AlignmentModel {
 public:
  AlignmentModel(const AlignmentModelConfig& cfg, nn::Vocabulary vocab, std::uint64_t seed)
      : config_(cfg), vocab_(std::move(vocab)) {
    cfg.validate();
    nn::Rng rng(seed);
    const int in = cfg.crop_resolution * cfg.crop_resolution * Image::kChannels;
    image_encoder_ = nn::Mlp::create(params_, "image_encoder", {in, cfg.image_hidden, cfg.image_hidden}, rng);
    text_encoder_ = nn::TextEncoder::create(params_, "text_encoder", vocab_.size(), cfg.text, rng);
    image_proj_ = nn::Linear::create(params_, "image_projection", cfg.image_hidden, cfg.projection_dim, rng, false);
    text_proj_ = nn::Linear::create(params_, "text_projection", cfg.text.dim, cfg.projection_dim, rng, false);
    log_scale_ = params_.add("logit_scale", Matrix::Constant(1, 1, std::log(cfg.temperature_init)));
  }

  const AlignmentModelConfig& config() const { return config_; }
  const nn::ParameterSet& params() const { return params_; }
  nn::ParameterSet& params() { return params_; }
  const nn::Vocabulary& vocabulary() const { return vocab_; }

  nn::EncodedText encode(const std::string& text) const {
    return nn::encode_text(vocab_, text, config_.text.max_len, config_.text.max_segments);
  }

  CropResult crop(const Image& scene_image, std::span<const SceneObject> objects) const {
    return crop_object_images(scene_image, objects, config_.crop_pad, config_.crop_resolution);
  }

  Var embed_objects(nn::Tape& t, const Matrix& crop_rows) const {
    const Eigen::Index in = config_.crop_resolution * config_.crop_resolution * Image::kChannels;
    if (crop_rows.cols() != in) throw InvalidInput("crop rows do not match the encoder resolution");
    return nn::l2_normalize_rows(image_proj_(t, image_encoder_(t, t.constant(crop_rows))));
  }

  Var embed_objects(nn::Tape& t, std::span<const Image> crops) const {
    return embed_objects(t, crops_to_rows(crops, config_.crop_resolution));
  }

  Var embed_dialogues(nn::Tape& t, std::span<const nn::EncodedText> texts) const {
    if (texts.empty()) throw InvalidInput("no dialogues to embed");
    std::vector<Var> pooled;
    pooled.reserve(texts.size());
    for (const auto& x : texts) pooled.push_back(text_encoder_(t, x));
    return nn::l2_normalize_rows(text_proj_(t, nn::concat_rows(pooled)));
  }

  Var logit_scale(nn::Tape& t) const { return nn::exp(t.param(log_scale_)); }
  double logit_scale() const { return std::exp(params_.value(log_scale_)(0, 0)); }

  // scale * <d_i, o_j> with the learnable scale.
  Var logits(nn::Tape& t, Var dialogue_embs, Var object_embs) const {
    if (dialogue_embs.cols() != object_embs.cols()) throw InvalidInput("embedding widths differ");
    return nn::mul(nn::matmul_nt(dialogue_embs, object_embs), logit_scale(t));
  }

  // Inference: scores every object of a scene against one dialogue context.
  Matrix score_scene(const Image& scene_image, const Scene& scene, const std::string& context,
                     std::vector<ObjectId>* object_ids = nullptr) const {
    const CropResult cr = crop(scene_image, scene.objects);
    if (object_ids != nullptr) {
      object_ids->clear();
      for (const auto& c : cr.crops) object_ids->push_back(c.object_id);
    }
    if (cr.crops.empty()) return Matrix(1, 0);
    std::vector<Image> images;
    for (const auto& c : cr.crops) images.push_back(c.pixels);
    nn::Tape t(&params_, nullptr);
    t.set_grad_enabled(false);
    const nn::EncodedText enc = encode(context);
    Var d = embed_dialogues(t, std::span<const nn::EncodedText>(&enc, 1));
    return logits(t, d, embed_objects(t, images)).value();
  }

 private:
  AlignmentModelConfig config_;
  nn::Vocabulary vocab_;
  nn::ParameterSet params_;
  nn::Mlp image_encoder_;
  nn::TextEncoder text_encoder_;
  nn::Linear image_proj_;
  nn::Linear text_proj_;
  nn::ParamId log_scale_ = 0;
};

// matrix[i][j] = temperature * <d_i, o_j>.
inline Matrix similarity(const Matrix& dialogue_embs, const Matrix& object_embs, double temperature) {
  if (dialogue_embs.cols() != object_embs.cols()) throw InvalidInput("similarity: embedding widths differ");
  return temperature * dialogue_embs * object_embs.transpose();
}

// Symmetric cross-entropy with positives on the diagonal.
inline Var clip_contrastive_loss(Var logits) {
  if (logits.rows() != logits.cols()) throw InvalidInput("contrastive loss needs square logits");
  std::vector<int> diag(static_cast<std::size_t>(logits.rows()));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  Var rows = nn::cross_entropy_rows(logits, diag);
  Var cols = nn::cross_entropy_rows(nn::transpose(logits), diag);
  return nn::scale(nn::add(rows, cols), 0.5);
}

inline Matrix mask_to_matrix(const PositiveMask& mask) {
  const auto n = static_cast<Eigen::Index>(mask.size());
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = mask(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) ? 1.0 : 0.0;
  return m;
}

// Mean binary cross-entropy over all cells, target = mask cell.
inline Var clipper_bce_loss(Var logits, const PositiveMask& mask) {
  if (logits.rows() != logits.cols() || static_cast<std::size_t>(logits.rows()) != mask.size()) {
    throw InvalidInput("mask shape does not match the logits");
  }
  return nn::bce_with_logits(logits, mask_to_matrix(mask));
}

inline double clip_contrastive_loss(const Matrix& logits) {
  nn::Tape t;
  t.set_grad_enabled(false);
  return clip_contrastive_loss(t.constant(logits)).scalar();
}

inline double clipper_bce_loss(const Matrix& logits, const PositiveMask& mask) {
  nn::Tape t;
  t.set_grad_enabled(false);
  return clipper_bce_loss(t.constant(logits), mask).scalar();
}

}  // namespace moi::alignment
