#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/data/image.hpp"
#include "moi/nn/layers.hpp"
#include "moi/nn/text.hpp"

namespace moi::detection {

using nn::Matrix;
using nn::Var;

struct DetectionModelConfig {
  int num_queries = 36;
  int hidden_dim = 64;
  int num_classes = 12;
  // "patch<k>": non-overlapping k x k patches, linearly embedded.
  std::string backbone_spec = "patch8";
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int ffn_dim = 128;
  int image_size = 64;
  // k > 0: after the decoder, encoder features are sampled on a k x k grid of
  // points inside each query's first-pass box and fused into its state.
  int sample_points = 3;
  // m > 0 (with sample_points > 0): pixels are also read on an m x m lattice
  // covering each first-pass box and fused the same way.
  int pixel_points = 8;
  // Dialogue conditioning of the decoder queries.
  bool dialogue_conditioned = false;
  nn::TextEncoderConfig text;

  int patch_size() const {
    if (backbone_spec.rfind("patch", 0) != 0) throw ConfigError("unsupported backbone '" + backbone_spec + "'");
    const int p = std::stoi(backbone_spec.substr(5));
    if (p <= 0 || image_size % p != 0) throw ConfigError("patch size must divide the image size");
    return p;
  }
  int tokens() const { return (image_size / patch_size()) * (image_size / patch_size()); }

  nlohmann::json to_json() const {
    return {{"num_queries", num_queries},       {"hidden_dim", hidden_dim},
            {"num_classes", num_classes},       {"backbone_spec", backbone_spec},
            {"encoder_layers", encoder_layers}, {"decoder_layers", decoder_layers},
            {"heads", heads},                   {"ffn_dim", ffn_dim},
            {"image_size", image_size},         {"sample_points", sample_points},
            {"pixel_points", pixel_points},
            {"dialogue_conditioned", dialogue_conditioned},
            {"text", text.to_json()}};
  }

  static DetectionModelConfig from_json(const nlohmann::json& j) {
    DetectionModelConfig c;
    c.num_queries = j.value("num_queries", c.num_queries);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.backbone_spec = j.value("backbone_spec", c.backbone_spec);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.heads = j.value("heads", c.heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.image_size = j.value("image_size", c.image_size);
    c.sample_points = j.value("sample_points", c.sample_points);
    c.pixel_points = j.value("pixel_points", c.pixel_points);
    c.dialogue_conditioned = j.value("dialogue_conditioned", c.dialogue_conditioned);
    if (j.contains("text")) c.text = nn::TextEncoderConfig::from_json(j["text"]);
    return c;
  }
};

// Per-query predictions. Boxes are normalized (cx, cy, w, h); the last logit
// column is the "no object" class.
struct DetectionOutput {
  Matrix boxes;
  Matrix class_logits;
  Matrix hidden;  // final decoder state per query, before the heads

  Eigen::Index num_queries() const { return boxes.rows(); }
};

// Flattens an image into one row per non-overlapping patch.
inline Matrix image_to_patches(const Image& img, int patch) {
  const int gx = img.width() / patch;
  const int gy = img.height() / patch;
  Matrix out(gx * gy, patch * patch * Image::kChannels);
  for (int py = 0; py < gy; ++py) {
    for (int px = 0; px < gx; ++px) {
      const int row = py * gx + px;
      int col = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < Image::kChannels; ++c) out(row, col++) = img.at(px * patch + x, py * patch + y, c) - 0.5;
    }
  }
  return out;
}

// Fixed 2D sine/cosine position code: first half encodes y, second half x.
inline Matrix sine_position_embedding(int grid, int dim) {
  Matrix pe(grid * grid, dim);
  const int half = dim / 2;
  const int freqs = std::max(1, half / 2);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const int row = gy * grid + gx;
      const double uy = (gy + 0.5) / grid;
      const double ux = (gx + 0.5) / grid;
      for (int k = 0; k < half; ++k) {
        // Frequencies spread linearly from one half-period to `grid` half-periods.
        const int f = std::min(k / 2, freqs - 1);
        const double w = M_PI * (1.0 + (freqs > 1 ? f * (grid - 1.0) / (freqs - 1.0) : 0.0));
        pe(row, k) = (k % 2 == 0) ? std::sin(w * uy) : std::cos(w * uy);
        pe(row, half + k) = (k % 2 == 0) ? std::sin(w * ux) : std::cos(w * ux);
      }
    }
  }
  return pe;
}

// Bilinear interpolation weights (queries x grid^2) reading the token grid at
// one point per query. Point (px, py) in [0, 1) indexes a k x k lattice
// spanning the middle of each box.
inline Matrix box_sampling_weights(const Matrix& boxes, int grid, int k, int px, int py) {
  Matrix w = Matrix::Zero(boxes.rows(), grid * grid);
  for (Eigen::Index q = 0; q < boxes.rows(); ++q) {
    const double fx = k == 1 ? 0.0 : (static_cast<double>(px) / (k - 1) - 0.5);
    const double fy = k == 1 ? 0.0 : (static_cast<double>(py) / (k - 1) - 0.5);
    const double x = boxes(q, 0) + fx * boxes(q, 2) * 0.5;
    const double y = boxes(q, 1) + fy * boxes(q, 3) * 0.5;
    const double u = std::clamp(x * grid - 0.5, 0.0, grid - 1.0);
    const double v = std::clamp(y * grid - 0.5, 0.0, grid - 1.0);
    const int u0 = std::min(static_cast<int>(u), grid - 1), v0 = std::min(static_cast<int>(v), grid - 1);
    const int u1 = std::min(u0 + 1, grid - 1), v1 = std::min(v0 + 1, grid - 1);
    const double au = u - u0, av = v - v0;
    w(q, v0 * grid + u0) += (1 - au) * (1 - av);
    w(q, v0 * grid + u1) += au * (1 - av);
    w(q, v1 * grid + u0) += (1 - au) * av;
    w(q, v1 * grid + u1) += au * av;
  }
  return w;
}

// Bilinear pixel samples (queries x m^2 * channels) on an m x m lattice
// covering each box, read from patch rows laid out as image_to_patches.
inline Matrix sample_box_pixels(const Matrix& patch_rows, int patch, int image_size, const Matrix& boxes, int m) {
  const int grid = image_size / patch;
  const int ch = Image::kChannels;
  auto pixel = [&](int x, int y, int c) {
    return patch_rows((y / patch) * grid + x / patch, ((y % patch) * patch + x % patch) * ch + c);
  };
  Matrix out(boxes.rows(), m * m * ch);
  for (Eigen::Index q = 0; q < boxes.rows(); ++q) {
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < m; ++i) {
        const double x = boxes(q, 0) + ((i + 0.5) / m - 0.5) * boxes(q, 2);
        const double y = boxes(q, 1) + ((j + 0.5) / m - 0.5) * boxes(q, 3);
        const double u = std::clamp(x * image_size - 0.5, 0.0, image_size - 1.0);
        const double v = std::clamp(y * image_size - 0.5, 0.0, image_size - 1.0);
        const int u0 = std::min(static_cast<int>(u), image_size - 1), v0 = std::min(static_cast<int>(v), image_size - 1);
        const int u1 = std::min(u0 + 1, image_size - 1), v1 = std::min(v0 + 1, image_size - 1);
        const double au = u - u0, av = v - v0;
        for (int c = 0; c < ch; ++c) {
          out(q, (j * m + i) * ch + c) = (1 - au) * (1 - av) * pixel(u0, v0, c) + au * (1 - av) * pixel(u1, v0, c) +
                                         (1 - au) * av * pixel(u0, v1, c) + au * av * pixel(u1, v1, c);
        }
      }
    }
  }
  return out;
}

// Set-prediction detector: patch backbone, transformer encoder over patches,
// decoder over learned object queries, class and box heads. When
// dialogue_conditioned, a projection of a pooled dialogue vector is added to
// every decoder query. With sample_points > 0 the decoder output first
// predicts a box, features are read from the encoder map inside it, and the
// final heads run on the fused state.
class Detector {
 public:
  struct Forward {
    Var class_logits;
    Var boxes;
    Var hidden;
    Var queries;  // decoder input queries after optional dialogue injection
    // First-pass predictions before point sampling (empty when disabled).
    std::optional<Var> aux_class_logits;
    std::optional<Var> aux_boxes;
  };

  Detector(const DetectionModelConfig& cfg, std::uint64_t seed, std::optional<nn::Vocabulary> vocab = std::nullopt)
      : config_(cfg), vocab_(std::move(vocab)) {
    nn::Rng rng(seed);
    const int d = cfg.hidden_dim;
    const int p = cfg.patch_size();
    if (cfg.num_classes <= 0 || cfg.num_queries <= 0) throw ConfigError("detector needs classes and queries");
    patch_embed_ = nn::Linear::create(params_, "backbone.patch_embed", p * p * Image::kChannels, d, rng);
    patch_pos_ = sine_position_embedding(cfg.image_size / p, d);
    for (int i = 0; i < cfg.encoder_layers; ++i) {
      encoder_.push_back(nn::EncoderLayer::create(params_, "encoder." + std::to_string(i), d, cfg.heads, cfg.ffn_dim, rng));
    }
    for (int i = 0; i < cfg.decoder_layers; ++i) {
      decoder_.push_back(nn::DecoderLayer::create(params_, "decoder." + std::to_string(i), d, cfg.heads, cfg.ffn_dim, rng));
    }
    query_embed_ = params_.add("query_embed", nn::normal_matrix(cfg.num_queries, d, 1.0, rng));
    class_head_ = nn::Linear::create(params_, "class_head", d, cfg.num_classes + 1, rng);
    box_head_ = nn::Mlp::create(params_, "box_head", {d, d, 4}, rng);
    if (cfg.sample_points > 0) {
      const int k = cfg.sample_points;
      sample_proj_ = nn::Linear::create(params_, "point_sampling.proj", k * k * d, d, rng);
      sample_norm_ = nn::LayerNorm::create(params_, "point_sampling.norm", d);
      if (cfg.pixel_points > 0) {
        const int m = cfg.pixel_points;
        pixel_proj_ = nn::Mlp::create(params_, "point_sampling.pixel_proj", {m * m * Image::kChannels, d, d}, rng);
      }
      sample_ffn_ = nn::FeedForward::create(params_, "point_sampling.ffn", d, cfg.ffn_dim, rng);
      sample_ffn_norm_ = nn::LayerNorm::create(params_, "point_sampling.ffn_norm", d);
    }
    if (cfg.dialogue_conditioned) {
      if (!vocab_) throw ConfigError("dialogue-conditioned detector needs a vocabulary");
      text_ = nn::TextEncoder::create(params_, "dialogue_encoder", vocab_->size(), cfg.text, rng);
      // Zero-initialised so the conditioned model starts as the plain detector.
      inject_.weight = params_.add("dialogue_inject.weight", Matrix::Zero(cfg.text.dim, d));
      inject_.bias = params_.add("dialogue_inject.bias", Matrix::Zero(1, d));
      inject_.has_bias = true;
    }
  }

  const DetectionModelConfig& config() const { return config_; }
  const nn::ParameterSet& params() const { return params_; }
  nn::ParameterSet& params() { return params_; }
  const std::optional<nn::Vocabulary>& vocabulary() const { return vocab_; }

  Matrix patches(const Image& img) const {
    if (img.width() != config_.image_size || img.height() != config_.image_size) {
      throw InvalidInput("image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                         ", detector expects " + std::to_string(config_.image_size) + "x" +
                         std::to_string(config_.image_size));
    }
    return image_to_patches(img, config_.patch_size());
  }

  nn::EncodedText encode_dialogue(const std::string& text) const {
    if (!vocab_) throw ConfigError("detector has no dialogue encoder");
    return nn::encode_text(*vocab_, text, config_.text.max_len, config_.text.max_segments);
  }

  // Pooled dialogue vector, 1 x text.dim.
  Var dialogue_embedding(nn::Tape& t, const nn::EncodedText& text) const {
    if (!config_.dialogue_conditioned) throw ConfigError("detector has no dialogue encoder");
    return text_(t, text);
  }

  // Adds the projected dialogue vector to every query row.
  Var inject_dialogue_context(nn::Tape& t, Var queries, Var dialogue) const {
    if (!config_.dialogue_conditioned) throw ConfigError("detector has no dialogue injection");
    if (dialogue.rows() != 1 || dialogue.cols() != config_.text.dim) {
      throw InvalidInput("dialogue vector width does not match the injection projection");
    }
    if (queries.cols() != config_.hidden_dim) throw InvalidInput("query width does not match the detector");
    return add(queries, inject_(t, dialogue));
  }

  Forward forward(nn::Tape& t, const Matrix& patch_rows, const nn::EncodedText* dialogue = nullptr) const {
    Var x = patch_embed_(t, t.constant(patch_rows));
    Var pos = t.constant(patch_pos_);
    for (const auto& layer : encoder_) x = layer(t, x, pos);
    Var queries = t.param(query_embed_);
    if (config_.dialogue_conditioned) {
      if (dialogue == nullptr) throw InvalidInput("dialogue-conditioned detector needs dialogue text");
      queries = inject_dialogue_context(t, queries, dialogue_embedding(t, *dialogue));
    }
    Var tgt = t.constant(Matrix::Zero(config_.num_queries, config_.hidden_dim));
    for (const auto& layer : decoder_) tgt = layer(t, tgt, queries, x, pos);
    if (config_.sample_points <= 0) {
      return Forward{class_head_(t, tgt), nn::sigmoid(box_head_(t, tgt)), tgt, queries, std::nullopt, std::nullopt};
    }

    Var first_logits = class_head_(t, tgt);
    Var first_boxes = nn::sigmoid(box_head_(t, tgt));
    // Sampling locations follow the first-pass boxes without gradient.
    const int k = config_.sample_points;
    const int grid = config_.image_size / config_.patch_size();
    std::vector<Var> samples;
    for (int py = 0; py < k; ++py)
      for (int px = 0; px < k; ++px)
        samples.push_back(nn::matmul(t.constant(box_sampling_weights(first_boxes.value(), grid, k, px, py)), x));
    Var sampled = sample_proj_(t, nn::concat_cols(samples));
    if (config_.pixel_points > 0) {
      const Matrix pixels = sample_box_pixels(patch_rows, config_.patch_size(), config_.image_size, first_boxes.value(),
                                              config_.pixel_points);
      sampled = nn::add(sampled, pixel_proj_(t, t.constant(pixels)));
    }
    Var fused = sample_norm_(t, nn::add(tgt, sampled));
    fused = sample_ffn_norm_(t, nn::add(fused, sample_ffn_(t, fused)));
    return Forward{class_head_(t, fused), nn::sigmoid(box_head_(t, fused)), fused, queries, first_logits, first_boxes};
  }

  DetectionOutput detect(const Image& img, const std::string* dialogue_text = nullptr) const {
    nn::Tape t(&params_, nullptr);
    t.set_grad_enabled(false);
    std::optional<nn::EncodedText> enc;
    if (config_.dialogue_conditioned) {
      if (dialogue_text == nullptr) throw InvalidInput("dialogue-conditioned detector needs dialogue text");
      enc = encode_dialogue(*dialogue_text);
    }
    Forward f = forward(t, patches(img), enc ? &*enc : nullptr);
    return DetectionOutput{f.boxes.value(), f.class_logits.value(), f.hidden.value()};
  }

 private:
  DetectionModelConfig config_;
  std::optional<nn::Vocabulary> vocab_;
  nn::ParameterSet params_;
  nn::Linear patch_embed_;
  Matrix patch_pos_;
  std::vector<nn::EncoderLayer> encoder_;
  std::vector<nn::DecoderLayer> decoder_;
  nn::ParamId query_embed_ = 0;
  nn::Linear class_head_;
  nn::Mlp box_head_;
  nn::Linear sample_proj_;
  nn::LayerNorm sample_norm_;
  nn::Mlp pixel_proj_;
  nn::FeedForward sample_ffn_;
  nn::LayerNorm sample_ffn_norm_;
  nn::TextEncoder text_;
  nn::Linear inject_;
};

}  // namespace moi::detection
