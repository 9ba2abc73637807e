#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/alignment/inference.hpp"
#include "moi/detection/identify.hpp"
#include "moi/eval/metrics.hpp"
#include "moi/harness/checkpoint.hpp"
#include "moi/nn/optim.hpp"

namespace moi::harness {

namespace fs = std::filesystem;
using nn::Var;

// Lazily decoded scene images of one split.
class SceneImages {
 public:
  explicit SceneImages(const DatasetSplit& split) : split_(&split) {}

  const Image& get(const std::string& scene_id) const {
    auto it = cache_.find(scene_id);
    if (it != cache_.end()) return it->second;
    const Scene& s = split_->scene(scene_id);
    Image img = read_ppm(split_->image_path(s));
    if (img.width() != s.image_size.width || img.height() != s.image_size.height) {
      throw ValidationError("image of scene '" + scene_id + "' does not match its declared size");
    }
    return cache_.emplace(scene_id, std::move(img)).first->second;
  }

 private:
  const DatasetSplit* split_;
  mutable std::map<std::string, Image> cache_;
};

// Mirrors the image horizontally (bit 0) and/or vertically (bit 1) together
// with its normalized box targets.
inline void flip_example(Image& img, std::vector<detection::DetectionTarget>& targets, int flips) {
  if (flips == 0) return;
  Image out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < Image::kChannels; ++c)
        out.at(x, y, c) = img.at((flips & 1) ? img.width() - 1 - x : x, (flips & 2) ? img.height() - 1 - y : y, c);
  img = std::move(out);
  for (auto& t : targets) {
    if (flips & 1) t.box[0] = 1.0 - t.box[0];
    if (flips & 2) t.box[1] = 1.0 - t.box[1];
  }
}

// Stops once `patience` consecutive epochs fail to beat the best score.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Returns true when `metric` is a new best.
  bool update(int epoch, double metric) {
    if (best_epoch_ < 0 || metric > best_) {
      best_ = metric;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int best_epoch_ = -1;
  double best_ = -std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  std::string metric_name;
  double validation_metric = 0.0;
  bool improved = false;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},
            {"learning_rate", learning_rate},
            {"train_loss", train_loss},
            {"metric", metric_name},
            {"validation_metric", validation_metric},
            {"improved", improved}};
  }
};

struct TrainResult {
  std::vector<EpochRecord> log;
  int best_epoch = -1;
  double best_metric = 0.0;
  bool early_stopped = false;
  fs::path checkpoint_path;
  std::string checkpoint_hash;
  double seconds = 0.0;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// Shared epoch loop: linear learning-rate decay, validation after every
// epoch, best-checkpoint persistence, early stopping and a JSON-lines log.
struct TrainLoop {
  const TrainConfig& cfg;
  fs::path out_dir;
  std::string metric_name;
  std::function<double(int epoch, double lr)> train_epoch;
  std::function<double()> validate;
  std::function<Checkpoint(int epoch, double metric)> checkpoint;
  ProgressFn progress;

  TrainResult run() const {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    detail::write_file(out_dir / "train_config.json", cfg.to_json().dump(2) + "\n");
    std::ofstream log(out_dir / "metrics.jsonl");
    TrainResult r;
    r.checkpoint_path = out_dir / "best.ckpt.json";
    EarlyStopping stop(cfg.early_stop_patience);
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      EpochRecord rec;
      rec.epoch = epoch;
      rec.metric_name = metric_name;
      rec.learning_rate = nn::linear_decay_lr(cfg.learning_rate, epoch, cfg.max_epochs);
      rec.train_loss = train_epoch(epoch, rec.learning_rate);
      rec.validation_metric = validate();
      rec.improved = stop.update(epoch, rec.validation_metric);
      if (rec.improved) r.checkpoint_hash = save_checkpoint(checkpoint(epoch, rec.validation_metric), r.checkpoint_path);
      log << rec.to_json().dump() << "\n" << std::flush;
      r.log.push_back(rec);
      if (progress) progress(rec);
      if (stop.should_stop()) {
        r.early_stopped = true;
        break;
      }
    }
    r.best_epoch = stop.best_epoch();
    r.best_metric = stop.best();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }
};

// Applies one optimizer step from accumulated gradients, aborting with a
// diagnostic snapshot when the loss or the gradients are not finite.
struct Stepper {
  const TrainConfig& cfg;
  fs::path out_dir;
  nn::ParameterSet& params;
  nn::Gradients grads;
  nn::AdamW optimizer;

  Stepper(const TrainConfig& c, fs::path dir, nn::ParameterSet& ps)
      : cfg(c), out_dir(std::move(dir)), params(ps), grads(ps),
        optimizer(ps, nn::AdamWOptions{c.beta1, c.beta2, 1e-8, c.weight_decay}) {}

  void begin() { grads.zero(); }

  void check(double loss, int epoch, std::size_t batch) const {
    if (std::isfinite(loss)) return;
    nlohmann::json norms = nlohmann::json::object();
    for (nn::ParamId i = 0; i < params.size(); ++i) norms[params.name(i)] = params.value(i).norm();
    nlohmann::json snap{{"approach", to_string(cfg.approach)},
                        {"epoch", epoch},
                        {"batch", batch},
                        {"loss", std::isnan(loss) ? "nan" : (loss > 0 ? "inf" : "-inf")},
                        {"parameter_norms", norms},
                        {"parameters", params_to_json(params)}};
    fs::create_directories(out_dir);
    detail::write_file(out_dir / "divergence_snapshot.json", snap.dump() + "\n");
    throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch) + "; snapshot written to " +
                          (out_dir / "divergence_snapshot.json").string());
  }

  void step(std::size_t batch_rows, double lr, int epoch, std::size_t batch) {
    if (batch_rows > 1) grads.scale(1.0 / static_cast<double>(batch_rows));
    if (!grads.all_finite()) check(std::numeric_limits<double>::quiet_NaN(), epoch, batch);
    nn::clip_grad_norm(grads, cfg.grad_clip);
    optimizer.step(params, grads, lr);
  }
};

inline std::vector<std::string> sample_texts(const DatasetSplit& split) {
  std::vector<std::string> out;
  for (const auto& s : split.samples) out.push_back(s.encoded_text);
  return out;
}

// Macro-F1 of predicted sets against sample labels.
inline double macro_f1(const DatasetSplit& split, const std::vector<ObjectIdSet>& predictions) {
  std::vector<eval::SampleScore> scores;
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    scores.push_back(eval::score_sample(split.samples[i].label_object_ids, predictions[i]));
  }
  return scores.empty() ? 0.0 : eval::aggregate(scores).macro.f1;
}

// ---------------------------------------------------------------- detectors

inline detection::MatchQuality detector_quality(const detection::Detector& det, const DatasetSplit& split,
                                                const SceneImages& images) {
  detection::MatchQuality m;
  for (const auto& [id, s] : split.scenes) m += detection::detection_match_quality(det.detect(images.get(id)), s);
  return m;
}

inline std::vector<ObjectIdSet> sitcom_predict(const detection::Detector& det, const DatasetSplit& split,
                                               const SceneImages& images, double min_object_prob) {
  std::vector<ObjectIdSet> out;
  for (const auto& s : split.samples) {
    const auto pred = det.detect(images.get(s.scene_id), &s.encoded_text);
    out.push_back(detection::identify_from_detections(pred, split.scene(s.scene_id), {0.10, min_object_prob}));
  }
  return out;
}

// Copies every tensor of `src` whose name and shape exist in `dst`.
inline std::size_t load_matching_params(nn::ParameterSet& dst, const nlohmann::json& src) {
  std::size_t n = 0;
  for (const auto& e : src) {
    const std::string name = e.at("name").get<std::string>();
    if (!dst.contains(name)) continue;
    nn::Matrix& m = dst.value(dst.id(name));
    const auto data = e.at("data").get<std::vector<double>>();
    if (e.at("rows").get<Eigen::Index>() != m.rows() || e.at("cols").get<Eigen::Index>() != m.cols()) continue;
    std::copy(data.begin(), data.end(), m.data());
    ++n;
  }
  return n;
}

inline TrainResult train_detector(const TrainConfig& cfg, const DatasetSplit& train, const DatasetSplit& val,
                                  const fs::path& out_dir, const ProgressFn& progress) {
  const bool sitcom = cfg.approach == Approach::kSitcomDetr;
  detection::DetectionModelConfig mc = cfg.detector;
  mc.dialogue_conditioned = sitcom;
  std::optional<nn::Vocabulary> vocab;
  if (sitcom) vocab = nn::Vocabulary::build(sample_texts(train));
  detection::Detector det(mc, cfg.seed, vocab);
  if (sitcom && !cfg.detector_checkpoint.empty()) {
    load_matching_params(det.params(), load_checkpoint(cfg.detector_checkpoint).parameters);
  }
  const SceneImages train_images(train), val_images(val);
  std::vector<std::string> scene_ids;
  for (const auto& [id, s] : train.scenes) scene_ids.push_back(id);
  const std::size_t n_examples = sitcom ? train.samples.size() : scene_ids.size();
  if (n_examples == 0) throw ValidationError("training split is empty");

  Stepper stepper(cfg, out_dir, det.params());
  std::mt19937_64 rng(cfg.seed + 1);
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainLoop loop{cfg, out_dir, sitcom ? "macro_f1" : "labeled_match_rate", {}, {}, {}, progress};
  loop.train_epoch = [&](int epoch, double lr) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t n = std::min(bs, order.size() - b);
      stepper.begin();
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = order[b + k];
        const DialogueTurnContext* sample = sitcom ? &train.samples[idx] : nullptr;
        const Scene& scene = train.scene(sitcom ? sample->scene_id : scene_ids[idx]);
        Image img = train_images.get(scene.scene_id);
        std::vector<SceneObject> objects;
        for (const auto& o : scene.objects) {
          if (!sitcom || sample->label_object_ids.count(o.object_id) != 0) objects.push_back(o);
        }
        auto targets = detection::targets_from_objects(objects, scene.image_size);
        if (cfg.augment_flips) flip_example(img, targets, std::uniform_int_distribution<int>(0, 3)(rng));
        nn::Tape t(&det.params(), &stepper.grads);
        std::optional<nn::EncodedText> enc;
        if (sitcom) enc = det.encode_dialogue(sample->encoded_text);
        const auto f = det.forward(t, det.patches(img), enc ? &*enc : nullptr);
        const Var loss = detection::detector_training_loss(t, f, targets);
        stepper.check(loss.scalar(), epoch, b / bs);
        total += loss.scalar();
        t.backward(loss);
      }
      stepper.step(n, lr, epoch, b / bs);
    }
    return total / static_cast<double>(order.size());
  };
  loop.validate = [&]() {
    if (!sitcom) return detector_quality(det, val, val_images).labeled_rate();
    return macro_f1(val, sitcom_predict(det, val, val_images, cfg.min_object_prob));
  };
  loop.checkpoint = [&](int epoch, double metric) {
    return make_checkpoint(cfg.approach, mc.to_json(), cfg, det.params(), vocab, epoch, metric);
  };
  return loop.run();
}

// ------------------------------------------------------------------ clipper

// Flattened crops of every object of every scene, keyed by scene then object.
struct SceneCrops {
  std::map<std::string, std::vector<ObjectId>> object_ids;
  std::map<std::string, nn::Matrix> rows;

  static SceneCrops build(const alignment::AlignmentModel& model, const DatasetSplit& split, const SceneImages& images) {
    SceneCrops sc;
    for (const auto& [id, s] : split.scenes) {
      const CropResult cr = model.crop(images.get(id), s.objects);
      std::vector<Image> pix;
      for (const auto& c : cr.crops) {
        sc.object_ids[id].push_back(c.object_id);
        pix.push_back(c.pixels);
      }
      sc.rows[id] = alignment::crops_to_rows(pix, model.config().crop_resolution);
    }
    return sc;
  }

  nn::Matrix row(const std::string& scene_id, ObjectId object_id) const {
    const auto& ids = object_ids.at(scene_id);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == object_id) return rows.at(scene_id).row(static_cast<Eigen::Index>(i));
    throw ValidationError("object " + std::to_string(object_id) + " of scene " + scene_id + " has no crop");
  }
};

// Per-sample logits of every cropped scene object (in crop order).
inline std::vector<std::vector<double>> clipper_scores(const alignment::AlignmentModel& model, const DatasetSplit& split,
                                                       const SceneCrops& crops) {
  nn::Tape t(&model.params(), nullptr);
  t.set_grad_enabled(false);
  std::map<std::string, nn::Matrix> object_embs;
  for (const auto& [id, rows] : crops.rows) {
    if (rows.rows() > 0) object_embs[id] = model.embed_objects(t, rows).value();
  }
  std::vector<std::vector<double>> out;
  for (const auto& s : split.samples) {
    auto it = object_embs.find(s.scene_id);
    if (it == object_embs.end()) {
      out.emplace_back();
      continue;
    }
    nn::Tape ts(&model.params(), nullptr);
    ts.set_grad_enabled(false);
    const nn::EncodedText enc = model.encode(s.encoded_text);
    const nn::Matrix d = model.embed_dialogues(ts, std::span<const nn::EncodedText>(&enc, 1)).value();
    const nn::Matrix l = alignment::similarity(d, it->second, model.logit_scale());
    out.emplace_back(l.data(), l.data() + l.size());
  }
  return out;
}

inline std::vector<ObjectIdSet> clipper_predict(const alignment::AlignmentModel& model, const DatasetSplit& split,
                                                const SceneCrops& crops, alignment::InferenceStrategy strategy) {
  const auto scores = clipper_scores(model, split, crops);
  std::vector<ObjectIdSet> out;
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    const auto& s = split.samples[i];
    ObjectIdSet pred;
    if (!scores[i].empty()) {
      const auto& ids = crops.object_ids.at(s.scene_id);
      for (std::size_t j : alignment::infer(strategy, scores[i], std::min(s.label_object_ids.size(), ids.size()))) {
        pred.insert(ids[j]);
      }
    }
    out.push_back(std::move(pred));
  }
  return out;
}

inline alignment::InferenceStrategy default_strategy(Approach a) {
  return a == Approach::kClipperOriginal ? alignment::InferenceStrategy::kMean : alignment::InferenceStrategy::kSigmoid;
}

// Scene-grouped batches: scenes are visited in random order and all of a
// scene's samples go into consecutive rows, each paired with one target drawn
// uniformly from its label set.
inline std::vector<std::vector<PairMeta>> clipper_batches(const DatasetSplit& split, int batch_size, std::mt19937_64& rng) {
  std::map<std::string, std::vector<std::size_t>> by_scene;
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    if (!split.samples[i].label_object_ids.empty()) by_scene[split.samples[i].scene_id].push_back(i);
  }
  std::vector<std::string> scenes;
  for (const auto& [id, v] : by_scene) scenes.push_back(id);
  std::shuffle(scenes.begin(), scenes.end(), rng);
  std::vector<std::vector<PairMeta>> batches(1);
  for (const auto& id : scenes) {
    auto idx = by_scene[id];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i : idx) {
      const auto& s = split.samples[i];
      std::vector<ObjectId> labels(s.label_object_ids.begin(), s.label_object_ids.end());
      const ObjectId target = labels[std::uniform_int_distribution<std::size_t>(0, labels.size() - 1)(rng)];
      const SceneObject* o = split.scene(id).find(target);
      if (batches.back().size() == static_cast<std::size_t>(batch_size)) batches.emplace_back();
      batches.back().push_back({s.dialogue_id, s.turn_index, id, target, o->prefab_id, s.label_object_ids});
    }
  }
  if (batches.back().empty()) batches.pop_back();
  return batches;
}

inline PositiveMask clipper_mask(Approach a, std::span<const PairMeta> meta) {
  switch (a) {
    case Approach::kClipperV1: return build_positive_mask_v1(meta);
    case Approach::kClipperV2: return build_positive_mask_v2(meta);
    default: return identity_mask(meta.size());
  }
}

inline TrainResult train_clipper(const TrainConfig& cfg, const DatasetSplit& train, const DatasetSplit& val,
                                 const fs::path& out_dir, const ProgressFn& progress) {
  alignment::AlignmentModel model(cfg.alignment, nn::Vocabulary::build(sample_texts(train)), cfg.seed);
  const SceneImages train_images(train), val_images(val);
  const SceneCrops train_crops = SceneCrops::build(model, train, train_images);
  const SceneCrops val_crops = SceneCrops::build(model, val, val_images);
  std::map<std::pair<std::string, int>, nn::EncodedText> encoded;
  for (const auto& s : train.samples) encoded[{s.dialogue_id, s.turn_index}] = model.encode(s.encoded_text);

  Stepper stepper(cfg, out_dir, model.params());
  std::mt19937_64 rng(cfg.seed + 1);
  const auto strategy = default_strategy(cfg.approach);

  TrainLoop loop{cfg, out_dir, "macro_f1", {}, {}, {}, progress};
  loop.train_epoch = [&](int epoch, double lr) {
    const auto batches = clipper_batches(train, cfg.batch_size, rng);
    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& meta = batches[b];
      std::vector<nn::EncodedText> texts;
      nn::Matrix crops(static_cast<Eigen::Index>(meta.size()), train_crops.rows.begin()->second.cols());
      for (std::size_t i = 0; i < meta.size(); ++i) {
        texts.push_back(encoded.at({meta[i].dialogue_id, meta[i].turn_index}));
        crops.row(static_cast<Eigen::Index>(i)) = train_crops.row(meta[i].scene_id, meta[i].object_id);
      }
      stepper.begin();
      nn::Tape t(&model.params(), &stepper.grads);
      Var logits = model.logits(t, model.embed_dialogues(t, texts), model.embed_objects(t, crops));
      Var loss = cfg.approach == Approach::kClipperOriginal
                     ? alignment::clip_contrastive_loss(logits)
                     : alignment::clipper_bce_loss(logits, clipper_mask(cfg.approach, meta));
      stepper.check(loss.scalar(), epoch, b);
      total += loss.scalar();
      t.backward(loss);
      stepper.step(1, lr, epoch, b);
    }
    return batches.empty() ? 0.0 : total / static_cast<double>(batches.size());
  };
  loop.validate = [&]() { return macro_f1(val, clipper_predict(model, val, val_crops, strategy)); };
  loop.checkpoint = [&](int epoch, double metric) {
    return make_checkpoint(cfg.approach, cfg.alignment.to_json(), cfg, model.params(), model.vocabulary(), epoch, metric);
  };
  return loop.run();
}

// ----------------------------------------------------------- scene-dialogue

inline scene::ObjectFeatureCache extract_feature_cache(const detection::Detector& det, const std::string& checkpoint_hash,
                                                       const DatasetSplit& split, bool box_only_matching = false) {
  const SceneImages images(split);
  scene::ObjectFeatureCache cache(checkpoint_hash);
  for (const auto& [id, s] : split.scenes) {
    cache.put(id, scene::extract_object_features(det, images.get(id), s, {box_only_matching}));
  }
  return cache;
}

inline nn::Matrix feature_matrix(const std::vector<scene::ObjectFeature>& feats) {
  if (feats.empty()) return nn::Matrix(0, 0);
  nn::Matrix m(static_cast<Eigen::Index>(feats.size()), static_cast<Eigen::Index>(feats.front().feature.size()));
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t k = 0; k < feats[i].feature.size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = feats[i].feature[k];
  return m;
}

inline std::vector<ObjectIdSet> scene_dialogue_predict(const scene::SceneDialogueModel& model, const DatasetSplit& split,
                                                       const scene::ObjectFeatureCache& cache, double threshold = 0.5) {
  std::vector<ObjectIdSet> out;
  for (const auto& s : split.samples) out.push_back(scene::identify(model, s, cache, threshold));
  return out;
}

inline double positive_weight(const DatasetSplit& split) {
  std::size_t pos = 0, neg = 0;
  for (const auto& inst : make_identification_instances(split)) (inst.label ? pos : neg) += 1;
  return pos == 0 ? 1.0 : static_cast<double>(neg) / static_cast<double>(pos);
}

struct FeatureCaches {
  scene::ObjectFeatureCache train;
  scene::ObjectFeatureCache validation;
};

inline FeatureCaches resolve_feature_caches(const TrainConfig& cfg, const DatasetSplit& train, const DatasetSplit& val) {
  std::optional<std::string> hash;
  if (!cfg.detector_checkpoint.empty()) hash = checkpoint_hash(cfg.detector_checkpoint);
  auto obtain = [&](const std::string& path, const DatasetSplit& split) {
    if (!path.empty()) {
      auto c = scene::ObjectFeatureCache::load(path);
      if (hash) c.require_extractor(*hash);
      return c;
    }
    if (!hash) throw ConfigError("scene_dialogue training needs detector_checkpoint or precomputed feature caches");
    const auto det = detector_from_checkpoint(load_checkpoint(cfg.detector_checkpoint));
    return extract_feature_cache(det, *hash, split, cfg.box_only_feature_matching);
  };
  FeatureCaches fc{obtain(cfg.train_features, train), obtain(cfg.validation_features, val)};
  fc.train.validate_against(train);
  fc.validation.validate_against(val);
  if (fc.train.extractor_checkpoint_hash() != fc.validation.extractor_checkpoint_hash()) {
    throw ConfigError("train and validation feature caches come from different detectors");
  }
  return fc;
}

inline TrainResult train_scene_dialogue(const TrainConfig& cfg, const DatasetSplit& train, const DatasetSplit& val,
                                        const fs::path& out_dir, const ProgressFn& progress) {
  const FeatureCaches caches = resolve_feature_caches(cfg, train, val);
  scene::SceneDialogueConfig mc = cfg.scene_dialogue;
  for (const auto& [id, feats] : caches.train.scenes()) {
    if (!feats.empty()) {
      mc.feature_dim = static_cast<int>(feats.front().feature.size());
      break;
    }
  }
  scene::SceneDialogueModel model(mc, nn::Vocabulary::build(sample_texts(train)), cfg.seed);
  std::map<std::string, nn::Matrix> features;
  for (const auto& [id, feats] : caches.train.scenes()) features[id] = feature_matrix(feats);
  std::vector<nn::EncodedText> encoded;
  std::vector<std::vector<int>> labels;
  for (const auto& s : train.samples) {
    encoded.push_back(model.encode(s.encoded_text));
    std::vector<int> y;
    for (const auto& f : caches.train.get(s.scene_id)) y.push_back(s.label_object_ids.count(f.object_id) != 0 ? 1 : 0);
    labels.push_back(std::move(y));
  }
  const double pos_weight = cfg.balance_positive_weight ? positive_weight(train) : 1.0;

  Stepper stepper(cfg, out_dir, model.params());
  std::mt19937_64 rng(cfg.seed + 1);
  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainLoop loop{cfg, out_dir, "macro_f1", {}, {}, {}, progress};
  loop.train_epoch = [&](int epoch, double lr) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t n = std::min(bs, order.size() - b);
      stepper.begin();
      nn::Tape t(&model.params(), &stepper.grads);
      std::vector<Var> logits;
      std::vector<int> y;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[b + k];
        const nn::Matrix& f = features.at(train.samples[i].scene_id);
        if (f.rows() == 0) continue;
        logits.push_back(model.classify(t, model.embed_dialogue(t, encoded[i]), t.constant(f)));
        y.insert(y.end(), labels[i].begin(), labels[i].end());
      }
      if (logits.empty()) continue;
      Var loss = scene::identification_bce_loss(nn::concat_rows(logits), y, pos_weight);
      stepper.check(loss.scalar(), epoch, b / bs);
      total += loss.scalar();
      ++batches;
      t.backward(loss);
      stepper.step(1, lr, epoch, b / bs);
    }
    return batches == 0 ? 0.0 : total / static_cast<double>(batches);
  };
  loop.validate = [&]() { return macro_f1(val, scene_dialogue_predict(model, val, caches.validation)); };
  loop.checkpoint = [&](int epoch, double metric) {
    auto c = make_checkpoint(cfg.approach, mc.to_json(), cfg, model.params(), model.vocabulary(), epoch, metric);
    c.train_config["feature_extractor_hash"] = caches.train.extractor_checkpoint_hash();
    return c;
  };
  return loop.run();
}

// Trains the configured approach on validated splits; outputs go to out_dir.
inline TrainResult run_training(const TrainConfig& cfg, const DatasetSplit& train, const DatasetSplit& val,
                                const fs::path& out_dir, const ProgressFn& progress = {}) {
  cfg.validate();
  validate_split(train);
  validate_split(val);
  switch (cfg.approach) {
    case Approach::kDetr:
    case Approach::kSitcomDetr: return train_detector(cfg, train, val, out_dir, progress);
    case Approach::kClipperOriginal:
    case Approach::kClipperV1:
    case Approach::kClipperV2: return train_clipper(cfg, train, val, out_dir, progress);
    case Approach::kSceneDialogue: return train_scene_dialogue(cfg, train, val, out_dir, progress);
  }
  throw ConfigError("unknown approach");
}

inline TrainResult run_training(const TrainConfig& cfg, const fs::path& out_dir, const ProgressFn& progress = {}) {
  if (cfg.train_manifest.empty() || cfg.validation_manifest.empty()) {
    throw ConfigError("train_manifest and validation_manifest are required");
  }
  const DatasetSplit train = load_split(cfg.train_manifest);
  const DatasetSplit val = load_split(cfg.validation_manifest);
  return run_training(cfg, train, val, out_dir, progress);
}

}  // namespace moi::harness
