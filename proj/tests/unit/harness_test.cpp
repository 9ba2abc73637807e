#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "moi/core/hash.hpp"
#include "moi/harness/pipeline.hpp"
#include "moi/harness/synthetic.hpp"
#include "moi/harness/train.hpp"

namespace moi::harness {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(fs::temp_directory_path() / ("moi_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// ------------------------------------------------------------------ config

TEST(TrainConfig, DefaultsFollowTheDocumentedSchedule) {
  const TrainConfig c;
  EXPECT_EQ(c.max_epochs, 200);
  EXPECT_EQ(c.early_stop_patience, 10);
  EXPECT_DOUBLE_EQ(c.learning_rate, 3e-5);
  EXPECT_DOUBLE_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.batch_size, 32);
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, ValidationRejectsOutOfRangeValues) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.learning_rate = 2e-4; });
  bad([](TrainConfig& c) { c.learning_rate = 5e-6; });
  bad([](TrainConfig& c) { c.max_epochs = 201; });
  bad([](TrainConfig& c) { c.max_epochs = 0; });
  bad([](TrainConfig& c) { c.early_stop_patience = 0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.weight_decay = -1.0; });
  bad([](TrainConfig& c) {
    c.approach = Approach::kClipperV1;
    c.batch_size = 1;
  });
  TrainConfig edge;
  edge.learning_rate = 1e-5;
  EXPECT_NO_THROW(edge.validate());
  edge.learning_rate = 1e-4;
  EXPECT_NO_THROW(edge.validate());
}

TEST(TrainConfig, JsonRoundTripPreservesHash) {
  TrainConfig c = desk_scale_config(Approach::kClipperV2);
  c.seed = 17;
  c.train_manifest = "a/train.json";
  c.alignment.projection_dim = 32;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 12u);
  TrainConfig other = c;
  other.seed = 18;
  EXPECT_NE(other.hash(), c.hash());
}

TEST(TrainConfig, FromJsonRejectsUnsupportedChoices) {
  EXPECT_THROW(TrainConfig::from_json({{"lr_schedule", "cosine"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"optimizer", {{"name", "sgd"}}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", 1.0}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"approach", "yolo"}}), std::exception);
}

TEST(TrainConfig, DeskScalePresets) {
  for (Approach a : {Approach::kDetr, Approach::kSitcomDetr, Approach::kClipperOriginal, Approach::kClipperV1,
                     Approach::kClipperV2, Approach::kSceneDialogue}) {
    const TrainConfig c = desk_scale_config(a);
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.approach, a);
    EXPECT_DOUBLE_EQ(c.learning_rate, 1e-4);
    EXPECT_EQ(parse_approach(to_string(a)), a);
  }
  EXPECT_EQ(desk_scale_config(Approach::kDetr).early_stop_patience, 200);
  EXPECT_EQ(desk_scale_config(Approach::kSceneDialogue).batch_size, 4);
  EXPECT_EQ(desk_scale_config(Approach::kClipperV1).batch_size, 4);
}

TEST(LearningRate, LinearDecayFormula) {
  for (int t = 0; t < 200; ++t) EXPECT_NEAR(nn::linear_decay_lr(3e-5, t, 200), 3e-5 * (1.0 - t / 200.0), 1e-15);
}

// ---------------------------------------------------------------- training

TEST(EarlyStopping, StopsExactlyPatienceEpochsAfterBest) {
  EarlyStopping s(3);
  const std::vector<double> metrics{0.1, 0.5, 0.4, 0.5, 0.45};
  for (int e = 0; e < static_cast<int>(metrics.size()); ++e) {
    s.update(e, metrics[static_cast<std::size_t>(e)]);
    EXPECT_EQ(s.should_stop(), e == 4) << e;
  }
  EXPECT_EQ(s.best_epoch(), 1);
  EXPECT_DOUBLE_EQ(s.best(), 0.5);
}

TEST(EarlyStopping, ImprovementResetsPatience) {
  EarlyStopping s(2);
  EXPECT_TRUE(s.update(0, 0.0));
  EXPECT_FALSE(s.update(1, 0.0));
  EXPECT_TRUE(s.update(2, 0.1));
  EXPECT_FALSE(s.update(3, 0.1));
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.update(4, 0.05));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 2);
}

TEST(FlipExample, MirrorsPixelsAndBoxes) {
  Image img(4, 2, 0.0);
  img.at(0, 0, 0) = 1.0;
  std::vector<detection::DetectionTarget> t{{0, {0.125, 0.25, 0.25, 0.5}}};
  flip_example(img, t, 3);
  EXPECT_EQ(img.at(3, 1, 0), 1.0);
  EXPECT_EQ(img.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(t[0].box[0], 0.875);
  EXPECT_DOUBLE_EQ(t[0].box[1], 0.75);
  EXPECT_DOUBLE_EQ(t[0].box[2], 0.25);
  flip_example(img, t, 3);
  EXPECT_EQ(img.at(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(t[0].box[0], 0.125);
}

TEST(FlipExample, ZeroFlipsIsIdentity) {
  Image img(3, 3, 0.2);
  img.at(1, 0, 2) = 0.9;
  const Image before = img;
  std::vector<detection::DetectionTarget> t{{1, {0.3, 0.4, 0.1, 0.1}}};
  flip_example(img, t, 0);
  EXPECT_EQ(img.at(1, 0, 2), before.at(1, 0, 2));
  EXPECT_DOUBLE_EQ(t[0].box[0], 0.3);
}

// --------------------------------------------------------------- synthetic

// Reads the constraints back from the rendered utterance alone, then filters
// the scene by attributes recomputed from its prefab ids and boxes.
ObjectIdSet interpret(const std::string& utterance, const Scene& scene) {
  static const std::set<std::string> kColors{"red", "green", "blue", "yellow"};
  static const std::set<std::string> kShapes{"square", "circle", "triangle"};
  std::optional<std::string> color, shape, hpos, vpos;
  std::istringstream words(utterance);
  for (std::string w; words >> w;) {
    if (kColors.count(w)) color = w;
    if (kShapes.count(w)) shape = w;
    if (w == "left" || w == "right") hpos = w;
    if (w == "top" || w == "bottom") vpos = w;
  }
  ObjectIdSet out;
  for (const auto& o : scene.objects) {
    const auto dash = o.prefab_id.find('-');
    const std::string c = o.prefab_id.substr(0, dash), s = o.prefab_id.substr(dash + 1);
    const double cx = o.box.x + o.box.w / 2, cy = o.box.y + o.box.h / 2;
    const std::string h = cx < scene.image_size.width / 2.0 ? "left" : "right";
    const std::string v = cy < scene.image_size.height / 2.0 ? "top" : "bottom";
    if ((!color || *color == c) && (!shape || *shape == s) && (!hpos || *hpos == h) && (!vpos || *vpos == v))
      out.insert(o.object_id);
  }
  return out;
}

TEST(Synthetic, LabelSetsMatchAnIndependentConstraintInterpreter) {
  auto cfg = synth::SyntheticGenConfig::defaults();
  cfg.num_train_scenes = 150;
  const auto g = synth::generate_split(cfg, SplitName::kTrain);
  std::map<std::string, const Scene*> scenes;
  for (const auto& gs : g.scenes) scenes[gs.scene.scene_id] = &gs.scene;
  std::size_t checked = 0;
  for (const auto& d : g.dialogues) {
    std::vector<std::string> user;
    for (const auto& u : d.turns)
      if (u.speaker == Speaker::kUser) user.push_back(u.text);
    ASSERT_EQ(user.size(), d.annotations.size());
    for (const auto& a : d.annotations) {
      const auto want = interpret(user[static_cast<std::size_t>(a.turn_index - 1)], *scenes.at(a.scene_id));
      EXPECT_EQ(a.label_object_ids, want) << d.dialogue_id << " turn " << a.turn_index;
      EXPECT_FALSE(a.label_object_ids.empty());
      ++checked;
    }
  }
  EXPECT_GT(checked, 500u);
}

TEST(Synthetic, NoDuplicatesWithFullyConstrainingTemplateGivesSingletons) {
  auto cfg = synth::SyntheticGenConfig::defaults();
  cfg.duplicate_prefab_prob = 0.0;
  cfg.templates = {{"show me the {color} {shape}"}};
  cfg.num_train_scenes = 40;
  for (const auto& d : synth::generate_split(cfg, SplitName::kTrain).dialogues)
    for (const auto& a : d.annotations) EXPECT_EQ(a.label_object_ids.size(), 1u);
}

TEST(Synthetic, AllDuplicatesWithColorTemplateSelectsEverySamePrefabObject) {
  auto cfg = synth::SyntheticGenConfig::defaults();
  cfg.duplicate_prefab_prob = 1.0;
  cfg.templates = {{"do you have anything {color}"}};
  cfg.num_train_scenes = 40;
  const auto g = synth::generate_split(cfg, SplitName::kTrain);
  std::map<std::string, const Scene*> scenes;
  for (const auto& gs : g.scenes) scenes[gs.scene.scene_id] = &gs.scene;
  for (const auto& d : g.dialogues) {
    for (const auto& a : d.annotations) {
      const Scene& s = *scenes.at(a.scene_id);
      EXPECT_EQ(a.label_object_ids, s.object_ids());
      for (const auto& o : s.objects) EXPECT_EQ(o.prefab_id, s.objects.front().prefab_id);
    }
  }
}

TEST(Synthetic, PositiveRatioMatchesIdentificationInstances) {
  auto cfg = synth::SyntheticGenConfig::defaults();
  TempDir dir("synth_ratio");
  cfg.num_train_scenes = 20;
  cfg.num_validation_scenes = 5;
  cfg.num_test_scenes = 5;
  const auto ds = synth::generate_synthetic_dataset(cfg, dir.path());
  const DatasetSplit train = load_split(ds.manifest(SplitName::kTrain));
  std::size_t pos = 0, all = 0;
  for (const auto& inst : make_identification_instances(train)) {
    pos += inst.label ? 1 : 0;
    ++all;
  }
  EXPECT_DOUBLE_EQ(ds.positive_ratio.at(SplitName::kTrain), static_cast<double>(pos) / static_cast<double>(all));
  EXPECT_EQ(train.scenes.size(), 20u);
}

TEST(Synthetic, FixedSeedGivesByteIdenticalOutput) {
  auto cfg = synth::SyntheticGenConfig::defaults();
  cfg.num_train_scenes = 6;
  cfg.num_validation_scenes = 2;
  cfg.num_test_scenes = 2;
  TempDir a("synth_a"), b("synth_b");
  synth::generate_synthetic_dataset(cfg, a.path());
  synth::generate_synthetic_dataset(cfg, b.path());
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 20u);
  const std::string first = slurp(a.path() / "dialogues" / "train.jsonl");
  cfg.seed += 1;
  TempDir c("synth_c");
  synth::generate_synthetic_dataset(cfg, c.path());
  EXPECT_NE(slurp(c.path() / "dialogues" / "train.jsonl"), first);
}

TEST(Synthetic, ConfigValidation) {
  auto cfg = synth::SyntheticGenConfig::defaults();
  cfg.palette.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = synth::SyntheticGenConfig::defaults();
  cfg.duplicate_prefab_prob = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = synth::SyntheticGenConfig::defaults();
  cfg.max_objects = 17;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = synth::SyntheticGenConfig::defaults();
  EXPECT_EQ(synth::SyntheticGenConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
}

// --------------------------------------------------------------- pipeline

DatasetSplit tiny_split() {
  DatasetSplit s;
  s.name = SplitName::kTest;
  Scene scene;
  scene.scene_id = "sc";
  scene.image_size = {32, 32};
  scene.objects = {{1, {0, 0, 4, 4}, 0, "p"}, {2, {10, 10, 4, 4}, 0, "p"}, {3, {20, 20, 4, 4}, 0, "p"}};
  s.scenes["sc"] = scene;
  DialogueTurnContext a;
  a.dialogue_id = "d0";
  a.turn_index = 1;
  a.scene_id = "sc";
  a.label_object_ids = {1};
  DialogueTurnContext b = a;
  b.turn_index = 2;
  b.label_object_ids = {2, 3};
  s.samples = {a, b};
  return s;
}

TEST(PredictionRecord, JsonLinesRoundTrip) {
  TempDir dir("records");
  const std::vector<PredictionRecord> recs{{"d0", 1, "x", {1, 3}}, {"d0", 2, "x", {}}};
  save_predictions(recs, dir.path() / "p.jsonl");
  const auto back = load_predictions(dir.path() / "p.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].predicted_object_ids, (ObjectIdSet{1, 3}));
  EXPECT_TRUE(back[1].predicted_object_ids.empty());
  EXPECT_EQ(back[1].turn_index, 2);
  EXPECT_THROW(PredictionRecord::from_json({{"dialogue_id", "d"}}), ParseError);
}

TEST(RunEvaluate, ScoresEverySample) {
  const auto split = tiny_split();
  const auto r = run_evaluate({{"d0", 1, "h", {1}}, {"d0", 2, "h", {2}}}, split);
  EXPECT_EQ(r.strategy, "h");
  EXPECT_DOUBLE_EQ(r.macro.recall, 0.75);
  EXPECT_DOUBLE_EQ(r.macro.precision, 1.0);
  EXPECT_EQ(r.counts.correct, 2u);
}

TEST(RunEvaluate, HeuristicDumpsGiveExpectedExtremes) {
  const auto split = tiny_split();
  std::mt19937_64 rng(1);
  const auto all = run_evaluate(make_records(split, heuristic_predictions(split, eval::Heuristic::kAllObjects, 1), "a"), split);
  EXPECT_EQ(all.macro.recall, 1.0);
  const auto none = run_evaluate(make_records(split, heuristic_predictions(split, eval::Heuristic::kNoObject, 1), "n"), split);
  EXPECT_EQ(none.macro.recall, 0.0);
  EXPECT_EQ(none.macro.precision, 0.0);
  EXPECT_EQ(none.micro.f1, 0.0);
}

TEST(RunEvaluate, OracleDumpFlagsPrecisionEqualsRecall) {
  const auto split = tiny_split();
  // Oracle picks |L| objects; here it got one of two right on the second turn.
  const auto r = run_evaluate({{"d0", 1, "o", {1}}, {"d0", 2, "o", {1, 2}}}, split);
  EXPECT_TRUE(r.precision_equals_recall);
}

TEST(RunEvaluate, RejectsMalformedDumps) {
  const auto split = tiny_split();
  EXPECT_THROW(run_evaluate({{"d0", 1, "h", {1}}, {"d9", 2, "h", {2}}}, split), ValidationError);
  EXPECT_THROW(run_evaluate({{"d0", 1, "h", {7}}, {"d0", 2, "h", {2}}}, split), ValidationError);
  EXPECT_THROW(run_evaluate({{"d0", 1, "h", {1}}, {"d0", 1, "h", {1}}, {"d0", 2, "h", {2}}}, split), InvalidInput);
  EXPECT_THROW(run_evaluate({{"d0", 1, "h", {1}}}, split), InvalidInput);
  EXPECT_THROW(run_evaluate({{"d0", 1, "h", {1}}, {"d0", 2, "g", {2}}}, split), InvalidInput);
  // Filtering by tag picks one coherent dump out of a mixed file.
  const auto r = run_evaluate({{"d0", 1, "h", {1}}, {"d0", 2, "g", {2}}, {"d0", 2, "h", {2, 3}}}, split, "h");
  EXPECT_EQ(r.macro.f1, 1.0);
}

TEST(Report, JsonRoundTripThroughFiles) {
  TempDir dir("report");
  const auto r = run_evaluate({{"d0", 1, "h", {1}}, {"d0", 2, "h", {2}}}, tiny_split());
  save_report(r, dir.path() / "r.json");
  EXPECT_TRUE(fs::exists(dir.path() / "r.txt"));
  const auto back = load_report(dir.path() / "r.json");
  EXPECT_EQ(back.strategy, r.strategy);
  EXPECT_DOUBLE_EQ(back.macro.f1, r.macro.f1);
  EXPECT_DOUBLE_EQ(back.micro.precision, r.micro.precision);
  EXPECT_EQ(back.counts.labels, r.counts.labels);
  EXPECT_EQ(back.precision_equals_recall, r.precision_equals_recall);
}

TEST(RunDir, UsesEnvironmentRootAndConfigHash) {
  TempDir dir("runs");
  ::setenv("MOI_OUTPUT_ROOT", dir.path().c_str(), 1);
  const fs::path a = make_run_dir("abc123");
  const fs::path b = make_run_dir("abc123");
  ::unsetenv("MOI_OUTPUT_ROOT");
  EXPECT_EQ(a.parent_path(), dir.path());
  EXPECT_TRUE(fs::is_directory(a));
  EXPECT_NE(a, b);
  EXPECT_NE(a.filename().string().find("-abc123"), std::string::npos);
}

// ------------------------------------------------------- tiny end to end

synth::SyntheticGenConfig tiny_gen() {
  auto cfg = synth::SyntheticGenConfig::defaults();
  cfg.num_train_scenes = 6;
  cfg.num_validation_scenes = 3;
  cfg.num_test_scenes = 3;
  cfg.image_size = 32;
  cfg.grid = 2;
  cfg.min_objects = 2;
  cfg.max_objects = 4;
  cfg.dialogues_per_scene = 2;
  return cfg;
}

nn::TextEncoderConfig tiny_text() {
  nn::TextEncoderConfig t;
  t.dim = 16;
  t.heads = 2;
  t.ffn_dim = 32;
  return t;
}

TrainConfig tiny_train(Approach a, const synth::GeneratedDataset& ds) {
  TrainConfig c;
  c.approach = a;
  c.learning_rate = 1e-4;
  c.max_epochs = 3;
  c.early_stop_patience = 1;
  c.batch_size = a == Approach::kDetr ? 2 : 4;
  c.train_manifest = ds.manifest(SplitName::kTrain).string();
  c.validation_manifest = ds.manifest(SplitName::kValidation).string();
  c.detector.num_queries = 6;
  c.detector.hidden_dim = 16;
  c.detector.num_classes = 12;
  c.detector.encoder_layers = 1;
  c.detector.decoder_layers = 1;
  c.detector.heads = 2;
  c.detector.ffn_dim = 32;
  c.detector.image_size = 32;
  c.detector.sample_points = 2;
  c.detector.pixel_points = 2;
  c.detector.text = tiny_text();
  c.alignment.crop_resolution = 8;
  c.alignment.image_hidden = 16;
  c.alignment.projection_dim = 16;
  c.alignment.text = tiny_text();
  c.scene_dialogue.text = tiny_text();
  c.scene_dialogue.latent_dim = 16;
  return c;
}

void check_log(const TrainResult& r, const TrainConfig& cfg, const fs::path& out) {
  ASSERT_FALSE(r.log.empty());
  EXPECT_LE(static_cast<int>(r.log.size()), cfg.max_epochs);
  EXPECT_LE(static_cast<int>(r.log.size()), r.best_epoch + cfg.early_stop_patience + 1);
  if (r.early_stopped) EXPECT_EQ(static_cast<int>(r.log.size()), r.best_epoch + cfg.early_stop_patience + 1);
  for (const auto& e : r.log) {
    EXPECT_NEAR(e.learning_rate, cfg.learning_rate * (1.0 - e.epoch / static_cast<double>(cfg.max_epochs)), 1e-9);
    EXPECT_TRUE(std::isfinite(e.train_loss));
  }
  std::ifstream log(out / "metrics.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  EXPECT_EQ(lines, r.log.size());
  EXPECT_EQ(checkpoint_hash(r.checkpoint_path), r.checkpoint_hash);
}

TEST(TinyPipeline, TrainsEveryStageAndPredictsFromCheckpoints) {
  TempDir dir("pipeline");
  const auto ds = synth::generate_synthetic_dataset(tiny_gen(), dir.path() / "data");
  const DatasetSplit test = load_split(ds.manifest(SplitName::kTest));

  const TrainConfig dcfg = tiny_train(Approach::kDetr, ds);
  const TrainResult det = run_training(dcfg, dir.path() / "detr");
  check_log(det, dcfg, dir.path() / "detr");
  const Checkpoint dck = load_checkpoint(det.checkpoint_path);
  EXPECT_EQ(save_checkpoint(dck, dir.path() / "copy.json"), det.checkpoint_hash);
  EXPECT_THROW(predict_with_checkpoint(dck, test), ConfigError);

  const auto detector = detector_from_checkpoint(dck);
  const auto c1 = extract_feature_cache(detector, det.checkpoint_hash, test);
  const auto c2 = extract_feature_cache(detector, det.checkpoint_hash, test);
  EXPECT_EQ(c1.to_json(), c2.to_json());
  EXPECT_EQ(c1.size(), test.scenes.size());
  for (const auto& [id, s] : test.scenes) EXPECT_EQ(c1.get(id).size(), s.objects.size());
  c1.save(dir.path() / "test_features.json");

  TrainConfig scfg = tiny_train(Approach::kSceneDialogue, ds);
  scfg.detector_checkpoint = det.checkpoint_path.string();
  const TrainResult sd = run_training(scfg, dir.path() / "sd");
  check_log(sd, scfg, dir.path() / "sd");
  PredictOptions opt;
  opt.features = (dir.path() / "test_features.json").string();
  const auto sd_records = predict_with_checkpoint(load_checkpoint(sd.checkpoint_path), test, opt);
  EXPECT_EQ(sd_records.size(), test.samples.size());
  EXPECT_NO_THROW(run_evaluate(sd_records, test));
  EXPECT_EQ(sd_records.front().strategy, "scene_dialogue");

  const TrainConfig ccfg = tiny_train(Approach::kClipperV1, ds);
  const TrainResult cl = run_training(ccfg, dir.path() / "clip");
  check_log(cl, ccfg, dir.path() / "clip");
  const Checkpoint cck = load_checkpoint(cl.checkpoint_path);
  const auto a = predict_with_checkpoint(cck, test);
  const auto b = predict_with_checkpoint(cck, test);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].predicted_object_ids, b[i].predicted_object_ids);
  opt = {};
  opt.strategy = "oracle";
  const auto oracle = run_evaluate(predict_with_checkpoint(cck, test, opt), test);
  EXPECT_TRUE(oracle.precision_equals_recall);
}

TEST(TinyPipeline, TrainingIsDeterministicUnderSeed) {
  TempDir dir("determinism");
  const auto ds = synth::generate_synthetic_dataset(tiny_gen(), dir.path() / "data");
  TrainConfig cfg = tiny_train(Approach::kClipperV2, ds);
  cfg.max_epochs = 2;
  const TrainResult a = run_training(cfg, dir.path() / "a");
  const TrainResult b = run_training(cfg, dir.path() / "b");
  EXPECT_EQ(a.checkpoint_hash, b.checkpoint_hash);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
}

TEST(TinyPipeline, SceneDialogueNeedsFeatures) {
  TempDir dir("nofeatures");
  const auto ds = synth::generate_synthetic_dataset(tiny_gen(), dir.path() / "data");
  EXPECT_THROW(run_training(tiny_train(Approach::kSceneDialogue, ds), dir.path() / "sd"), ConfigError);
}

// --------------------------------------------------------------------- CLI

#ifdef MOI_CLI_PATH
int cli(const std::string& args) { return std::system((std::string(MOI_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str()); }

TEST(Cli, GeneratePredictEvaluateReport) {
  TempDir dir("cli");
  const std::string d = dir.path().string();
  ASSERT_EQ(cli("generate --out " + d + "/data --train-scenes 3 --validation-scenes 2 --test-scenes 4 --seed 3"), 0);
  ASSERT_TRUE(fs::exists(dir.path() / "data" / "test.json"));
  ASSERT_EQ(cli("predict --heuristic all_objects --split " + d + "/data/test.json --out " + d + "/p.jsonl"), 0);
  ASSERT_EQ(cli("evaluate --predictions " + d + "/p.jsonl --split " + d + "/data/test.json --out " + d + "/r.json"), 0);
  ASSERT_EQ(cli("report " + d + "/r.json --out " + d + "/table.txt"), 0);
  EXPECT_EQ(load_report(dir.path() / "r.json").macro.recall, 1.0);
  EXPECT_NE(slurp(dir.path() / "table.txt").find("100.00%"), std::string::npos);
}

TEST(Cli, ErrorsGiveNonZeroExit) {
  TempDir dir("cli_err");
  const std::string d = dir.path().string();
  EXPECT_NE(cli("evaluate --predictions " + d + "/missing.jsonl --split " + d + "/none.json"), 0);
  EXPECT_NE(cli("predict --heuristic most_salient --split " + d + "/none.json"), 0);
  EXPECT_NE(cli("train --approach scene_dialogue --learning-rate 1.0"), 0);
  EXPECT_NE(cli("no-such-command"), 0);
}
#endif

}  // namespace
}  // namespace moi::harness
