#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "moi/data/dialogue.hpp"
#include "moi/data/image.hpp"
#include "moi/data/io.hpp"
#include "moi/data/masks.hpp"
#include "moi/harness/synthetic.hpp"

namespace moi {
namespace {

namespace fs = std::filesystem;

Utterance U(std::string t) { return {Speaker::kUser, std::move(t)}; }
Utterance S(std::string t) { return {Speaker::kSystem, std::move(t)}; }

std::size_t count_tags(const std::string& s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if ((s[i] == 'U' || s[i] == 'S') && s[i + 1] == ':' && (i == 0 || s[i - 1] == ' ')) ++n;
  }
  return n;
}

TEST(EncodeDialogueContext, ThreeUtteranceTemplate) {
  const std::vector<Utterance> h{U("hi"), S("hello"), U("show coats")};
  EXPECT_EQ(encode_dialogue_context(h), "U: hi S: hello U: show coats");
}

TEST(EncodeDialogueContext, SingleUtterance) {
  const std::vector<Utterance> h{U("show coats")};
  EXPECT_EQ(encode_dialogue_context(h), "U: show coats");
}

TEST(EncodeDialogueContext, KeepsLastThreeOfLongHistory) {
  const std::vector<Utterance> h{U("a"), S("b"), U("c"), S("d"), U("e")};
  const std::string out = encode_dialogue_context(h);
  EXPECT_EQ(out, "U: c S: d U: e");
  EXPECT_EQ(count_tags(out), 3u);
}

TEST(EncodeDialogueContext, MatchesReferenceBuilderOnEnumeratedHistories) {
  // Every speaker sequence of length 1..7 that ends with the user.
  for (int len = 1; len <= 7; ++len) {
    for (int bits = 0; bits < (1 << (len - 1)); ++bits) {
      std::vector<Utterance> h;
      for (int i = 0; i < len - 1; ++i) {
        h.push_back(((bits >> i) & 1) ? S("s" + std::to_string(i)) : U("u" + std::to_string(i)));
      }
      h.push_back(U("last"));
      std::string want;
      for (int i = std::max(0, len - 3); i < len; ++i) {
        want += (want.empty() ? "" : " ") + std::string(h[static_cast<std::size_t>(i)].speaker == Speaker::kUser ? "U: " : "S: ") +
                h[static_cast<std::size_t>(i)].text;
      }
      const std::string got = encode_dialogue_context(h);
      EXPECT_EQ(got, want);
      EXPECT_LE(count_tags(got), 3u);
      EXPECT_EQ(got.substr(got.rfind("U: ")), "U: last");
    }
  }
}

TEST(EncodeDialogueContext, SelectsUserTurnByIndex) {
  const std::vector<Utterance> d{U("a"), S("b"), U("c"), S("d"), U("e"), S("f")};
  EXPECT_EQ(encode_dialogue_context(d, 1), "U: a");
  EXPECT_EQ(encode_dialogue_context(d, 2), "U: a S: b U: c");
  EXPECT_EQ(encode_dialogue_context(d, 3), "U: c S: d U: e");
  EXPECT_THROW(encode_dialogue_context(d, 4), InvalidInput);
}

TEST(EncodeDialogueContext, RejectsBadHistories) {
  EXPECT_THROW(encode_dialogue_context(std::vector<Utterance>{}), InvalidInput);
  const std::vector<Utterance> h{U("a"), S("b")};
  EXPECT_THROW(encode_dialogue_context(h), InvalidInput);
}

Scene one_object_scene() {
  Scene s;
  s.scene_id = "s1";
  s.image_ref = "s1.ppm";
  s.image_size = {64, 48};
  s.objects = {{7, {4, 5, 10, 12}, 2, "mug"}};
  return s;
}

TEST(Scene, MinimalFileLoads) {
  const Scene s = parse_scene(serialize_scene(one_object_scene()));
  ASSERT_EQ(s.objects.size(), 1u);
  EXPECT_EQ(s.objects[0].object_id, 7);
  EXPECT_EQ(s.objects[0].prefab_id, "mug");
}

TEST(Scene, DuplicateObjectIdIsValidationError) {
  Scene s = one_object_scene();
  s.objects.push_back(s.objects[0]);
  EXPECT_THROW(parse_scene(serialize_scene(s)), ValidationError);
}

TEST(Scene, OutOfBoundsBoxIsValidationError) {
  Scene s = one_object_scene();
  s.objects[0].box = {60, 5, 10, 10};
  EXPECT_THROW(parse_scene(serialize_scene(s)), ValidationError);
  s.objects[0].box = {54.5, 5, 10, 10};  // inside the 1 px tolerance
  EXPECT_NO_THROW(parse_scene(serialize_scene(s)));
}

TEST(Scene, MissingFieldNamesTheField) {
  nlohmann::json j = scene_to_json(one_object_scene());
  j["objects"][0].erase("prefab_id");
  try {
    parse_scene(j.dump());
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("prefab_id"), std::string::npos);
  }
}

TEST(Scene, CategoryOutsideLabelSetRejected) {
  EXPECT_THROW(parse_scene(serialize_scene(one_object_scene()), 2), ValidationError);
  EXPECT_NO_THROW(parse_scene(serialize_scene(one_object_scene()), 3));
}

TEST(Scene, GeneratedSceneRoundTripsBitIdentically) {
  auto cfg = synth::SyntheticGenConfig::defaults();
  cfg.min_objects = 12;
  cfg.max_objects = 12;
  cfg.num_test_scenes = 3;
  const auto g = synth::generate_split(cfg, SplitName::kTest);
  const fs::path dir = fs::temp_directory_path() / "moi_scene_round_trip";
  for (const auto& gs : g.scenes) {
    ASSERT_EQ(gs.scene.objects.size(), 12u);
    const fs::path p = dir / (gs.scene.scene_id + ".json");
    save_scene(gs.scene, p);
    const Scene back = load_scene(p);
    EXPECT_EQ(back, gs.scene);
    EXPECT_EQ(serialize_scene(back), serialize_scene(gs.scene));
  }
  fs::remove_all(dir);
}

Image gradient_image(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = (x + 2 * y + c) / static_cast<double>(w + 2 * h + 3);
  return img;
}

TEST(CropObjectImages, FullImageBoxWithoutPadIsIdentity) {
  const Image img = gradient_image(16, 16);
  const std::vector<SceneObject> objs{{1, {0, 0, 16, 16}, 0, "p"}};
  const auto r = crop_object_images(img, objs, 0.0, 16);
  ASSERT_EQ(r.crops.size(), 1u);
  EXPECT_EQ(r.crops[0].region, (BoundingBox{0, 0, 16, 16}));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) EXPECT_NEAR(r.crops[0].pixels.at(x, y, 1), img.at(x, y, 1), 1e-12);
}

TEST(CropObjectImages, PadGrowsCenteredBoxByTwiceThePad) {
  const Image img = gradient_image(64, 64);
  const std::vector<SceneObject> objs{{1, {22, 27, 20, 10}, 0, "p"}};
  const auto r = crop_object_images(img, objs, 0.1, 8);
  ASSERT_EQ(r.crops.size(), 1u);
  EXPECT_DOUBLE_EQ(r.crops[0].region.w, 1.2 * 20);
  EXPECT_DOUBLE_EQ(r.crops[0].region.h, 1.2 * 10);
  EXPECT_EQ(r.crops[0].pixels.width(), 8);
  EXPECT_EQ(r.crops[0].pixels.height(), 8);
}

TEST(CropObjectImages, CornerBoxClampsToImage) {
  const Image img = gradient_image(32, 32);
  const std::vector<SceneObject> objs{{1, {0, 0, 8, 8}, 0, "p"}, {2, {24, 24, 8, 8}, 0, "p"}};
  const auto r = crop_object_images(img, objs, 0.5, 4);
  ASSERT_EQ(r.crops.size(), 2u);
  EXPECT_EQ(r.crops[0].region, (BoundingBox{0, 0, 12, 12}));
  EXPECT_EQ(r.crops[1].region, (BoundingBox{20, 20, 12, 12}));
}

TEST(CropObjectImages, DegenerateRegionIsSkippedWithWarning) {
  const Image img = gradient_image(32, 32);
  const std::vector<SceneObject> objs{{1, {4, 4, 8, 8}, 0, "p"}, {2, {10, 10, 0.5, 6}, 0, "p"}};
  const auto r = crop_object_images(img, objs, 0.0, 4);
  ASSERT_EQ(r.crops.size(), 1u);
  EXPECT_EQ(r.crops[0].object_id, 1);
  EXPECT_EQ(r.skipped, std::vector<ObjectId>{2});
  EXPECT_EQ(r.warnings.size(), 1u);
}

PairMeta meta(std::string scene, std::string dialogue, ObjectId object, std::string prefab, ObjectIdSet labels) {
  PairMeta m;
  m.scene_id = std::move(scene);
  m.dialogue_id = std::move(dialogue);
  m.object_id = object;
  m.prefab_id = std::move(prefab);
  m.label_object_ids = std::move(labels);
  return m;
}

TEST(PositiveMaskV1, SameScenePrefabIsAllTrue) {
  const std::vector<PairMeta> m{meta("s", "d1", 1, "p", {1}), meta("s", "d2", 2, "p", {2})};
  EXPECT_EQ(build_positive_mask_v1(m).count(), 4u);
}

TEST(PositiveMaskV1, PrefabScopedToScene) {
  const std::vector<PairMeta> m{meta("s1", "d1", 1, "p", {1}), meta("s2", "d2", 2, "p", {2})};
  EXPECT_EQ(build_positive_mask_v1(m), identity_mask(2));
}

TEST(PositiveMaskV2, CoLabeledObjectsOfOneDialogue) {
  const std::vector<PairMeta> m{meta("s", "d1", 1, "a", {1, 2}), meta("s", "d1", 2, "b", {1, 2})};
  EXPECT_EQ(build_positive_mask_v2(m).count(), 4u);
}

TEST(PositiveMaskV2, DistinctDialoguesGiveIdentity) {
  const std::vector<PairMeta> m{meta("s", "d1", 1, "a", {1, 2}), meta("s", "d2", 2, "a", {1, 2})};
  EXPECT_EQ(build_positive_mask_v2(m), identity_mask(2));
}

TEST(PositiveMask, RandomBatchesMatchDoubleLoopReference) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 200; ++i) {
    const auto m = oracle::random_meta(rng, 16);
    const auto v1 = build_positive_mask_v1(m);
    const auto v2 = build_positive_mask_v2(m);
    EXPECT_EQ(v1, oracle::mask_v1_reference(m));
    EXPECT_EQ(v2, oracle::mask_v2_reference(m));
    EXPECT_TRUE(v1.diagonal_all_true());
    EXPECT_TRUE(v2.diagonal_all_true());
    EXPECT_FALSE(v1.has_empty_row());
    EXPECT_FALSE(v2.has_empty_row());
  }
}

TEST(PositiveMaskV1, SymmetricProperty) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 100; ++i) {
    const auto m = oracle::random_meta(rng, 12);
    const auto v1 = build_positive_mask_v1(m);
    for (std::size_t a = 0; a < m.size(); ++a)
      for (std::size_t b = 0; b < m.size(); ++b) EXPECT_EQ(v1(a, b), v1(b, a));
  }
}

TEST(PositiveMaskV2, OffDiagonalPositivesShareDialogue) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 100; ++i) {
    const auto m = oracle::random_meta(rng, 12);
    const auto v2 = build_positive_mask_v2(m);
    for (std::size_t a = 0; a < m.size(); ++a)
      for (std::size_t b = 0; b < m.size(); ++b)
        if (a != b && v2(a, b)) EXPECT_EQ(m[a].dialogue_id, m[b].dialogue_id);
  }
}

DatasetSplit small_split() {
  DatasetSplit split;
  Scene s;
  s.scene_id = "s";
  s.image_size = {64, 64};
  for (ObjectId id = 1; id <= 10; ++id) s.objects.push_back({id, {1.0 * id, 1, 4, 4}, 0, "p"});
  split.scenes.emplace("s", s);
  split.samples.push_back({"d", 1, "U: x", "s", {2, 5, 9}});
  return split;
}

TEST(IdentificationInstances, OnePerSceneObject) {
  const auto inst = make_identification_instances(small_split());
  ASSERT_EQ(inst.size(), 10u);
  int pos = 0;
  for (const auto& i : inst) pos += i.label;
  EXPECT_EQ(pos, 3);
}

TEST(IdentificationInstances, PositiveRatioMatchesGeneratorStatistics) {
  auto cfg = synth::SyntheticGenConfig::defaults();
  cfg.num_train_scenes = 60;
  const auto g = synth::generate_split(cfg, SplitName::kTrain);
  DatasetSplit split;
  split.samples = samples_from_dialogues(g.dialogues);
  std::size_t candidates = 0;
  for (const auto& gs : g.scenes) split.scenes.emplace(gs.scene.scene_id, gs.scene);
  for (const auto& s : split.samples) candidates += split.scene(s.scene_id).objects.size();
  const auto inst = make_identification_instances(split);
  EXPECT_EQ(inst.size(), candidates);
  std::size_t pos = 0;
  for (const auto& i : inst) pos += static_cast<std::size_t>(i.label);
  EXPECT_NEAR(static_cast<double>(pos) / static_cast<double>(inst.size()), g.positive_ratio(), 1e-12);
}

TEST(DatasetSplit, ValidationCatchesUnknownSceneAndForeignLabel) {
  DatasetSplit split = small_split();
  EXPECT_NO_THROW(validate_split(split));
  split.samples[0].label_object_ids.insert(42);
  EXPECT_THROW(validate_split(split), ValidationError);
  split.samples[0].label_object_ids = {1};
  split.samples[0].scene_id = "missing";
  EXPECT_THROW(validate_split(split), ValidationError);
}

}  // namespace
}  // namespace moi
