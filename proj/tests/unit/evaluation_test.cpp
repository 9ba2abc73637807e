#include <random>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "moi/eval/metrics.hpp"
#include "moi/harness/synthetic.hpp"

namespace moi::eval {
namespace {

ObjectIdSet random_set(std::mt19937_64& rng, int universe, double p) {
  ObjectIdSet s;
  std::bernoulli_distribution coin(p);
  for (ObjectId id = 1; id <= universe; ++id)
    if (coin(rng)) s.insert(id);
  return s;
}

TEST(ScoreSample, IdenticalSetsScoreOne) {
  const auto s = score_sample({1, 4}, {1, 4}).score;
  EXPECT_EQ(s.recall, 1.0);
  EXPECT_EQ(s.precision, 1.0);
  EXPECT_EQ(s.f1, 1.0);
}

TEST(ScoreSample, PartialOverlap) {
  const auto s = score_sample({1, 2, 3}, {2, 3, 4}).score;
  EXPECT_DOUBLE_EQ(s.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.f1, 2.0 / 3.0);
}

TEST(ScoreSample, EmptyPredictionScoresZero) {
  const auto s = score_sample({1, 2}, {}).score;
  EXPECT_EQ(s.recall, 0.0);
  EXPECT_EQ(s.precision, 0.0);
  EXPECT_EQ(s.f1, 0.0);
}

TEST(ScoreSample, BothEmptyScoresOne) {
  const auto s = score_sample({}, {}).score;
  EXPECT_EQ(s.recall, 1.0);
  EXPECT_EQ(s.precision, 1.0);
  EXPECT_EQ(s.f1, 1.0);
}

TEST(ScoreSample, EmptyLabelsWithPredictionsScoreZero) {
  const auto s = score_sample({}, {3}).score;
  EXPECT_EQ(s.recall, 0.0);
  EXPECT_EQ(s.precision, 0.0);
}

TEST(ScoreSample, MatchesSetIntersectionOracle) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5000; ++i) {
    const auto l = random_set(rng, 10, 0.3), p = random_set(rng, 10, 0.4);
    const auto got = score_sample(l, p).score;
    const auto want = oracle::score_reference({l.begin(), l.end()}, {p.begin(), p.end()});
    EXPECT_EQ(got.recall, want.recall);
    EXPECT_EQ(got.precision, want.precision);
    EXPECT_EQ(got.f1, want.f1);
  }
}

TEST(ScoreSample, HarmonicMeanAndSwapSymmetry) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 2000; ++i) {
    const auto l = random_set(rng, 8, 0.5), p = random_set(rng, 8, 0.5);
    if (l.empty() || p.empty()) continue;
    const auto a = score_sample(l, p).score;
    const auto b = score_sample(p, l).score;
    EXPECT_EQ(a.recall, b.precision);
    EXPECT_EQ(a.precision, b.recall);
    EXPECT_EQ(a.f1, b.f1);
    if (a.precision + a.recall > 0) EXPECT_DOUBLE_EQ(a.f1, 2 * a.precision * a.recall / (a.precision + a.recall));
    EXPECT_LE(a.f1, (a.precision + a.recall) / 2 + 1e-15);
  }
}

TEST(ScoreSample, AddingPredictionsMovesScoresMonotonically) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto l = random_set(rng, 10, 0.4);
    auto p = random_set(rng, 10, 0.3);
    if (l.empty()) continue;
    const auto before = score_sample(l, p).score;
    ObjectIdSet correct = p, wrong = p;
    correct.insert(*l.begin());
    wrong.insert(100);
    EXPECT_GE(score_sample(l, correct).score.recall, before.recall);
    EXPECT_LE(score_sample(l, wrong).score.precision, before.precision);
  }
}

TEST(Aggregate, SingleSampleMicroEqualsMacro) {
  const std::vector<SampleScore> s{score_sample({1, 2, 3}, {2, 5})};
  const auto r = aggregate(s);
  EXPECT_EQ(r.micro.recall, r.macro.recall);
  EXPECT_EQ(r.micro.precision, r.macro.precision);
  EXPECT_EQ(r.micro.f1, r.macro.f1);
}

TEST(Aggregate, PerfectSamplesGiveOnes) {
  const std::vector<SampleScore> s{score_sample({1}, {1}), score_sample({7, 8}, {7, 8})};
  const auto r = aggregate(s);
  EXPECT_EQ(r.macro.f1, 1.0);
  EXPECT_EQ(r.micro.f1, 1.0);
}

TEST(Aggregate, EmptyInputRejected) { EXPECT_THROW(aggregate({}), InvalidInput); }

TEST(Aggregate, MicroMatchesPooledCountReference) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<SampleScore> scores;
    std::size_t labels = 0, preds = 0, correct = 0;
    double macro_r = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto l = random_set(rng, 8, 0.4), p = random_set(rng, 8, 0.4);
      for (ObjectId id : p) correct += l.count(id);
      labels += l.size();
      preds += p.size();
      scores.push_back(score_sample(l, p));
      macro_r += scores.back().score.recall / 20.0;
    }
    const auto r = aggregate(scores);
    const double mr = labels == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels);
    const double mp = preds == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(preds);
    EXPECT_DOUBLE_EQ(r.micro.recall, mr);
    EXPECT_DOUBLE_EQ(r.micro.precision, mp);
    EXPECT_DOUBLE_EQ(r.micro.f1, mp + mr == 0 ? 0.0 : 2 * mp * mr / (mp + mr));
    EXPECT_NEAR(r.macro.recall, macro_r, 1e-12);
    EXPECT_EQ(r.counts.correct, correct);
  }
}

Scene scene_of(int n) {
  Scene s;
  s.scene_id = "s";
  s.image_size = {64, 64};
  for (ObjectId id = 1; id <= n; ++id) s.objects.push_back({id, {1.0 * id, 1, 3, 3}, 0, "p"});
  return s;
}

TEST(Heuristics, Definitions) {
  std::mt19937_64 rng(5);
  const Scene s = scene_of(6);
  EXPECT_TRUE(heuristic_predict(Heuristic::kNoObject, s, rng).empty());
  EXPECT_EQ(heuristic_predict(Heuristic::kAllObjects, s, rng), s.object_ids());
  const auto r = heuristic_predict(Heuristic::kRandom, s, rng);
  EXPECT_TRUE(std::includes(s.object_ids().begin(), s.object_ids().end(), r.begin(), r.end()));
  EXPECT_THROW(parse_heuristic("most_salient"), InvalidInput);
  for (auto h : {Heuristic::kNoObject, Heuristic::kAllObjects, Heuristic::kRandom}) EXPECT_EQ(parse_heuristic(to_string(h)), h);
}

TEST(Heuristics, BaselinesOnSyntheticSplit) {
  auto cfg = synth::SyntheticGenConfig::defaults();
  cfg.num_test_scenes = 300;
  const auto g = synth::generate_split(cfg, SplitName::kTest);
  std::map<std::string, const Scene*> scenes;
  for (const auto& gs : g.scenes) scenes[gs.scene.scene_id] = &gs.scene;
  std::mt19937_64 rng(6);
  std::vector<SampleScore> all, none, random;
  std::size_t total_objects = 0, total_labels = 0;
  for (const auto& s : samples_from_dialogues(g.dialogues)) {
    const Scene& scene = *scenes.at(s.scene_id);
    all.push_back(score_sample(s.label_object_ids, heuristic_predict(Heuristic::kAllObjects, scene, rng)));
    none.push_back(score_sample(s.label_object_ids, heuristic_predict(Heuristic::kNoObject, scene, rng)));
    random.push_back(score_sample(s.label_object_ids, heuristic_predict(Heuristic::kRandom, scene, rng)));
    EXPECT_EQ(all.back().score.recall, 1.0);
    EXPECT_EQ(none.back().score.f1, 0.0);
    total_objects += scene.objects.size();
    total_labels += s.label_object_ids.size();
  }
  EXPECT_DOUBLE_EQ(aggregate(all).micro.precision, static_cast<double>(total_labels) / static_cast<double>(total_objects));
  EXPECT_EQ(aggregate(none).macro.recall, 0.0);
  // About 1300 samples: four standard errors of a fair coin average.
  EXPECT_NEAR(aggregate(random).macro.recall, 0.5, 0.05);
}

TEST(Aggregate, PrecisionEqualsRecallFlag) {
  const std::vector<SampleScore> equal{score_sample({1, 2}, {2, 3}), score_sample({}, {4})};
  EXPECT_TRUE(aggregate(equal).precision_equals_recall);
  const std::vector<SampleScore> unequal{score_sample({1, 2}, {2})};
  EXPECT_FALSE(aggregate(unequal).precision_equals_recall);
}

TEST(FormatTable, OneRowPerReport) {
  const std::vector<SampleScore> s{score_sample({1, 2}, {2})};
  std::vector<MetricReport> reports{aggregate(s, "a"), aggregate(s, "b")};
  const std::string t = format_table(reports);
  EXPECT_NE(t.find("a "), std::string::npos);
  EXPECT_NE(t.find("50.00%"), std::string::npos);
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 4);
}

}  // namespace
}  // namespace moi::eval
