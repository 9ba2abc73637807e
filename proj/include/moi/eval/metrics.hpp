#pragma once

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moi/core/error.hpp"
#include "moi/data/types.hpp"

namespace moi::eval {

struct SetCounts {
  std::size_t labels = 0;
  std::size_t predictions = 0;
  std::size_t correct = 0;
};

struct PrfScore {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

// Recall, precision and F1 from counts. Empty denominators give 0, except
// that an empty label set matched by an empty prediction scores 1 everywhere.
inline PrfScore score_counts(const SetCounts& c) {
  if (c.labels == 0 && c.predictions == 0) return {1.0, 1.0, 1.0};
  PrfScore s;
  s.recall = c.labels == 0 ? 0.0 : static_cast<double>(c.correct) / static_cast<double>(c.labels);
  s.precision = c.predictions == 0 ? 0.0 : static_cast<double>(c.correct) / static_cast<double>(c.predictions);
  s.f1 = (s.precision + s.recall) == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

inline SetCounts count_sets(const ObjectIdSet& labels, const ObjectIdSet& predictions) {
  SetCounts c{labels.size(), predictions.size(), 0};
  for (ObjectId id : predictions) c.correct += labels.count(id);
  return c;
}

struct SampleScore {
  PrfScore score;
  SetCounts counts;
};

inline SampleScore score_sample(const ObjectIdSet& labels, const ObjectIdSet& predictions) {
  const SetCounts c = count_sets(labels, predictions);
  return {score_counts(c), c};
}

struct MetricReport {
  std::string strategy;
  std::vector<PrfScore> per_sample;
  PrfScore micro;
  PrfScore macro;
  SetCounts counts;
  // Every sample with a non-empty label set has precision == recall.
  bool precision_equals_recall = false;

  nlohmann::json to_json() const {
    auto prf = [](const PrfScore& s) {
      return nlohmann::json{{"recall", s.recall}, {"precision", s.precision}, {"f1", s.f1}};
    };
    return {{"strategy", strategy},
            {"num_samples", per_sample.size()},
            {"macro", prf(macro)},
            {"micro", prf(micro)},
            {"counts",
             {{"total_labels", counts.labels}, {"total_predictions", counts.predictions}, {"total_correct", counts.correct}}},
            {"precision_equals_recall", precision_equals_recall}};
  }
};

inline MetricReport aggregate(std::span<const SampleScore> samples, std::string strategy = {}) {
  if (samples.empty()) throw InvalidInput("cannot aggregate an empty sample list");
  MetricReport r;
  r.strategy = std::move(strategy);
  r.precision_equals_recall = true;
  for (const auto& s : samples) {
    r.per_sample.push_back(s.score);
    r.macro.recall += s.score.recall;
    r.macro.precision += s.score.precision;
    r.macro.f1 += s.score.f1;
    r.counts.labels += s.counts.labels;
    r.counts.predictions += s.counts.predictions;
    r.counts.correct += s.counts.correct;
    if (s.counts.labels > 0 && s.score.precision != s.score.recall) r.precision_equals_recall = false;
  }
  const double n = static_cast<double>(samples.size());
  r.macro.recall /= n;
  r.macro.precision /= n;
  r.macro.f1 /= n;
  r.micro = score_counts(r.counts);
  return r;
}

enum class Heuristic { kNoObject, kAllObjects, kRandom };

inline Heuristic parse_heuristic(std::string_view s) {
  if (s == "no_object") return Heuristic::kNoObject;
  if (s == "all_objects") return Heuristic::kAllObjects;
  if (s == "random") return Heuristic::kRandom;
  throw InvalidInput("unknown heuristic '" + std::string(s) + "'");
}

inline std::string_view to_string(Heuristic h) {
  switch (h) {
    case Heuristic::kNoObject: return "no_object";
    case Heuristic::kAllObjects: return "all_objects";
    case Heuristic::kRandom: return "random";
  }
  return "no_object";
}

inline ObjectIdSet heuristic_predict(Heuristic kind, const Scene& scene, std::mt19937_64& rng) {
  ObjectIdSet out;
  switch (kind) {
    case Heuristic::kNoObject:
      break;
    case Heuristic::kAllObjects:
      out = scene.object_ids();
      break;
    case Heuristic::kRandom: {
      std::bernoulli_distribution coin(0.5);
      for (const auto& o : scene.objects) {
        if (coin(rng)) out.insert(o.object_id);
      }
      break;
    }
  }
  return out;
}

// Plain-text table with one row per report.
inline std::string format_table(std::span<const MetricReport> reports) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "strategy" << std::right << std::setw(10) << "recall" << std::setw(11)
     << "precision" << std::setw(10) << "f1" << std::setw(12) << "micro-f1" << "\n";
  os << std::string(67, '-') << "\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& r : reports) {
    os << std::left << std::setw(24) << r.strategy << std::right << std::setw(9) << 100.0 * r.macro.recall << "%"
       << std::setw(10) << 100.0 * r.macro.precision << "%" << std::setw(9) << 100.0 * r.macro.f1 << "%"
       << std::setw(11) << 100.0 * r.micro.f1 << "%\n";
  }
  return os.str();
}

}  // namespace moi::eval
