#pragma once

#include <algorithm>
#include <numeric>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moi/core/error.hpp"

namespace moi::alignment {

using IndexSet = std::set<std::size_t>;

// {j : sigmoid(logit_j) >= threshold}. For the default 0.5 this is the sign
// test logit_j >= 0.
inline IndexSet infer_sigmoid(std::span<const double> row, double threshold = 0.5) {
  IndexSet out;
  if (threshold == 0.5) {
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] >= 0.0) out.insert(j);
    return out;
  }
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (1.0 / (1.0 + std::exp(-row[j])) >= threshold) out.insert(j);
  }
  return out;
}

// {j : logit_j > mean(row)}.
inline IndexSet infer_mean_threshold(std::span<const double> row) {
  IndexSet out;
  if (row.empty()) return out;
  const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
  for (std::size_t j = 0; j < row.size(); ++j)
    if (row[j] > mean) out.insert(j);
  return out;
}

// Indices of the k largest logits, ties to the lower index.
inline IndexSet infer_oracle(std::span<const double> row, std::size_t k) {
  if (k > row.size()) {
    throw InvalidInput("oracle k=" + std::to_string(k) + " exceeds row length " + std::to_string(row.size()));
  }
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return IndexSet(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
}

enum class InferenceStrategy { kSigmoid, kMean, kOracle };

inline InferenceStrategy parse_strategy(std::string_view s) {
  if (s == "sigmoid") return InferenceStrategy::kSigmoid;
  if (s == "mean") return InferenceStrategy::kMean;
  if (s == "oracle") return InferenceStrategy::kOracle;
  throw InvalidInput("unknown inference strategy '" + std::string(s) + "'");
}

inline std::string_view to_string(InferenceStrategy s) {
  switch (s) {
    case InferenceStrategy::kSigmoid: return "sigmoid";
    case InferenceStrategy::kMean: return "mean";
    case InferenceStrategy::kOracle: return "oracle";
  }
  return "sigmoid";
}

// k is only read by the oracle strategy.
inline IndexSet infer(InferenceStrategy s, std::span<const double> row, std::size_t k = 0) {
  switch (s) {
    case InferenceStrategy::kSigmoid: return infer_sigmoid(row);
    case InferenceStrategy::kMean: return infer_mean_threshold(row);
    case InferenceStrategy::kOracle: return infer_oracle(row, k);
  }
  return {};
}

}  // namespace moi::alignment
