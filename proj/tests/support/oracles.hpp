#pragma once

// Independent reference implementations used by the unit and acceptance
// suites. Nothing here calls the library routine it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "moi/data/masks.hpp"
#include "moi/data/types.hpp"
#include "moi/geometry/hungarian.hpp"
#include "moi/nn/tape.hpp"

namespace moi::oracle {

using Matrix = nn::Matrix;
using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

// Every one-to-one matching of size min(rows, cols), by enumerating
// permutations of the longer side.
inline void for_each_matching(std::size_t rows, std::size_t cols, const std::function<void(const Pairs&)>& fn) {
  const bool transpose = rows > cols;
  const std::size_t small = transpose ? cols : rows;
  const std::size_t large = transpose ? rows : cols;
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::set<std::vector<std::size_t>> seen;
  do {
    std::vector<std::size_t> head(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(small));
    if (!seen.insert(head).second) continue;
    Pairs p;
    for (std::size_t i = 0; i < small; ++i) p.emplace_back(transpose ? head[i] : i, transpose ? i : head[i]);
    std::sort(p.begin(), p.end());
    fn(p);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

inline double pairs_cost(const geometry::CostMatrix& c, const Pairs& p) {
  double s = 0.0;
  for (auto [i, j] : p) s += c(i, j);
  return s;
}

inline double brute_force_min_cost(const geometry::CostMatrix& c) {
  double best = std::numeric_limits<double>::infinity();
  for_each_matching(c.rows(), c.cols(), [&](const Pairs& p) { best = std::min(best, pairs_cost(c, p)); });
  return c.rows() == 0 || c.cols() == 0 ? 0.0 : best;
}

// Lexicographically smallest sorted pair list among exact-cost optima.
inline Pairs brute_force_lexmin(const geometry::CostMatrix& c) {
  const double best = brute_force_min_cost(c);
  Pairs winner;
  bool have = false;
  for_each_matching(c.rows(), c.cols(), [&](const Pairs& p) {
    if (pairs_cost(c, p) != best) return;
    if (!have || p < winner) winner = p;
    have = true;
  });
  return winner;
}

// Central finite differences of a scalar function of one matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = probe.data()[i];
    probe.data()[i] = v + h;
    const double up = f(probe);
    probe.data()[i] = v - h;
    const double down = f(probe);
    probe.data()[i] = v;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest element-wise relative error, with `floor` guarding near-zero
// entries.
inline double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-7) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

// Analytic gradient of `loss` at x through the tape.
inline Matrix tape_gradient(const std::function<nn::Var(nn::Tape&, nn::Var)>& loss, const Matrix& x) {
  nn::Tape t;
  nn::Var v = t.variable(x);
  nn::Var l = loss(t, v);
  t.backward(l);
  return t.grad(v);
}

inline double tape_value(const std::function<nn::Var(nn::Tape&, nn::Var)>& loss, const Matrix& x) {
  nn::Tape t;
  t.set_grad_enabled(false);
  return loss(t, t.constant(x)).scalar();
}

inline double gradient_error(const std::function<nn::Var(nn::Tape&, nn::Var)>& loss, const Matrix& x) {
  const Matrix analytic = tape_gradient(loss, x);
  const Matrix numeric = numeric_gradient([&](const Matrix& m) { return tape_value(loss, m); }, x);
  return max_relative_error(analytic, numeric);
}

// Symmetric cross-entropy of a square logit matrix, one scalar at a time.
inline double clip_loss_reference(const Matrix& l) {
  const Eigen::Index n = l.rows();
  double rows = 0.0, cols = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double zr = 0.0, zc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      zr += std::exp(l(i, j));
      zc += std::exp(l(j, i));
    }
    rows += std::log(zr) - l(i, i);
    cols += std::log(zc) - l(i, i);
  }
  return 0.5 * (rows / static_cast<double>(n) + cols / static_cast<double>(n));
}

inline double bce_reference(double logit, double target, double pos_weight = 1.0) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  return -(pos_weight * target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

inline double mean_bce_reference(const Matrix& logits, const Matrix& targets, double pos_weight = 1.0) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) s += bce_reference(logits.data()[i], targets.data()[i], pos_weight);
  return s / static_cast<double>(logits.size());
}

inline PositiveMask mask_v1_reference(const std::vector<PairMeta>& m) {
  PositiveMask out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      bool v = false;
      if (i == j) v = true;
      if (m[i].scene_id == m[j].scene_id && m[i].prefab_id == m[j].prefab_id) v = true;
      out.set(i, j, v);
    }
  }
  return out;
}

inline PositiveMask mask_v2_reference(const std::vector<PairMeta>& m) {
  PositiveMask out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      bool v = i == j;
      if (m[i].dialogue_id == m[j].dialogue_id) {
        for (ObjectId id : m[i].label_object_ids) v = v || id == m[j].object_id;
      }
      out.set(i, j, v);
    }
  }
  return out;
}

// Random batch metadata drawn from a handful of scenes, dialogues and
// prefabs so that collisions are common.
inline std::vector<PairMeta> random_meta(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> scene(0, 2), dialogue(0, 3), prefab(0, 3), object(1, 6), coin(0, 1);
  std::vector<PairMeta> out;
  for (std::size_t i = 0; i < n; ++i) {
    PairMeta p;
    p.scene_id = "s" + std::to_string(scene(rng));
    p.dialogue_id = "d" + std::to_string(dialogue(rng));
    p.object_id = object(rng);
    p.prefab_id = "p" + std::to_string(prefab(rng));
    p.label_object_ids.insert(p.object_id);
    for (ObjectId id = 1; id <= 6; ++id)
      if (coin(rng) != 0) p.label_object_ids.insert(id);
    out.push_back(std::move(p));
  }
  return out;
}

// Set intersection counted by membership tests over the label list.
struct PrfReference {
  double recall, precision, f1;
};

inline PrfReference score_reference(const std::vector<ObjectId>& labels, const std::vector<ObjectId>& preds) {
  if (labels.empty() && preds.empty()) return {1.0, 1.0, 1.0};
  int correct = 0;
  for (ObjectId p : preds)
    if (std::find(labels.begin(), labels.end(), p) != labels.end()) ++correct;
  const double r = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  const double p = preds.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(preds.size());
  return {r, p, r + p == 0.0 ? 0.0 : 2.0 * p * r / (p + r)};
}

// Axis-aligned IoU from corner coordinates.
inline double iou_reference(double ax, double ay, double aw, double ah, double bx, double by, double bw, double bh) {
  const double ix = std::max(0.0, std::min(ax + aw, bx + bw) - std::max(ax, bx));
  const double iy = std::max(0.0, std::min(ay + ah, by + bh) - std::max(ay, by));
  const double inter = ix * iy;
  return inter / (aw * ah + bw * bh - inter);
}

}  // namespace moi::oracle
