#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "moi/core/error.hpp"

namespace moi::geometry {

// Dense n_pred x n_target cost matrix, row major.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static CostMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    CostMatrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw InvalidInput("ragged cost matrix");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  CostMatrix transposed() const {
    CostMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Assignment {
  // (pred_index, target_index), sorted by pred_index.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  double total_cost(const CostMatrix& cost) const {
    double s = 0.0;
    for (auto [r, c] : pairs) s += cost(r, c);
    return s;
  }

  // target index -> pred index, or npos when the target is unmatched.
  std::vector<std::size_t> pred_for_target(std::size_t n_target) const {
    std::vector<std::size_t> out(n_target, npos);
    for (auto [r, c] : pairs) out[c] = r;
    return out;
  }

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
};

namespace detail {

// Shortest augmenting path Hungarian method for rows <= cols. Returns the
// column assigned to every row.
inline std::vector<std::size_t> solve_rows_le_cols(const CostMatrix& a) {
  const std::size_t n = a.rows();
  const std::size_t m = a.cols();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

// Minimum-cost matching of size min(rows, cols). Pairs are (row, col).
inline std::vector<std::pair<std::size_t, std::size_t>> solve(const CostMatrix& a) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (a.empty()) return pairs;
  if (a.rows() <= a.cols()) {
    const auto r2c = solve_rows_le_cols(a);
    for (std::size_t r = 0; r < r2c.size(); ++r) pairs.emplace_back(r, r2c[r]);
  } else {
    const auto c2r = solve_rows_le_cols(a.transposed());
    for (std::size_t c = 0; c < c2r.size(); ++c) pairs.emplace_back(c2r[c], c);
    std::sort(pairs.begin(), pairs.end());
  }
  return pairs;
}

}  // namespace detail

// Optimal one-to-one assignment of size min(n_pred, n_target). Among several
// optimal assignments the lexicographically smallest list of
// (pred_index, target_index) pairs is returned.
inline Assignment hungarian_assign(const CostMatrix& cost) {
  Assignment out;
  if (cost.empty()) return out;
  if (!cost.all_finite()) throw InvalidInput("cost matrix has non-finite entries");

  const std::size_t n_rows = cost.rows();
  const std::size_t n_cols = cost.cols();
  const bool rows_may_skip = n_rows > n_cols;

  double scale = 1.0;
  for (std::size_t i = 0; i < n_rows; ++i)
    for (std::size_t j = 0; j < n_cols; ++j) scale = std::max(scale, std::abs(cost(i, j)));
  const double tol = 1e-9 * scale * static_cast<double>(std::min(n_rows, n_cols));

  auto initial = detail::solve(cost);
  double optimum = 0.0;
  for (auto [r, c] : initial) optimum += cost(r, c);

  // cur_col[r]: column of row r in an optimal assignment consistent with the
  // decisions taken so far, or npos when r is unmatched there.
  std::vector<std::size_t> cur_col(n_rows, Assignment::npos);
  for (auto [r, c] : initial) cur_col[r] = c;

  std::vector<bool> col_used(n_cols, false);
  double fixed_cost = 0.0;

  // Best completion over rows > r and unused columns, after tentatively
  // taking column `take` (npos = row r stays unmatched). Returns the completed
  // row->col vector when it reaches the optimum.
  auto completion = [&](std::size_t r, std::size_t take) -> std::optional<std::vector<std::size_t>> {
    std::vector<std::size_t> rows;
    std::vector<std::size_t> cols;
    for (std::size_t i = r + 1; i < n_rows; ++i) rows.push_back(i);
    for (std::size_t j = 0; j < n_cols; ++j)
      if (!col_used[j] && j != take) cols.push_back(j);
    if (rows_may_skip && rows.size() < cols.size()) return std::nullopt;
    CostMatrix sub(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols.size(); ++j) sub(i, j) = cost(rows[i], cols[j]);
    double total = fixed_cost + (take == Assignment::npos ? 0.0 : cost(r, take));
    std::vector<std::size_t> result(n_rows, Assignment::npos);
    for (auto [i, j] : detail::solve(sub)) {
      total += sub(i, j);
      result[rows[i]] = cols[j];
    }
    if (total > optimum + tol) return std::nullopt;
    return result;
  };

  for (std::size_t r = 0; r < n_rows; ++r) {
    std::size_t chosen = cur_col[r];
    // Any unused column smaller than the current choice wins if it still
    // admits an optimal completion. An unmatched row sorts after every column.
    for (std::size_t j = 0; j < n_cols; ++j) {
      if (col_used[j]) continue;
      if (chosen != Assignment::npos && j >= chosen) break;
      if (auto rest = completion(r, j)) {
        chosen = j;
        for (std::size_t i = r + 1; i < n_rows; ++i) cur_col[i] = (*rest)[i];
        break;
      }
    }
    if (chosen != Assignment::npos) {
      col_used[chosen] = true;
      fixed_cost += cost(r, chosen);
      out.pairs.emplace_back(r, chosen);
    } else if (!rows_may_skip) {
      throw Error("hungarian_assign: internal inconsistency");
    }
  }
  return out;
}

}  // namespace moi::geometry
