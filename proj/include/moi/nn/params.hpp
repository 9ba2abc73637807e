#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "moi/core/error.hpp"

namespace moi::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

using ParamId = std::size_t;

// Named, ordered collection of trainable matrices.
class ParameterSet {
 public:
  ParamId add(const std::string& name, Matrix init) {
    if (index_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, values_.size());
    names_.push_back(name);
    values_.push_back(std::move(init));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const Matrix& value(ParamId id) const { return values_[id]; }
  Matrix& value(ParamId id) { return values_[id]; }
  const std::string& name(ParamId id) const { return names_[id]; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  ParamId id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, ParamId> index_;
};

// Gradient accumulators shaped like a ParameterSet.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet& params) { reset(params); }

  void reset(const ParameterSet& params) {
    grads_.resize(params.size());
    for (ParamId i = 0; i < params.size(); ++i) {
      grads_[i].setZero(params.value(i).rows(), params.value(i).cols());
    }
  }

  void zero() {
    for (auto& g : grads_) g.setZero();
  }

  std::size_t size() const { return grads_.size(); }
  Matrix& operator[](ParamId id) { return grads_[id]; }
  const Matrix& operator[](ParamId id) const { return grads_[id]; }

  void scale(double s) {
    for (auto& g : grads_) g *= s;
  }

  double norm() const {
    double s = 0.0;
    for (const auto& g : grads_) s += g.squaredNorm();
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (const auto& g : grads_) {
      if (!g.allFinite()) return false;
    }
    return true;
  }

 private:
  std::vector<Matrix> grads_;
};

inline Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace moi::nn
