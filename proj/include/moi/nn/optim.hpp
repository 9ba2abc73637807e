#pragma once

#include <cmath>
#include <vector>

#include "moi/nn/params.hpp"

namespace moi::nn {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(const ParameterSet& params, AdamWOptions opt = {}) : opt_(opt) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (ParamId i = 0; i < params.size(); ++i) {
      m_.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
      v_.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
    }
  }

  void step(ParameterSet& params, const Gradients& grads, double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(steps_));
    for (ParamId i = 0; i < params.size(); ++i) {
      Matrix& p = params.value(i);
      const Matrix& g = grads[i];
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseAbs2();
      p *= (1.0 - lr * opt_.weight_decay);
      p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opt_.eps);
    }
  }

  long steps() const { return steps_; }

 private:
  AdamWOptions opt_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long steps_ = 0;
};

// lr_0 * (1 - epoch / max_epochs), reaching zero after the last epoch.
inline double linear_decay_lr(double lr0, int epoch, int max_epochs) {
  if (max_epochs <= 0) return lr0;
  return lr0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(max_epochs));
}

// Rescales the gradients in place when their global norm exceeds max_norm.
inline double clip_grad_norm(Gradients& grads, double max_norm) {
  const double n = grads.norm();
  if (max_norm > 0.0 && n > max_norm) grads.scale(max_norm / (n + 1e-12));
  return n;
}

}  // namespace moi::nn
