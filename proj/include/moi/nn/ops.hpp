#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "moi/nn/tape.hpp"

namespace moi::nn {

namespace detail {

inline void check_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw InvalidInput("vars belong to different tapes");
}

// Broadcast `b` (r x c, 1 x c, r x 1 or 1 x 1) to r x c.
inline Matrix expand(const Matrix& b, Eigen::Index rows, Eigen::Index cols) {
  if (b.rows() == rows && b.cols() == cols) return b;
  if (b.rows() == 1 && b.cols() == cols) return b.replicate(rows, 1);
  if (b.cols() == 1 && b.rows() == rows) return b.replicate(1, cols);
  if (b.rows() == 1 && b.cols() == 1) return Matrix::Constant(rows, cols, b(0, 0));
  throw InvalidInput("shapes are not broadcast compatible");
}

// Sum a full-shape gradient back down to the broadcast operand's shape.
inline Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == g.cols()) return g.colwise().sum();
  if (cols == 1 && rows == g.rows()) return g.rowwise().sum();
  Matrix s(1, 1);
  s(0, 0) = g.sum();
  return s;
}

inline bool any_grad(Var a) { return a.needs_grad(); }
inline bool any_grad(Var a, Var b) { return a.needs_grad() || b.needs_grad(); }

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dimensions differ");
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.needs_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * g;
  });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.cols()) throw InvalidInput("matmul_nt: inner dimensions differ");
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.needs_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib);
    if (t.needs_grad(ib)) t.grad_buffer(ib).noalias() += g.transpose() * t.value(ia);
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.push(a.value().transpose(), a.needs_grad(), [ia](Tape& t, int self) {
    t.grad_buffer(ia) += t.grad_buffer(self).transpose();
  });
}

// Elementwise a + b with b broadcast to a's shape.
inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  Tape& t = *a.tape();
  Matrix out = a.value() + detail::expand(b.value(), a.rows(), a.cols());
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.needs_grad(ia)) t.grad_buffer(ia) += g;
    if (t.needs_grad(ib)) {
      const Matrix& bv = t.value(ib);
      t.grad_buffer(ib) += detail::reduce_to(g, bv.rows(), bv.cols());
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  Tape& t = *a.tape();
  Matrix out = a.value() - detail::expand(b.value(), a.rows(), a.cols());
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.needs_grad(ia)) t.grad_buffer(ia) += g;
    if (t.needs_grad(ib)) {
      const Matrix& bv = t.value(ib);
      t.grad_buffer(ib) -= detail::reduce_to(g, bv.rows(), bv.cols());
    }
  });
}

// Elementwise product with b broadcast to a's shape.
inline Var mul(Var a, Var b) {
  detail::check_same_tape(a, b);
  Tape& t = *a.tape();
  Matrix bx = detail::expand(b.value(), a.rows(), a.cols());
  Matrix out = a.value().cwiseProduct(bx);
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    if (t.needs_grad(ia)) t.grad_buffer(ia) += g.cwiseProduct(detail::expand(bv, av.rows(), av.cols()));
    if (t.needs_grad(ib)) {
      t.grad_buffer(ib) += detail::reduce_to(g.cwiseProduct(av), bv.rows(), bv.cols());
    }
  });
}

// Elementwise a / b, same shapes.
inline Var div(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("div: shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value().cwiseQuotient(b.value());
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), detail::any_grad(a, b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& bv = t.value(ib);
    if (t.needs_grad(ia)) t.grad_buffer(ia) += g.cwiseQuotient(bv);
    if (t.needs_grad(ib)) {
      t.grad_buffer(ib) -= g.cwiseProduct(t.value(self)).cwiseQuotient(bv);
    }
  });
}

// alpha * a + beta
inline Var affine(Var a, double alpha, double beta = 0.0) {
  Tape& t = *a.tape();
  Matrix out = (alpha * a.value()).array() + beta;
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia, alpha](Tape& t, int self) {
    t.grad_buffer(ia) += alpha * t.grad_buffer(self);
  });
}

inline Var scale(Var a, double s) { return affine(a, s, 0.0); }

namespace detail {

// Elementwise min/max; the gradient flows to the selected operand (a on ties).
inline Var select_extreme(Var a, Var b, bool take_min) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("min/max: shape mismatch");
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out = take_min ? Matrix(av.cwiseMin(bv)) : Matrix(av.cwiseMax(bv));
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), any_grad(a, b), [ia, ib, take_min](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    const bool ga = t.needs_grad(ia), gb = t.needs_grad(ib);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const bool pick_a = take_min ? av.data()[i] <= bv.data()[i] : av.data()[i] >= bv.data()[i];
      if (pick_a) {
        if (ga) t.grad_buffer(ia).data()[i] += g.data()[i];
      } else if (gb) {
        t.grad_buffer(ib).data()[i] += g.data()[i];
      }
    }
  });
}

template <class F, class DF>
Var unary(Var a, F f, DF df_from_x_y) {
  Tape& t = *a.tape();
  Matrix out = a.value().unaryExpr(f);
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia, df_from_x_y](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(self);
    Matrix& gx = t.grad_buffer(ia);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      gx.data()[i] += g.data()[i] * df_from_x_y(x.data()[i], y.data()[i]);
    }
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var emin(Var a, Var b) { return detail::select_extreme(a, b, true); }
inline Var emax(Var a, Var b) { return detail::select_extreme(a, b, false); }

inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return detail::stable_sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var abs(Var a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(Var a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia](Tape& t, int self) {
    t.grad_buffer(ia).array() += t.grad_buffer(self)(0, 0);
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// Column means over rows: (r x c) -> (1 x c).
inline Var mean_rows(Var a) {
  Tape& t = *a.tape();
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() * inv;
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia, inv](Tape& t, int self) {
    Matrix& ga = t.grad_buffer(ia);
    ga.rowwise() += t.grad_buffer(self).row(0) * inv;
  });
}

// Row sums: (r x c) -> (r x 1).
inline Var sum_cols(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise().sum();
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia](Tape& t, int self) {
    Matrix& ga = t.grad_buffer(ia);
    ga.colwise() += t.grad_buffer(self).col(0);
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw InvalidInput("slice_cols out of range");
  Tape& t = *a.tape();
  Matrix out = a.value().middleCols(start, count);
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia, start, count](Tape& t, int self) {
    t.grad_buffer(ia).middleCols(start, count) += t.grad_buffer(self);
  });
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw InvalidInput("slice_rows out of range");
  Tape& t = *a.tape();
  Matrix out = a.value().middleRows(start, count);
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia, start, count](Tape& t, int self) {
    t.grad_buffer(ia).middleRows(start, count) += t.grad_buffer(self);
  });
}

// Gathers rows by index (embedding lookup). Indices may repeat.
inline Var select_rows(Var a, std::vector<Eigen::Index> idx) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix out(static_cast<Eigen::Index>(idx.size()), av.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= av.rows()) throw InvalidInput("select_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(idx[i]);
  }
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat_cols of nothing");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool grad = false;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw InvalidInput("concat_cols: row mismatch");
    cols += p.cols();
    grad = grad || p.needs_grad();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    ids.push_back(p.id());
  }
  return t.push(std::move(out), grad, [ids](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    Eigen::Index c = 0;
    for (int id : ids) {
      const Eigen::Index w = t.value(id).cols();
      if (t.needs_grad(id)) t.grad_buffer(id) += g.middleCols(c, w);
      c += w;
    }
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat_rows of nothing");
  Tape& t = *parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool grad = false;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw InvalidInput("concat_rows: column mismatch");
    rows += p.rows();
    grad = grad || p.needs_grad();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    ids.push_back(p.id());
  }
  return t.push(std::move(out), grad, [ids](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    Eigen::Index r = 0;
    for (int id : ids) {
      const Eigen::Index h = t.value(id).rows();
      if (t.needs_grad(id)) t.grad_buffer(id) += g.middleRows(r, h);
      r += h;
    }
  });
}

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_buffer(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

// Normalises every row to zero mean and unit variance (no affine part).
inline Var layer_norm_rows(Var a, double eps = 1e-5) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  const Eigen::Index n = x.cols();
  Matrix out(x.rows(), n);
  Matrix inv_std(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r, 0) = 1.0 / std::sqrt(var + eps);
    out.row(r) = (x.row(r).array() - mu) * inv_std(r, 0);
  }
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia, inv_std](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_buffer(ia);
    const double n = static_cast<double>(y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double gm = g.row(r).mean();
      const double gy = g.row(r).dot(y.row(r)) / n;
      ga.row(r).array() += inv_std(r, 0) * (g.row(r).array() - gm - y.row(r).array() * gy);
    }
  });
}

inline Var l2_normalize_rows(Var a, double eps = 1e-12) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix norms(x.rows(), 1);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    norms(r, 0) = std::max(x.row(r).norm(), eps);
    out.row(r) = x.row(r) / norms(r, 0);
  }
  const int ia = a.id();
  return t.push(std::move(out), a.needs_grad(), [ia, norms](Tape& t, int self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_buffer(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double d = g.row(r).dot(y.row(r));
      ga.row(r) += (g.row(r) - d * y.row(r)) / norms(r, 0);
    }
  });
}

// Weighted mean cross-entropy of row logits against integer targets:
// sum_i w[t_i] * CE_i / sum_i w[t_i]. Empty weights means uniform.
inline Var cross_entropy_rows(Var logits, std::vector<int> targets, std::vector<double> class_weights = {}) {
  Tape& t = *logits.tape();
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows()) throw InvalidInput("cross_entropy: target count mismatch");
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  double wsum = 0.0;
  std::vector<double> w(targets.size(), 1.0);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int k = targets[static_cast<std::size_t>(r)];
    if (k < 0 || k >= z.cols()) throw InvalidInput("cross_entropy: target out of range");
    if (!class_weights.empty()) w[static_cast<std::size_t>(r)] = class_weights[static_cast<std::size_t>(k)];
    const double m = z.row(r).maxCoeff();
    const double lse = m + std::log((z.row(r).array() - m).exp().sum());
    probs.row(r) = (z.row(r).array() - lse).exp();
    total += w[static_cast<std::size_t>(r)] * (lse - z(r, k));
    wsum += w[static_cast<std::size_t>(r)];
  }
  if (wsum <= 0.0) throw InvalidInput("cross_entropy: zero total weight");
  Matrix out(1, 1);
  out(0, 0) = total / wsum;
  const int il = logits.id();
  return t.push(std::move(out), logits.needs_grad(),
                [il, probs = std::move(probs), targets = std::move(targets), w = std::move(w), wsum](Tape& t, int self) {
                  const double g = t.grad_buffer(self)(0, 0);
                  Matrix& gl = t.grad_buffer(il);
                  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                    const double s = g * w[static_cast<std::size_t>(r)] / wsum;
                    gl.row(r) += s * probs.row(r);
                    gl(r, targets[static_cast<std::size_t>(r)]) -= s;
                  }
                });
}

// Mean binary cross-entropy with logits over every cell. `targets` holds
// values in [0, 1]; positive terms are multiplied by pos_weight.
inline Var bce_with_logits(Var logits, const Matrix& targets, double pos_weight = 1.0) {
  Tape& t = *logits.tape();
  const Matrix& z = logits.value();
  if (targets.rows() != z.rows() || targets.cols() != z.cols()) throw InvalidInput("bce: shape mismatch");
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double x = z.data()[i];
    const double y = targets.data()[i];
    // log(sigmoid(x)) and log(1 - sigmoid(x)) in overflow-safe form.
    const double softplus_neg = std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    const double log_p = -softplus_neg;
    const double log_q = -x - softplus_neg;
    total -= pos_weight * y * log_p + (1.0 - y) * log_q;
  }
  Matrix out(1, 1);
  out(0, 0) = total / n;
  const int il = logits.id();
  return t.push(std::move(out), logits.needs_grad(), [il, targets, pos_weight, n](Tape& t, int self) {
    const double g = t.grad_buffer(self)(0, 0) / n;
    const Matrix& z = t.value(il);
    Matrix& gl = t.grad_buffer(il);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double s = detail::stable_sigmoid(z.data()[i]);
      const double y = targets.data()[i];
      // d/dx of -(w y log s + (1 - y) log(1 - s))
      gl.data()[i] += g * (-pos_weight * y * (1.0 - s) + (1.0 - y) * s);
    }
  });
}

}  // namespace moi::nn
