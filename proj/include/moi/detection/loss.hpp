#pragma once

#include <optional>
#include <span>
#include <vector>

#include "moi/detection/detector.hpp"
#include "moi/geometry/box.hpp"
#include "moi/geometry/hungarian.hpp"

namespace moi::detection {

struct DetectionTarget {
  int category = 0;
  geometry::Box4 box{};  // normalized cx, cy, w, h
};

inline std::vector<DetectionTarget> targets_from_objects(std::span<const SceneObject> objects, ImageSize image) {
  std::vector<DetectionTarget> out;
  out.reserve(objects.size());
  for (const auto& o : objects) out.push_back({o.category, geometry::to_normalized(o.box, image)});
  return out;
}

struct LossWeights {
  double class_weight = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
  double no_object = 0.1;
};

inline geometry::Box4 box_row(const Matrix& boxes, Eigen::Index r) {
  return {boxes(r, 0), boxes(r, 1), boxes(r, 2), boxes(r, 3)};
}

inline double l1_distance(const geometry::Box4& a, const geometry::Box4& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]) + std::abs(a[3] - b[3]);
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    p.row(r).array() -= p.row(r).maxCoeff();
    p.row(r) = p.row(r).array().exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

// cost[q][t] = -class_weight * p_q(c_t) + l1 * |b_q - b_t|_1 + giou * (1 - GIoU(b_q, b_t)).
// With include_class = false the class term is dropped.
inline geometry::CostMatrix detection_matching_cost(const Matrix& class_logits, const Matrix& boxes,
                                                    std::span<const DetectionTarget> targets,
                                                    const LossWeights& w = {}, bool include_class = true) {
  geometry::CostMatrix cost(static_cast<std::size_t>(boxes.rows()), targets.size());
  const Matrix probs = include_class ? softmax_rows(class_logits) : Matrix();
  for (Eigen::Index q = 0; q < boxes.rows(); ++q) {
    const geometry::Box4 bq = box_row(boxes, q);
    const BoundingBox pq = geometry::from_cxcywh(bq);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      double c = w.l1 * l1_distance(bq, targets[t].box) +
                 w.giou * (1.0 - geometry::generalized_iou(pq, geometry::from_cxcywh(targets[t].box)));
      if (include_class) c -= w.class_weight * probs(q, targets[t].category);
      cost(static_cast<std::size_t>(q), t) = c;
    }
  }
  return cost;
}

inline geometry::CostMatrix detection_matching_cost(const DetectionOutput& pred, std::span<const DetectionTarget> targets,
                                                    const LossWeights& w = {}, bool include_class = true) {
  return detection_matching_cost(pred.class_logits, pred.boxes, targets, w, include_class);
}

// GIoU between matching rows of two M x 4 cxcywh boxes, as an M x 1 var.
inline Var giou_rows(Var a, Var b) {
  auto corners = [](Var box) {
    Var cx = nn::slice_cols(box, 0, 1), cy = nn::slice_cols(box, 1, 1);
    Var hw = nn::scale(nn::slice_cols(box, 2, 1), 0.5), hh = nn::scale(nn::slice_cols(box, 3, 1), 0.5);
    return std::array<Var, 4>{nn::sub(cx, hw), nn::sub(cy, hh), nn::add(cx, hw), nn::add(cy, hh)};
  };
  const auto ca = corners(a);
  const auto cb = corners(b);
  Var area_a = nn::mul(nn::slice_cols(a, 2, 1), nn::slice_cols(a, 3, 1));
  Var area_b = nn::mul(nn::slice_cols(b, 2, 1), nn::slice_cols(b, 3, 1));
  Var iw = nn::relu(nn::sub(nn::emin(ca[2], cb[2]), nn::emax(ca[0], cb[0])));
  Var ih = nn::relu(nn::sub(nn::emin(ca[3], cb[3]), nn::emax(ca[1], cb[1])));
  Var inter = nn::mul(iw, ih);
  Var uni = nn::sub(nn::add(area_a, area_b), inter);
  Var ew = nn::sub(nn::emax(ca[2], cb[2]), nn::emin(ca[0], cb[0]));
  Var eh = nn::sub(nn::emax(ca[3], cb[3]), nn::emin(ca[1], cb[1]));
  Var enclosing = nn::mul(ew, eh);
  return nn::sub(nn::div(inter, uni), nn::div(nn::sub(enclosing, uni), enclosing));
}

struct DetectionLoss {
  Var total;
  Var class_loss;
  Var l1_loss;
  Var giou_loss;
  geometry::Assignment assignment;
};

// Set-prediction loss: Hungarian matching on detection_matching_cost, then
// weighted cross-entropy over every query (unmatched queries target the
// "no object" class at weight no_object) plus L1 and 1 - GIoU over matched
// pairs, each averaged over the number of targets. Pass `fixed` to reuse a
// precomputed assignment.
inline DetectionLoss detection_loss(nn::Tape& t, Var class_logits, Var boxes, std::span<const DetectionTarget> targets,
                                    const LossWeights& w = {},
                                    const std::optional<geometry::Assignment>& fixed = std::nullopt) {
  const Eigen::Index nq = class_logits.rows();
  const int no_object = static_cast<int>(class_logits.cols()) - 1;
  DetectionLoss out;
  if (!targets.empty()) {
    out.assignment = fixed ? *fixed
                           : geometry::hungarian_assign(
                                 detection_matching_cost(class_logits.value(), boxes.value(), targets, w, true));
  }
  std::vector<int> labels(static_cast<std::size_t>(nq), no_object);
  std::vector<Eigen::Index> pred_rows;
  Matrix target_boxes(static_cast<Eigen::Index>(out.assignment.pairs.size()), 4);
  for (std::size_t k = 0; k < out.assignment.pairs.size(); ++k) {
    const auto [q, ti] = out.assignment.pairs[k];
    labels[q] = targets[ti].category;
    pred_rows.push_back(static_cast<Eigen::Index>(q));
    for (int c = 0; c < 4; ++c) target_boxes(static_cast<Eigen::Index>(k), c) = targets[ti].box[static_cast<std::size_t>(c)];
  }
  std::vector<double> class_weights(static_cast<std::size_t>(no_object + 1), 1.0);
  class_weights.back() = w.no_object;
  out.class_loss = nn::cross_entropy_rows(class_logits, labels, class_weights);
  if (pred_rows.empty()) {
    out.l1_loss = t.constant(Matrix::Zero(1, 1));
    out.giou_loss = t.constant(Matrix::Zero(1, 1));
    out.total = nn::scale(out.class_loss, w.class_weight);
    return out;
  }
  const double inv_n = 1.0 / static_cast<double>(targets.size());
  Var matched = nn::select_rows(boxes, pred_rows);
  Var tb = t.constant(target_boxes);
  out.l1_loss = nn::scale(nn::sum(nn::abs(nn::sub(matched, tb))), inv_n);
  out.giou_loss = nn::scale(nn::sum(nn::affine(giou_rows(matched, tb), -1.0, 1.0)), inv_n);
  out.total = nn::add(nn::add(nn::scale(out.class_loss, w.class_weight), nn::scale(out.l1_loss, w.l1)),
                      nn::scale(out.giou_loss, w.giou));
  return out;
}

struct DetectionLossValue {
  double total = 0.0;
  double class_loss = 0.0;
  double l1_loss = 0.0;
  double giou_loss = 0.0;
};

inline DetectionLossValue detection_loss(const DetectionOutput& pred, std::span<const DetectionTarget> targets,
                                         const LossWeights& w = {},
                                         const std::optional<geometry::Assignment>& fixed = std::nullopt) {
  nn::Tape t;
  t.set_grad_enabled(false);
  DetectionLoss l = detection_loss(t, t.constant(pred.class_logits), t.constant(pred.boxes), targets, w, fixed);
  return {l.total.scalar(), l.class_loss.scalar(), l.l1_loss.scalar(), l.giou_loss.scalar()};
}

// Training objective for a detector forward pass: the set-prediction loss on
// the final heads plus, when present, the same loss on the first-pass heads
// with its own matching.
inline Var detector_training_loss(nn::Tape& t, const Detector::Forward& f, std::span<const DetectionTarget> targets,
                                  const LossWeights& w = {}) {
  Var total = detection_loss(t, f.class_logits, f.boxes, targets, w).total;
  if (f.aux_class_logits && f.aux_boxes) {
    total = nn::add(total, detection_loss(t, *f.aux_class_logits, *f.aux_boxes, targets, w).total);
  }
  return total;
}

}  // namespace moi::detection
