#pragma once

#include "moi/detection/loss.hpp"

namespace moi::detection {

struct IdentifyOptions {
  double iou_threshold = 0.10;
  // Queries whose probability of being an object (1 - p(no object)) falls
  // below this are not offered to the matcher. 0 keeps every query.
  double min_object_prob = 0.0;
};

// Detection -> identification: Hungarian-match every scene object to the
// predicted boxes with a box-only cost, then keep the objects whose matched
// prediction overlaps them with IoU >= iou_threshold.
inline ObjectIdSet identify_from_detections(const DetectionOutput& pred, const Scene& scene,
                                            const IdentifyOptions& opt = {}) {
  ObjectIdSet out;
  if (scene.objects.empty()) return out;
  std::vector<Eigen::Index> rows;
  const Matrix probs = opt.min_object_prob > 0.0 ? softmax_rows(pred.class_logits) : Matrix();
  for (Eigen::Index q = 0; q < pred.num_queries(); ++q) {
    if (opt.min_object_prob > 0.0 && 1.0 - probs(q, probs.cols() - 1) < opt.min_object_prob) continue;
    rows.push_back(q);
  }
  if (rows.empty()) return out;
  Matrix boxes(static_cast<Eigen::Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) boxes.row(static_cast<Eigen::Index>(i)) = pred.boxes.row(rows[i]);

  const auto targets = targets_from_objects(scene.objects, scene.image_size);
  const auto assignment =
      geometry::hungarian_assign(detection_matching_cost(Matrix(), boxes, targets, LossWeights{}, false));
  for (auto [q, t] : assignment.pairs) {
    const BoundingBox predicted = geometry::to_pixel(box_row(boxes, static_cast<Eigen::Index>(q)), scene.image_size);
    if (geometry::iou(predicted, scene.objects[t].box) >= opt.iou_threshold) out.insert(scene.objects[t].object_id);
  }
  return out;
}

// Ground-truth objects whose Hungarian-matched prediction (full matching
// cost) overlaps them with IoU >= iou_threshold; `labeled` additionally
// requires the arg-max class to be the object's category.
struct MatchQuality {
  std::size_t objects = 0;
  std::size_t matched = 0;
  std::size_t labeled = 0;
  double rate() const { return objects == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(objects); }
  double labeled_rate() const {
    return objects == 0 ? 1.0 : static_cast<double>(labeled) / static_cast<double>(objects);
  }
  MatchQuality& operator+=(const MatchQuality& o) {
    objects += o.objects;
    matched += o.matched;
    labeled += o.labeled;
    return *this;
  }
};

inline MatchQuality detection_match_quality(const DetectionOutput& pred, const Scene& scene, double iou_threshold = 0.5) {
  MatchQuality m;
  m.objects = scene.objects.size();
  if (scene.objects.empty()) return m;
  const auto targets = targets_from_objects(scene.objects, scene.image_size);
  const auto assignment = geometry::hungarian_assign(detection_matching_cost(pred, targets));
  for (auto [q, t] : assignment.pairs) {
    const BoundingBox predicted = geometry::to_pixel(box_row(pred.boxes, static_cast<Eigen::Index>(q)), scene.image_size);
    if (geometry::iou(predicted, scene.objects[t].box) < iou_threshold) continue;
    ++m.matched;
    Eigen::Index best = 0;
    pred.class_logits.row(static_cast<Eigen::Index>(q)).maxCoeff(&best);
    if (best == scene.objects[t].category) ++m.labeled;
  }
  return m;
}

}  // namespace moi::detection
