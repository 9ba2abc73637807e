#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <string_view>

#include "moi/core/error.hpp"
#include "moi/data/types.hpp"

namespace moi::geometry {

using Box4 = std::array<double, 4>;

enum class BoxFormat {
  kPixelXywh,        // (left, top, width, height) in pixels
  kNormalizedCxcywh  // (center x, center y, width, height) relative to image size
};

inline BoxFormat parse_box_format(std::string_view tag) {
  if (tag == "pixel-xywh") return BoxFormat::kPixelXywh;
  if (tag == "normalized-cxcywh") return BoxFormat::kNormalizedCxcywh;
  throw InvalidInput("unknown box format '" + std::string(tag) + "'");
}

inline std::string_view to_string(BoxFormat f) {
  return f == BoxFormat::kPixelXywh ? "pixel-xywh" : "normalized-cxcywh";
}

inline Box4 box_convert(const Box4& box, BoxFormat from, BoxFormat to, ImageSize image) {
  if (from == to) return box;
  if (image.width <= 0 || image.height <= 0) {
    throw InvalidInput("box conversion needs a positive image size");
  }
  const double iw = image.width;
  const double ih = image.height;
  if (from == BoxFormat::kPixelXywh) {
    return {(box[0] + 0.5 * box[2]) / iw, (box[1] + 0.5 * box[3]) / ih, box[2] / iw, box[3] / ih};
  }
  const double w = box[2] * iw;
  const double h = box[3] * ih;
  return {box[0] * iw - 0.5 * w, box[1] * ih - 0.5 * h, w, h};
}

inline Box4 box_convert(const Box4& box, std::string_view from, std::string_view to, ImageSize image) {
  return box_convert(box, parse_box_format(from), parse_box_format(to), image);
}

inline Box4 to_normalized(const BoundingBox& b, ImageSize image) {
  return box_convert({b.x, b.y, b.w, b.h}, BoxFormat::kPixelXywh, BoxFormat::kNormalizedCxcywh, image);
}

inline BoundingBox to_pixel(const Box4& cxcywh, ImageSize image) {
  const Box4 p = box_convert(cxcywh, BoxFormat::kNormalizedCxcywh, BoxFormat::kPixelXywh, image);
  return BoundingBox{p[0], p[1], p[2], p[3]};
}

// Normalized cxcywh box viewed as a BoundingBox in unit coordinates; IoU and
// GIoU are scale invariant so this is enough for comparing learned boxes.
inline BoundingBox from_cxcywh(const Box4& b) {
  return BoundingBox{b[0] - 0.5 * b[2], b[1] - 0.5 * b[3], b[2], b[3]};
}

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  // Touching boxes have a zero-width overlap and count as disjoint.
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

inline double generalized_iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double ew = std::max(a.right(), b.right()) - std::min(a.x, b.x);
  const double eh = std::max(a.bottom(), b.bottom()) - std::min(a.y, b.y);
  const double enclosing = ew * eh;
  return inter / uni - (enclosing - uni) / enclosing;
}

}  // namespace moi::geometry
