#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "moi/core/error.hpp"
#include "moi/data/types.hpp"

namespace moi {

// RGB image with channel values in [0, 1], stored row major, channels last.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * kChannels, fill) {
    if (width <= 0 || height <= 0) throw InvalidInput("image dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  ImageSize size() const { return {width_, height_}; }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data_[index(x, y, c)]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + path.string() + "'");
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(img.data().size());
  for (double v : img.data()) {
    bytes.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw ParseError(path.filename().string(), "expected a binary 8-bit PPM");
  }
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * Image::kChannels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw ParseError(path.filename().string(), "truncated pixel data");
  }
  Image img(w, h);
  auto d = img.data();
  for (std::size_t i = 0; i < bytes.size(); ++i) d[i] = bytes[i] / 255.0;
  return img;
}

// Bilinear resample of the continuous pixel rectangle `rect` to out_w x out_h.
inline Image resample(const Image& src, const BoundingBox& rect, int out_w, int out_h) {
  Image out(out_w, out_h);
  const double sx = rect.w / out_w;
  const double sy = rect.h / out_h;
  for (int v = 0; v < out_h; ++v) {
    const double fy = std::clamp(rect.y + (v + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double ty = fy - y0;
    for (int u = 0; u < out_w; ++u) {
      const double fx = std::clamp(rect.x + (u + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double tx = fx - x0;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = src.at(x0, y0, c) * (1 - tx) + src.at(x1, y0, c) * tx;
        const double bot = src.at(x0, y1, c) * (1 - tx) + src.at(x1, y1, c) * tx;
        out.at(u, v, c) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

// Box grown by `pad` of its own size on every side, then clamped to the image.
inline BoundingBox padded_region(const BoundingBox& box, double pad, ImageSize image) {
  const double x0 = std::max(0.0, box.x - pad * box.w);
  const double y0 = std::max(0.0, box.y - pad * box.h);
  const double x1 = std::min(static_cast<double>(image.width), box.right() + pad * box.w);
  const double y1 = std::min(static_cast<double>(image.height), box.bottom() + pad * box.h);
  return BoundingBox{x0, y0, x1 - x0, y1 - y0};
}

struct ObjectCrop {
  ObjectId object_id = 0;
  BoundingBox region;  // pixel rectangle sampled from the scene image
  Image pixels;        // resampled to the encoder resolution
};

struct CropResult {
  std::vector<ObjectCrop> crops;  // input order, skipped objects omitted
  std::vector<ObjectId> skipped;
  std::vector<std::string> warnings;
};

inline CropResult crop_object_images(const Image& scene_image, std::span<const SceneObject> objects, double pad,
                                     int resolution) {
  if (pad < 0.0) throw InvalidInput("crop padding must be non-negative");
  if (resolution <= 0) throw InvalidInput("crop resolution must be positive");
  CropResult out;
  for (const auto& o : objects) {
    const BoundingBox r = padded_region(o.box, pad, scene_image.size());
    if (r.w <= 1.0 || r.h <= 1.0) {
      out.skipped.push_back(o.object_id);
      out.warnings.push_back("object " + std::to_string(o.object_id) + ": degenerate crop after clamping");
      continue;
    }
    out.crops.push_back({o.object_id, r, resample(scene_image, r, resolution, resolution)});
  }
  return out;
}

}  // namespace moi
