#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moi/data/image.hpp"
#include "moi/data/types.hpp"

namespace moi {

// Square boolean matrix marking positive (dialogue row, object column) cells.
class PositiveMask {
 public:
  PositiveMask() = default;
  explicit PositiveMask(std::size_t n) : n_(n), cells_(n * n, 0) {}

  std::size_t size() const { return n_; }
  bool operator()(std::size_t i, std::size_t j) const { return cells_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { cells_[i * n_ + j] = v ? 1 : 0; }

  bool diagonal_all_true() const {
    for (std::size_t i = 0; i < n_; ++i)
      if (!(*this)(i, i)) return false;
    return true;
  }

  bool has_empty_row() const {
    for (std::size_t i = 0; i < n_; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < n_ && !any; ++j) any = (*this)(i, j);
      if (!any) return true;
    }
    return false;
  }

  std::size_t count() const {
    std::size_t c = 0;
    for (auto v : cells_) c += v;
    return c;
  }

  friend bool operator==(const PositiveMask&, const PositiveMask&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> cells_;
};

// Positives of row i: its own object plus every batch object from the same
// scene that shares the prefab of object i.
inline PositiveMask build_positive_mask_v1(std::span<const PairMeta> meta) {
  PositiveMask m(meta.size());
  for (std::size_t i = 0; i < meta.size(); ++i) {
    for (std::size_t j = 0; j < meta.size(); ++j) {
      const bool same = i == j || (meta[i].scene_id == meta[j].scene_id && meta[i].prefab_id == meta[j].prefab_id);
      m.set(i, j, same);
    }
  }
  return m;
}

// Positives of row i: its own object plus every batch object from the same
// dialogue that row i's turn labels as identified.
inline PositiveMask build_positive_mask_v2(std::span<const PairMeta> meta) {
  PositiveMask m(meta.size());
  for (std::size_t i = 0; i < meta.size(); ++i) {
    for (std::size_t j = 0; j < meta.size(); ++j) {
      const bool pos = i == j || (meta[i].dialogue_id == meta[j].dialogue_id &&
                                  meta[i].label_object_ids.count(meta[j].object_id) != 0);
      m.set(i, j, pos);
    }
  }
  return m;
}

inline PositiveMask identity_mask(std::size_t n) {
  PositiveMask m(n);
  for (std::size_t i = 0; i < n; ++i) m.set(i, i, true);
  return m;
}

struct PairBatch {
  std::vector<DialogueTurnContext> dialogue_contexts;
  std::vector<Image> object_crops;
  PositiveMask positive_mask;
  std::vector<PairMeta> meta;
};

struct IdentificationInstance {
  std::size_t sample_index = 0;  // into DatasetSplit::samples
  ObjectId object_id = 0;
  int label = 0;
};

// One instance per (sample, scene object); label 1 iff the object is in the
// sample's label set.
inline std::vector<IdentificationInstance> make_identification_instances(const DatasetSplit& split) {
  std::vector<IdentificationInstance> out;
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    const auto& s = split.samples[i];
    for (const auto& o : split.scene(s.scene_id).objects) {
      out.push_back({i, o.object_id, s.label_object_ids.count(o.object_id) != 0 ? 1 : 0});
    }
  }
  return out;
}

}  // namespace moi
