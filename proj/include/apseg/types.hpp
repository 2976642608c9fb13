#pragma once

#include <map>
#include <vector>

namespace apseg {

/// Continuous image-frame coordinate. Pixel (col j, row i) spans
/// [j, j+1) × [i, i+1); its center is (j + 0.5, i + 0.5).
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Integer label image: 0 is background, positive ids are instances.
struct InstanceMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;     // row-major, height × width
  std::map<int, int> class_of;  // instance id -> class id

  InstanceMap() = default;
  InstanceMap(int h, int w) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}

  int& at(int row, int col) { return labels[static_cast<std::size_t>(row) * width + col]; }
  int at(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
  /// Largest label present.
  int max_label() const;
  /// Distinct nonzero labels, ascending.
  std::vector<int> instance_ids() const;

  friend bool operator==(const InstanceMap&, const InstanceMap&) = default;
};

/// A point prompt ((x, y), class) with an optional confidence.
struct Prompt {
  Point2 point;
  int class_id = 0;
  double score = 1.0;
};

using PromptSet = std::vector<Prompt>;

}  // namespace apseg
