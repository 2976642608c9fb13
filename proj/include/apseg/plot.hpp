#pragma once

// Minimal raster figures: loss curves, bar charts and prediction overlays.
// Everything is drawn with plain pixel primitives and saved as 8-bit PNG.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apseg/tensor.hpp"
#include "apseg/types.hpp"

namespace apseg::plot {

using Color = std::array<std::uint8_t, 3>;

class Canvas {
 public:
  Canvas(int width, int height, Color background = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  Color get(int x, int y) const;
  void set(int x, int y, Color c);
  void fill_rect(int x0, int y0, int x1, int y1, Color c);
  void line(int x0, int y0, int x1, int y1, Color c);
  void disk(double cx, double cy, double r, Color c);
  void ring(double cx, double cy, double r, Color c);
  void save(const std::filesystem::path& path) const;

 private:
  int width_, height_;
  std::vector<std::uint8_t> px_;
};

/// Fixed palette; index 0 is reserved for the first class.
Color class_color(int class_id);

struct Series {
  std::string name;
  std::vector<double> values;
  Color color;
};

/// Line chart of each series against its index, sharing one y range.
Canvas line_chart(const std::vector<Series>& series, int width = 640, int height = 360);

/// One bar per value, colored by position.
Canvas bar_chart(const std::vector<double>& values, double y_max = 1.0, int width = 480, int height = 320);

/// Image (H×W×3) upscaled by `scale`, instance boundaries in the class color
/// and prompt markers (filled disk with a dark ring) at the prompt coordinates.
Canvas overlay(const Tensor& image_hwc, const InstanceMap& instances, const PromptSet& prompts, int scale = 4);

/// Ground truth on the left, prediction on the right.
Canvas side_by_side(const Canvas& left, const Canvas& right, int gap = 8);

}  // namespace apseg::plot
