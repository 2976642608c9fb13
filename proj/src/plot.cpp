#include "apseg/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "apseg/errors.hpp"
#include "apseg/png_io.hpp"

namespace apseg::plot {

namespace {

constexpr Color kAxis{60, 60, 60};
constexpr Color kGrid{225, 225, 225};

constexpr std::array<Color, 8> kPalette{{{230, 25, 75},
                                         {60, 180, 75},
                                         {0, 130, 200},
                                         {245, 130, 48},
                                         {145, 30, 180},
                                         {70, 240, 240},
                                         {240, 50, 230},
                                         {128, 128, 0}}};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Canvas::Canvas(int width, int height, Color background) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw ArgumentError("canvas size must be positive");
  px_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < px_.size(); i += 3) std::copy(background.begin(), background.end(), px_.begin() + i);
}

Color Canvas::get(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {px_[i], px_[i + 1], px_[i + 2]};
}

void Canvas::set(int x, int y, Color c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  px_[i] = c[0];
  px_[i + 1] = c[1];
  px_[i + 2] = c[2];
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Color c) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = std::max(0, y0); y <= std::min(height_ - 1, y1); ++y)
    for (int x = std::max(0, x0); x <= std::min(width_ - 1, x1); ++x) set(x, y, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Color c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::disk(double cx, double cy, double r, Color c) {
  for (int y = static_cast<int>(std::floor(cy - r)); y <= static_cast<int>(std::ceil(cy + r)); ++y)
    for (int x = static_cast<int>(std::floor(cx - r)); x <= static_cast<int>(std::ceil(cx + r)); ++x) {
      const double ddx = x + 0.5 - cx, ddy = y + 0.5 - cy;
      if (ddx * ddx + ddy * ddy <= r * r) set(x, y, c);
    }
}

void Canvas::ring(double cx, double cy, double r, Color c) {
  for (int y = static_cast<int>(std::floor(cy - r - 1)); y <= static_cast<int>(std::ceil(cy + r + 1)); ++y)
    for (int x = static_cast<int>(std::floor(cx - r - 1)); x <= static_cast<int>(std::ceil(cx + r + 1)); ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      if (std::abs(d - r) <= 0.75) set(x, y, c);
    }
}

void Canvas::save(const std::filesystem::path& path) const {
  png::Image8 img{width_, height_, 3, px_};
  png::write_rgb8(path, img);
}

Color class_color(int class_id) {
  return kPalette[static_cast<std::size_t>(std::max(0, class_id)) % kPalette.size()];
}

Canvas line_chart(const std::vector<Series>& series, int width, int height) {
  Canvas c(width, height);
  const int left = 40, right = width - 12, top = 12, bottom = height - 28;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n_max = 0;
  for (const auto& s : series) {
    n_max = std::max(n_max, s.values.size());
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) hi = lo + 1.0;
  for (int k = 0; k <= 4; ++k) {
    const int y = bottom - (bottom - top) * k / 4;
    c.line(left, y, right, y, kGrid);
  }
  c.line(left, top, left, bottom, kAxis);
  c.line(left, bottom, right, bottom, kAxis);
  const double span = n_max > 1 ? static_cast<double>(n_max - 1) : 1.0;
  for (const auto& s : series) {
    int px = -1, py = -1;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (!std::isfinite(s.values[i])) continue;
      const int x = left + static_cast<int>(std::lround((right - left) * (static_cast<double>(i) / span)));
      const int y = bottom - static_cast<int>(std::lround((bottom - top) * (s.values[i] - lo) / (hi - lo)));
      if (px >= 0) c.line(px, py, x, y, s.color);
      else c.set(x, y, s.color);
      px = x;
      py = y;
    }
  }
  return c;
}

Canvas bar_chart(const std::vector<double>& values, double y_max, int width, int height) {
  Canvas c(width, height);
  const int left = 30, right = width - 12, top = 12, bottom = height - 24;
  if (y_max <= 0.0) y_max = 1.0;
  for (int k = 0; k <= 4; ++k) {
    const int y = bottom - (bottom - top) * k / 4;
    c.line(left, y, right, y, kGrid);
  }
  const int n = static_cast<int>(values.size());
  if (n > 0) {
    const double slot = static_cast<double>(right - left) / n;
    for (int i = 0; i < n; ++i) {
      const double v = std::isfinite(values[static_cast<std::size_t>(i)]) ? values[static_cast<std::size_t>(i)] : 0.0;
      const int x0 = left + static_cast<int>(slot * i + slot * 0.15);
      const int x1 = left + static_cast<int>(slot * (i + 1) - slot * 0.15);
      const int y = bottom - static_cast<int>(std::lround((bottom - top) * std::clamp(v / y_max, 0.0, 1.0)));
      c.fill_rect(x0, y, x1, bottom, class_color(i));
    }
  }
  c.line(left, top, left, bottom, kAxis);
  c.line(left, bottom, right, bottom, kAxis);
  return c;
}

Canvas overlay(const Tensor& image_hwc, const InstanceMap& instances, const PromptSet& prompts, int scale) {
  if (image_hwc.rank() != 3 || image_hwc.dim(2) != 3) throw ShapeError("overlay expects an H×W×3 image");
  const int h = image_hwc.dim(0), w = image_hwc.dim(1);
  if (instances.height != h || instances.width != w) throw ShapeError("overlay: image and instance map differ in size");
  if (scale < 1) throw ArgumentError("overlay scale must be positive");
  Canvas c(w * scale, h * scale);
  for (int y = 0; y < h * scale; ++y)
    for (int x = 0; x < w * scale; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y / scale) * w + x / scale) * 3;
      c.set(x, y, {to_byte(image_hwc[i]), to_byte(image_hwc[i + 1]), to_byte(image_hwc[i + 2])});
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int id = instances.at(y, x);
      if (!id) continue;
      const bool edge = x == 0 || y == 0 || x == w - 1 || y == h - 1 || instances.at(y, x - 1) != id ||
                        instances.at(y, x + 1) != id || instances.at(y - 1, x) != id || instances.at(y + 1, x) != id;
      if (!edge) continue;
      auto it = instances.class_of.find(id);
      c.fill_rect(x * scale, y * scale, x * scale + scale - 1, y * scale + scale - 1,
                  class_color(it == instances.class_of.end() ? 0 : it->second));
    }
  const double r = std::max(2.0, 0.6 * scale);
  for (const auto& p : prompts) {
    const double cx = (p.point.x + 0.5) * scale, cy = (p.point.y + 0.5) * scale;
    c.disk(cx, cy, r, class_color(p.class_id));
    c.ring(cx, cy, r + 1.0, {20, 20, 20});
  }
  return c;
}

Canvas side_by_side(const Canvas& left, const Canvas& right, int gap) {
  Canvas c(left.width() + gap + right.width(), std::max(left.height(), right.height()));
  for (int y = 0; y < left.height(); ++y)
    for (int x = 0; x < left.width(); ++x) c.set(x, y, left.get(x, y));
  for (int y = 0; y < right.height(); ++y)
    for (int x = 0; x < right.width(); ++x) c.set(left.width() + gap + x, y, right.get(x, y));
  return c;
}

}  // namespace apseg::plot
