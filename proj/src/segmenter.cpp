#include "apseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "apseg/errors.hpp"
#include "apseg/png_io.hpp"
#include "json.hpp"

namespace apseg::segmenter {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

InstanceMap segment_impl(int height, int width, const Tensor* image, const PromptSet& prompts,
                         const SegmenterConfig& cfg) {
  InstanceMap out(height, width);
  if (cfg.radius < 0.0) throw ArgumentError("segment: negative radius");
  std::vector<std::pair<int, int>> pix;  // (col, row) of each prompt
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const Point2 p = prompts[i].point;
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < width && p.y < height))
      throw ArgumentError("segment: prompt " + std::to_string(i) + " at (" + std::to_string(p.x) + ", " +
                          std::to_string(p.y) + ") is outside the image");
    pix.emplace_back(static_cast<int>(std::floor(p.x)), static_cast<int>(std::floor(p.y)));
  }
  const double r2 = cfg.radius * cfg.radius;
  const int reach = static_cast<int>(std::floor(cfg.radius));
  std::vector<int> owner(static_cast<std::size_t>(height) * width, -1);
  for (std::size_t i = 0; i < pix.size(); ++i) {
    const auto [cx, cy] = pix[i];
    for (int y = std::max(0, cy - reach); y <= std::min(height - 1, cy + reach); ++y)
      for (int x = std::max(0, cx - reach); x <= std::min(width - 1, cx + reach); ++x) {
        const double d2 = static_cast<double>(x - cx) * (x - cx) + static_cast<double>(y - cy) * (y - cy);
        if (d2 > r2) continue;
        // Nearest prompt wins; equal distances go to the lower index.
        bool nearest = true;
        for (std::size_t j = 0; j < pix.size() && nearest; ++j) {
          if (j == i) continue;
          const auto [jx, jy] = pix[j];
          const double jd2 = static_cast<double>(x - jx) * (x - jx) + static_cast<double>(y - jy) * (y - jy);
          if (jd2 < d2 || (jd2 == d2 && j < i)) nearest = false;
        }
        if (nearest) owner[static_cast<std::size_t>(y) * width + x] = static_cast<int>(i);
      }
  }
  if (cfg.use_foreground_mask && image) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const std::size_t base = (static_cast<std::size_t>(y) * width + x) * 3;
        const double gray = ((*image)[base] + (*image)[base + 1] + (*image)[base + 2]) / 3.0;
        if (gray >= cfg.foreground_threshold) owner[static_cast<std::size_t>(y) * width + x] = -1;
      }
  }
  std::vector<int> id_of(prompts.size(), 0);
  std::vector<char> has_pixels(prompts.size(), 0);
  for (int o : owner)
    if (o >= 0) has_pixels[static_cast<std::size_t>(o)] = 1;
  int next = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i)
    if (has_pixels[i]) {
      id_of[i] = ++next;
      out.class_of[next] = prompts[i].class_id;
    }
  for (std::size_t k = 0; k < owner.size(); ++k)
    if (owner[k] >= 0) out.labels[k] = id_of[static_cast<std::size_t>(owner[k])];
  return out;
}

}  // namespace

InstanceMap segment(const Tensor& image, const PromptSet& prompts, const SegmenterConfig& config) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("segment expects an H×W×3 image");
  return segment_impl(image.dim(0), image.dim(1), &image, prompts, config);
}

InstanceMap segment(int height, int width, const PromptSet& prompts, const SegmenterConfig& config) {
  if (config.use_foreground_mask) throw ArgumentError("segment: foreground mask needs the image");
  return segment_impl(height, width, nullptr, prompts, config);
}

void write_prompts_json(const fs::path& path, const PromptSet& prompts) {
  json arr = json::array();
  for (const auto& p : prompts)
    arr.push_back({{"x", p.point.x}, {"y", p.point.y}, {"class", p.class_id}, {"score", p.score}});
  std::ofstream out(path);
  if (!out) throw Error("cannot create " + path.string());
  out << json{{"prompts", arr}}.dump(1) << "\n";
}

PromptSet read_prompts_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  PromptSet out;
  try {
    const json j = json::parse(in);
    for (const auto& p : j.at("prompts"))
      out.push_back({{p.at("x").get<double>(), p.at("y").get<double>()}, p.at("class").get<int>(),
                     p.value("score", 1.0)});
  } catch (const json::exception& e) {
    throw LoadError("malformed prompts file " + path.string() + ": " + e.what());
  }
  return out;
}

void write_instance_map(const fs::path& mask_path, const fs::path& classes_path, const InstanceMap& map) {
  png::Image16 img{map.width, map.height, std::vector<std::uint16_t>(map.labels.size())};
  for (std::size_t i = 0; i < map.labels.size(); ++i) img.pixels[i] = static_cast<std::uint16_t>(map.labels[i]);
  png::write_gray16(mask_path, img);
  json classes = json::object();
  for (auto [id, c] : map.class_of) classes[std::to_string(id)] = c;
  std::ofstream out(classes_path);
  if (!out) throw Error("cannot create " + classes_path.string());
  out << json{{"classes", classes}}.dump(1) << "\n";
}

InstanceMap read_instance_map(const fs::path& mask_path, const fs::path& classes_path) {
  const png::Image16 img = png::read_gray16(mask_path);
  InstanceMap m(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m.labels[i] = img.pixels[i];
  std::ifstream in(classes_path);
  if (!in) throw LoadError("cannot open " + classes_path.string());
  try {
    const json j = json::parse(in);
    for (auto it = j.at("classes").begin(); it != j.at("classes").end(); ++it)
      m.class_of[std::stoi(it.key())] = it.value().get<int>();
  } catch (const std::exception& e) {
    throw LoadError("malformed class file " + classes_path.string() + ": " + e.what());
  }
  return m;
}

void write_image_png(const fs::path& path, const Tensor& image) {
  png::Image8 img{image.dim(1), image.dim(0), 3, std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  png::write_rgb8(path, img);
}

Tensor read_image_png(const fs::path& path) {
  const png::Image8 img = png::read_rgb8(path);
  Tensor t({img.height, img.width, 3});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

ExternalSegmenter::ExternalSegmenter(std::string command, fs::path work_dir)
    : command_(std::move(command)), work_dir_(std::move(work_dir)) {
  fs::create_directories(work_dir_);
}

InstanceMap ExternalSegmenter::run(const Tensor& image, const PromptSet& prompts) {
  const std::string stem = "call_" + std::to_string(calls_++);
  const fs::path img = work_dir_ / (stem + "_image.png"), pr = work_dir_ / (stem + "_prompts.json");
  const fs::path mask = work_dir_ / (stem + "_mask.png"), cls = work_dir_ / (stem + "_classes.json");
  write_image_png(img, image);
  write_prompts_json(pr, prompts);
  const std::string cmd = command_ + " '" + img.string() + "' '" + pr.string() + "' '" + mask.string() + "' '" +
                          cls.string() + "'";
  if (std::system(cmd.c_str()) != 0) throw Error("external segmenter failed: " + cmd);
  InstanceMap m = read_instance_map(mask, cls);
  if (m.height != image.dim(0) || m.width != image.dim(1))
    throw ConsistencyError("external segmenter returned a map of the wrong size");
  return m;
}

}  // namespace apseg::segmenter
