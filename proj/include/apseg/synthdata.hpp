#pragma once

// Deterministic synthetic nuclei scenes and the on-disk dataset layout
//
//   root/manifest.json
//   root/images/{id}.png   8-bit RGB
//   root/masks/{id}.png    16-bit single-channel instance map
//   root/ann/{id}.json     {"points": [[x,y],...], "classes": [c,...], "n": N}

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apseg/tensor.hpp"
#include "apseg/types.hpp"

namespace apseg::synth {

/// One ellipse to rasterize.
struct NucleusSpec {
  Point2 center;
  double semi_major = 1.0;
  double semi_minor = 1.0;
  double angle = 0.0;  // radians
  int class_id = 0;
  double intensity = 0.5;  // stain darkness in [0, 1]
};

/// Per-class appearance distribution. Nuclei of a class draw their
/// semi-major axis, minor/major ratio and darkness uniformly from these ranges.
struct ClassAppearance {
  double major_min = 3.0, major_max = 4.0;
  double ratio_min = 0.8, ratio_max = 1.0;
  double intensity_min = 0.5, intensity_max = 0.7;
  double tint[3] = {0.55, 0.25, 0.55};  // RGB stain color at full intensity
};

struct SceneConfig {
  int height = 64;
  int width = 64;
  int num_classes = 4;
  int count_min = 8;
  int count_max = 14;
  std::vector<ClassAppearance> classes;  // empty -> default_appearance(num_classes)
  double min_separation = 1.0;  // added gap between circumscribed circles, pixels
  double noise_sigma = 0.03;
  double background[3] = {0.92, 0.84, 0.90};
  int max_attempts_per_nucleus = 500;
  /// Whole-layout retries when a nucleus cannot be placed.
  int max_layout_restarts = 20;
  /// Restricts nucleus centers to x < placement_max_x_fraction·W.
  double placement_max_x_fraction = 1.0;
  /// Required gap between consecutive classes' mean nucleus areas (pixels²).
  double area_margin = 8.0;

  std::vector<ClassAppearance> resolved_classes() const;
  void validate() const;
};

/// Class-dependent defaults: nuclei grow, elongate differently and darken
/// with the class index so that class identity is visually learnable.
std::vector<ClassAppearance> default_appearance(int num_classes);

/// Image, ground-truth instance map and per-instance annotation.
struct Scene {
  Tensor image;  // H × W × 3, values in [0, 1] on the 8-bit grid
  InstanceMap instances;
  std::vector<Point2> points;  // pixel-mass centroids, aligned with instance ids 1..N
  std::vector<int> classes;

  int n() const { return static_cast<int>(points.size()); }
  int height() const { return instances.height; }
  int width() const { return instances.width; }
  /// Channel-first copy (3 × H × W) for the network.
  Tensor image_chw() const;
};

/// Pixels of an ellipse (inside-test at pixel centers), row-major order.
std::vector<std::pair<int, int>> rasterize(const NucleusSpec& spec, int height, int width);

Scene generate_scene(const SceneConfig& config, std::uint64_t seed);
/// Scenes for seeds base_seed, base_seed+1, ...
std::vector<Scene> generate_scenes(const SceneConfig& config, int count, std::uint64_t base_seed);

/// Throws ConsistencyError describing the first violated Scene invariant.
void check_scene(const Scene& scene, int num_classes);

struct DatasetEntry {
  std::string id;
  std::string image;
  std::string mask;
  std::string ann;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<DatasetEntry> scenes;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Scene> scenes;
};

DatasetManifest write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& root,
                              int num_classes, std::vector<std::string> class_names = {},
                              std::uint64_t seed = 0);
Dataset read_dataset(const std::filesystem::path& root);

void write_scene_files(const Scene& scene, const std::filesystem::path& image_path,
                       const std::filesystem::path& mask_path, const std::filesystem::path& ann_path);
Scene read_scene_files(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                       const std::filesystem::path& ann_path, int num_classes);

/// Median equivalent-circle radius sqrt(area/π) over all instances.
double median_equivalent_radius(const std::vector<Scene>& scenes);

}  // namespace apseg::synth
