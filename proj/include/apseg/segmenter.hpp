#pragma once

// Point-to-instance segmentation. The built-in baseline claims, for every
// prompt, the lattice disk of radius r around the prompt's pixel restricted
// to that prompt's nearest-prompt (Voronoi) cell. External segmenters plug in
// through a file-based command protocol.

#include <filesystem>
#include <memory>
#include <string>

#include "apseg/tensor.hpp"
#include "apseg/types.hpp"

namespace apseg::segmenter {

struct SegmenterConfig {
  double radius = 5.0;
  bool use_foreground_mask = false;
  /// Pixels whose mean RGB value is below this are foreground.
  double foreground_threshold = 0.75;
};

/// image: H × W × 3 (only consulted when the foreground mask is enabled).
InstanceMap segment(const Tensor& image, const PromptSet& prompts, const SegmenterConfig& config);
InstanceMap segment(int height, int width, const PromptSet& prompts, const SegmenterConfig& config);

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual InstanceMap run(const Tensor& image, const PromptSet& prompts) = 0;
};

class BaselineSegmenter : public Segmenter {
 public:
  explicit BaselineSegmenter(SegmenterConfig config) : config_(config) {}
  InstanceMap run(const Tensor& image, const PromptSet& prompts) override { return segment(image, prompts, config_); }

 private:
  SegmenterConfig config_;
};

/// Runs `command <image.png> <prompts.json> <mask.png> <classes.json>` and
/// reads back a 16-bit instance map and {"classes": {"<id>": class, ...}}.
class ExternalSegmenter : public Segmenter {
 public:
  ExternalSegmenter(std::string command, std::filesystem::path work_dir);
  InstanceMap run(const Tensor& image, const PromptSet& prompts) override;

 private:
  std::string command_;
  std::filesystem::path work_dir_;
  int calls_ = 0;
};

/// Prompts JSON: {"prompts": [{"x":..., "y":..., "class":..., "score":...}]}.
void write_prompts_json(const std::filesystem::path& path, const PromptSet& prompts);
PromptSet read_prompts_json(const std::filesystem::path& path);

void write_instance_map(const std::filesystem::path& mask_path, const std::filesystem::path& classes_path,
                        const InstanceMap& map);
InstanceMap read_instance_map(const std::filesystem::path& mask_path, const std::filesystem::path& classes_path);

void write_image_png(const std::filesystem::path& path, const Tensor& image_hwc);
Tensor read_image_png(const std::filesystem::path& path);

}  // namespace apseg::segmenter
