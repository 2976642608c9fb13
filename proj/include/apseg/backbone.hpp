#pragma once

// Small convolutional encoder producing a 3-level feature pyramid at
// strides 4, 8 and 16 with a common channel count.

#include <array>
#include <cstdint>
#include <vector>

#include "apseg/autodiff.hpp"

namespace apseg::backbone {

struct BackboneConfig {
  int channels = 16;                           // C_I, shared by every pyramid level
  std::array<int, 4> stage_widths{8, 16, 24, 32};  // one stride-2 stage each

  void validate() const;
};

struct Stage {
  ad::Parameter conv_w, conv_b, norm_gamma, norm_beta;
};

struct Lateral {
  ad::Parameter w, b;
};

struct BackboneParams {
  BackboneConfig config;
  std::vector<Stage> stages;      // 4 stages
  std::vector<Lateral> laterals;  // projections of stages 2..4 to `channels`

  std::vector<ad::Parameter*> parameters();
};

/// Pyramid levels ordered fine to coarse; level 0 doubles as the shallow
/// feature used by the distribution decoder.
struct FeaturePyramid {
  static constexpr std::array<int, 3> kStrides{4, 8, 16};
  std::array<ad::Var, 3> levels;

  ad::Var shallow() const { return levels[0]; }
};

BackboneParams init_backbone(const BackboneConfig& config, std::uint64_t seed);

/// image: 3 × H × W with H and W divisible by 16.
FeaturePyramid extract_pyramid(ad::Tape& tape, ad::Var image, BackboneParams& params);

/// Throws ShapeError unless height and width are positive multiples of 16.
void check_input_size(int height, int width);

}  // namespace apseg::backbone
