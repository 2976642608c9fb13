#include "apseg/backbone.hpp"

#include <string>

#include "apseg/errors.hpp"
#include "apseg/init.hpp"

namespace apseg::backbone {

void BackboneConfig::validate() const {
  if (channels < 8) throw ConfigError("backbone channels (C_I) must be at least 8, got " + std::to_string(channels));
  for (int w : stage_widths)
    if (w < 1) throw ConfigError("backbone stage widths must be positive");
}

std::vector<ad::Parameter*> BackboneParams::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& s : stages)
    for (auto* p : {&s.conv_w, &s.conv_b, &s.norm_gamma, &s.norm_beta}) out.push_back(p);
  for (auto& l : laterals)
    for (auto* p : {&l.w, &l.b}) out.push_back(p);
  return out;
}

BackboneParams init_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  BackboneParams p;
  p.config = config;
  int in = 3;
  for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
    const int out = config.stage_widths[s];
    const std::string tag = "backbone.stage" + std::to_string(s);
    p.stages.push_back(Stage{he_normal(tag + ".conv.w", {out, in, 3, 3}, in * 9, rng),
                             filled(tag + ".conv.b", {out}, 0.0), filled(tag + ".norm.gamma", {out}, 1.0),
                             filled(tag + ".norm.beta", {out}, 0.0)});
    in = out;
  }
  for (std::size_t s = 1; s < config.stage_widths.size(); ++s) {
    const int width = config.stage_widths[s];
    const std::string tag = "backbone.lateral" + std::to_string(s);
    p.laterals.push_back(Lateral{he_normal(tag + ".w", {config.channels, width, 1, 1}, width, rng),
                                 filled(tag + ".b", {config.channels}, 0.0)});
  }
  return p;
}

void check_input_size(int height, int width) {
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0)
    throw ShapeError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not a positive multiple of 16");
}

FeaturePyramid extract_pyramid(ad::Tape& tape, ad::Var image, BackboneParams& params) {
  const auto& shape = image.shape();
  if (shape.size() != 3 || shape[0] != 3) throw ShapeError("backbone expects a 3×H×W image, got " + shape_string(shape));
  check_input_size(shape[1], shape[2]);

  FeaturePyramid pyr;
  ad::Var x = image;
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    Stage& st = params.stages[s];
    x = ad::conv2d(x, tape.param(st.conv_w), tape.param(st.conv_b), 2, 1);
    x = ad::layer_norm_channels(x, tape.param(st.norm_gamma), tape.param(st.norm_beta));
    x = ad::relu(x);
    if (s >= 1) {
      Lateral& l = params.laterals[s - 1];
      pyr.levels[s - 1] = ad::conv2d(x, tape.param(l.w), tape.param(l.b), 1, 0);
    }
  }
  return pyr;
}

}  // namespace apseg::backbone
