#include "apseg/dgpom.hpp"

#include "apseg/errors.hpp"
#include "apseg/init.hpp"

namespace apseg::dgpom {

std::vector<ad::Parameter*> DgpomParams::decoder_parameters() { return {&dec1_w, &dec1_b, &dec2_w, &dec2_b}; }
std::vector<ad::Parameter*> DgpomParams::deform_parameters() { return {&def1_w, &def1_b, &def2_w, &def2_b}; }
std::vector<ad::Parameter*> DgpomParams::regression_parameters() { return {&reg1_w, &reg1_b, &reg2_w, &reg2_b}; }
std::vector<ad::Parameter*> DgpomParams::density_parameters() { return {&den_w, &den_b}; }

DgpomParams init_dgpom(int channels, std::uint64_t seed, double density_bias) {
  if (channels < 1) throw ConfigError("DG-POM channel count must be positive");
  Rng rng(seed);
  const int c = channels;
  return DgpomParams{
      c,
      he_normal("dgpom.decoder.conv1.w", {c, c, 3, 3}, 9 * c, rng),
      filled("dgpom.decoder.conv1.b", {c}, 0.0),
      he_normal("dgpom.decoder.conv2.w", {c, c, 3, 3}, 9 * c, rng),
      filled("dgpom.decoder.conv2.b", {c}, 0.0),
      he_normal("dgpom.deform.fc1.w", {c, c}, c, rng),
      filled("dgpom.deform.fc1.b", {c}, 0.0),
      filled("dgpom.deform.fc2.w", {2, c}, 0.0),
      filled("dgpom.deform.fc2.b", {2}, 0.0),
      he_normal("dgpom.reg.fc1.w", {c, 3 * c}, 3 * c, rng),
      filled("dgpom.reg.fc1.b", {c}, 0.0),
      filled("dgpom.reg.fc2.w", {2, c}, 0.0),
      filled("dgpom.reg.fc2.b", {2}, 0.0),
      he_normal("dgpom.density.w", {1, c, 1, 1}, c, rng),
      filled("dgpom.density.b", {1}, density_bias),
  };
}

Tensor make_proposal_grid(int height, int width, int stride) {
  if (stride < 1 || height <= 0 || width <= 0 || height % stride != 0 || width % stride != 0)
    throw ShapeError("proposal stride " + std::to_string(stride) + " does not divide " + std::to_string(height) +
                     "x" + std::to_string(width));
  const int rows = height / stride, cols = width / stride;
  Tensor grid({rows * cols, 2});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      grid.at(i * cols + j, 0) = (j + 0.5) * stride;
      grid.at(i * cols + j, 1) = (i + 0.5) * stride;
    }
  return grid;
}

ad::Var distribution_decode(ad::Tape& tape, ad::Var shallow, DgpomParams& p) {
  if (shallow.value().rank() != 3 || shallow.value().dim(0) != p.channels)
    throw ShapeError("distribution_decode: expected " + std::to_string(p.channels) + "-channel map, got " +
                     shape_string(shallow.shape()));
  ad::Var x = ad::relu(ad::conv2d(shallow, tape.param(p.dec1_w), tape.param(p.dec1_b), 1, 1));
  return ad::relu(ad::conv2d(x, tape.param(p.dec2_w), tape.param(p.dec2_b), 1, 1));
}

Offsets deform_proposals(ad::Tape& tape, ad::Var decoded, ad::Var proposals, DgpomParams& p, int shallow_stride) {
  ad::Var e = ad::bilinear_sample(decoded, proposals, shallow_stride);
  ad::Var h = ad::relu(ad::linear(e, tape.param(p.def1_w), tape.param(p.def1_b)));
  ad::Var off = ad::linear(h, tape.param(p.def2_w), tape.param(p.def2_b));
  return {off, ad::add(proposals, off)};
}

ad::Var sample_pyramid(const backbone::FeaturePyramid& pyramid, ad::Var coords) {
  std::array<ad::Var, 3> parts;
  for (std::size_t l = 0; l < 3; ++l)
    parts[l] = ad::bilinear_sample(pyramid.levels[l], coords, backbone::FeaturePyramid::kStrides[l]);
  return ad::concat_cols(parts);
}

Offsets regress_points(ad::Tape& tape, const backbone::FeaturePyramid& pyramid, ad::Var deformed, DgpomParams& p) {
  ad::Var e = sample_pyramid(pyramid, deformed);
  ad::Var h = ad::relu(ad::linear(e, tape.param(p.reg1_w), tape.param(p.reg1_b)));
  ad::Var off = ad::linear(h, tape.param(p.reg2_w), tape.param(p.reg2_b));
  return {off, ad::add(deformed, off)};
}

ad::Var density_map(ad::Tape& tape, ad::Var decoded, DgpomParams& p) {
  return ad::softplus(ad::conv2d(decoded, tape.param(p.den_w), tape.param(p.den_b), 1, 0));
}

ad::Var count_loss(ad::Var density, double count) {
  if (count < 0.0) throw ArgumentError("count_loss: negative instance count");
  return ad::abs(ad::shift(ad::sum(density), -count));
}

}  // namespace apseg::dgpom
