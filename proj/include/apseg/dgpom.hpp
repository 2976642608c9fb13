#pragma once

// Distribution-guided proposal offsets: a fixed grid of proposals is shifted
// by offsets read from a decoded shallow feature map, refined by a regression
// head over the whole pyramid, and a density head predicts the instance count.

#include <cstdint>

#include "apseg/autodiff.hpp"
#include "apseg/backbone.hpp"

namespace apseg::dgpom {

struct DgpomParams {
  int channels = 0;
  // distribution decoder: conv3x3 -> relu -> conv3x3 -> relu
  ad::Parameter dec1_w, dec1_b, dec2_w, dec2_b;
  // deform layer: per-proposal MLP, zero-initialized output
  ad::Parameter def1_w, def1_b, def2_w, def2_b;
  // regression head on concatenated multi-level samples, zero-initialized output
  ad::Parameter reg1_w, reg1_b, reg2_w, reg2_b;
  // density layer: 1x1 conv -> softplus
  ad::Parameter den_w, den_b;

  std::vector<ad::Parameter*> decoder_parameters();
  std::vector<ad::Parameter*> deform_parameters();
  std::vector<ad::Parameter*> regression_parameters();
  std::vector<ad::Parameter*> density_parameters();
};

/// `density_bias` sets the initial per-cell density to softplus(density_bias).
DgpomParams init_dgpom(int channels, std::uint64_t seed, double density_bias = -4.0);

/// Proposal coordinates at cell centers ((j+0.5)·stride, (i+0.5)·stride),
/// row-major, as a K×2 tensor.
Tensor make_proposal_grid(int height, int width, int stride);

ad::Var distribution_decode(ad::Tape& tape, ad::Var shallow, DgpomParams& params);

struct Offsets {
  ad::Var offsets;  // K×2
  ad::Var moved;    // base + offsets
};

/// Samples the decoded map at the proposals and predicts (ΔX_p, ΔY_p).
Offsets deform_proposals(ad::Tape& tape, ad::Var decoded, ad::Var proposals, DgpomParams& params,
                         int shallow_stride = backbone::FeaturePyramid::kStrides[0]);

/// Per-proposal multi-level embedding: bilinear samples of every pyramid level
/// concatenated (K × 3·C_I).
ad::Var sample_pyramid(const backbone::FeaturePyramid& pyramid, ad::Var coords);

/// Regresses (ΔX, ΔY) from the multi-level embedding at the deformed proposals.
Offsets regress_points(ad::Tape& tape, const backbone::FeaturePyramid& pyramid, ad::Var deformed,
                       DgpomParams& params);

/// 1×(H/4)×(W/4) non-negative density.
ad::Var density_map(ad::Tape& tape, ad::Var decoded, DgpomParams& params);

/// |Σ density − count|.
ad::Var count_loss(ad::Var density, double count);

}  // namespace apseg::dgpom
