#pragma once

// Category-knowledge injection: learnable class queries, initialized from
// text embeddings of per-class descriptions, attend over each pyramid level.
// Each class's attention map re-weights that level's value features; the
// class-specific maps are sampled at the proposals and aggregated into C+1
// logits (last column = background).

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "apseg/autodiff.hpp"
#include "apseg/backbone.hpp"

namespace apseg::cksim {

struct KnowledgeEmbedding {
  enum class Source { File, Pseudo };
  Tensor rows;  // C × C_k, rows L2-normalized
  Source source = Source::Pseudo;
  std::vector<std::string> class_names;

  int num_classes() const { return rows.dim(0); }
  int dim() const { return rows.dim(1); }
};

/// Deterministic stand-in for a text encoder: each description's bytes seed
/// a generator expanded to `dim` values, then L2-normalized.
KnowledgeEmbedding pseudo_embedding(std::span<const std::string> descriptions, int dim);

/// Loads a C_k-dimensional embedding per class from the binary file format
/// (ASCII header "C C_k\n", then C·C_k little-endian float32, row-major) and
/// normalizes rows. Class names come from the optional "<path>.json" sidecar.
KnowledgeEmbedding load_embedding_file(const std::filesystem::path& path, int expected_classes);
void write_embedding_file(const std::filesystem::path& path, const Tensor& rows,
                          std::span<const std::string> class_names);

/// One description per line, in class order.
std::vector<std::string> read_descriptions(const std::filesystem::path& path);

struct LevelProjections {
  ad::Parameter w_k;  // d × C_I
};

struct CksimConfig {
  int num_classes = 4;
  int channels = 16;       // C_I
  int attn_dim = 64;       // d
  int hidden = 32;         // width after the aggregation layer
  bool share_projections = false;
  double foreground_prior = 0.05;  // initial foreground probability of the heads
};

struct CksimParams {
  CksimConfig config;
  ad::Parameter query;  // C × C_k
  ad::Parameter w_q;    // d × C_k
  std::vector<LevelProjections> levels;  // 3, or 1 when shared
  ad::Parameter agg_w, agg_b;    // hidden × (3·C·C_I)
  ad::Parameter head_w, head_b;  // (C+1) × hidden

  std::vector<ad::Parameter*> parameters();
  LevelProjections& level(std::size_t l) { return levels[config.share_projections ? 0 : l]; }
};

/// The query starts as an exact copy of the knowledge embedding.
CksimParams init_cksim(const CksimConfig& config, const KnowledgeEmbedding& knowledge, std::uint64_t seed);

/// Classification head used when category knowledge injection is disabled:
/// a 2-layer perceptron on the multi-level proposal embedding.
struct PlainHeadParams {
  ad::Parameter fc1_w, fc1_b, fc2_w, fc2_b;
  std::vector<ad::Parameter*> parameters();
};

PlainHeadParams init_plain_head(int num_classes, int channels, int hidden, double foreground_prior,
                                std::uint64_t seed);

struct ActivatedLevel {
  ad::Var attention;  // C × (h·w), rows sum to 1
  ad::Var maps;       // (C·C_I) × h × w, class-major
};

std::array<ActivatedLevel, 3> class_activate_pyramid(ad::Tape& tape, const backbone::FeaturePyramid& pyramid,
                                                     CksimParams& params);

/// One level of class activation with explicit operands (exposed for tests).
/// Class i's map is h·w·A_i times the level features, channel by channel, so
/// uniform attention reproduces the features unchanged.
ActivatedLevel activate_level(ad::Var query, ad::Var w_q, ad::Var w_k, ad::Var level_map);

/// K × (C+1) logits from the activated pyramid sampled at the proposals.
ad::Var classify_proposals(ad::Tape& tape, const std::array<ActivatedLevel, 3>& activated, ad::Var proposals,
                           CksimParams& params);

ad::Var classify_plain(ad::Tape& tape, ad::Var embedding, PlainHeadParams& params);

/// Σ_n w[label_n]·(−log softmax(S_n)[label_n]); labels in [0, C], C = background.
ad::Var classification_loss(ad::Var scores, std::span<const int> labels, std::span<const double> class_weights);

/// w_c = 1 for foreground classes and `background_weight` for the background column.
std::vector<double> default_class_weights(int num_classes, double background_weight = 0.3);

}  // namespace apseg::cksim
