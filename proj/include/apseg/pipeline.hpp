#pragma once

// Full auto-prompt model: backbone, distribution-guided proposals, class
// scoring, training loop, prompt export and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "apseg/backbone.hpp"
#include "apseg/cksim.hpp"
#include "apseg/dgpom.hpp"
#include "apseg/matching.hpp"
#include "apseg/synthdata.hpp"
#include "apseg/types.hpp"

namespace apseg::pipeline {

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ModelConfig {
  int num_classes = 4;
  int channels = 16;  // C_I
  std::array<int, 4> stage_widths{8, 16, 24, 32};
  int attn_dim = 64;       // d
  int knowledge_dim = 64;  // C_k for pseudo embeddings
  int head_hidden = 32;
  int stride = 4;  // proposal grid spacing
  bool share_projections = false;
  double foreground_prior = 0.05;
  double background_weight = 0.3;
  double score_threshold = 0.5;
  double suppress_radius = 0.0;  // 0 disables greedy duplicate suppression at export
  bool use_dgpom = true;
  bool use_cksim = true;
  OptimizerConfig optimizer;
  int epochs = 300;
  int checkpoint_every = 0;  // steps; 0 = only the final checkpoint
  matching::LossWeights loss_weights;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-proposal quantities of one forward pass.
struct ProposalSet {
  Tensor initial;         // K×2 grid
  Tensor deform_offsets;  // (ΔX_p, ΔY_p)
  Tensor deformed;        // initial + deform_offsets
  Tensor reg_offsets;     // (ΔX, ΔY)
  Tensor points;          // deformed + reg_offsets
};

struct Prediction {
  ProposalSet proposals;
  Tensor scores;                  // K × (C+1) logits
  std::optional<Tensor> density;  // 1 × H/4 × W/4 when DG-POM is on
  PromptSet prompts;
};

class Model {
 public:
  /// Parameters are initialized from config.seed; each sub-module draws from
  /// its own derived stream so toggling a module never changes the others.
  Model(ModelConfig config, cksim::KnowledgeEmbedding knowledge);
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const cksim::KnowledgeEmbedding& knowledge() const { return knowledge_; }

  /// Parameters that participate in the configured forward pass.
  std::vector<ad::Parameter*> parameters();
  /// Every parameter, including those of disabled modules (checkpoint order).
  std::vector<ad::Parameter*> all_parameters();
  /// Active parameters grouped by module (backbone, dgpom.decoder, ...).
  std::vector<std::pair<std::string, std::vector<ad::Parameter*>>> parameter_groups();

  backbone::BackboneParams& backbone() { return backbone_; }
  dgpom::DgpomParams& dgpom() { return dgpom_; }
  cksim::CksimParams& cksim() { return cksim_; }
  cksim::PlainHeadParams& plain_head() { return plain_; }

 private:
  ModelConfig config_;
  cksim::KnowledgeEmbedding knowledge_;
  backbone::BackboneParams backbone_;
  dgpom::DgpomParams dgpom_;
  cksim::CksimParams cksim_;
  cksim::PlainHeadParams plain_;
};

/// Tape-level outputs of one forward pass.
struct ForwardVars {
  ad::Var initial, deform_offsets, deformed, reg_offsets, points, scores, density;
};

ForwardVars forward(ad::Tape& tape, const Tensor& image_chw, Model& model);

/// Inference forward pass plus prompt export.
Prediction predict(Model& model, const synth::Scene& scene);
Prediction predict(Model& model, const Tensor& image_chw);

/// Keeps proposals whose largest foreground probability is at least `tau`
/// and beats the background probability; class = foreground argmax;
/// coordinates clipped to [0, W−1] × [0, H−1]. With suppress_radius > 0,
/// greedily drops prompts within that distance of a higher-scoring one.
PromptSet export_prompts(const Tensor& points, const Tensor& scores, double tau, int height, int width,
                         double suppress_radius = 0.0);

struct StepResult {
  matching::LossBreakdown loss;
  matching::Assignment assignment;
};

/// Forward, match, losses and backward for one scene. Gradients accumulate
/// into the active parameters' grad buffers (call zero_grad first).
StepResult loss_and_gradients(Model& model, const synth::Scene& scene, bool compute_gradients = true);

/// Loss only (no gradients); used for finite differences.
double total_loss_value(Model& model, const synth::Scene& scene);

class AdamW {
 public:
  explicit AdamW(OptimizerConfig config) : config_(config) {}
  void step(const std::vector<ad::Parameter*>& params);
  long steps() const { return t_; }

 private:
  OptimizerConfig config_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct LossRecord {
  long step = 0;
  matching::LossBreakdown loss;
};

struct TrainOptions {
  /// Directory for checkpoints and loss CSV; empty = nothing written.
  std::filesystem::path out_dir;
  /// Overrides config.epochs when positive: total optimizer steps.
  long max_steps = 0;
  std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
  std::vector<LossRecord> history;
};

/// One optimizer step per scene (batch size 1); scene order is reshuffled
/// every epoch from the config seed. Throws DivergenceError on a non-finite loss.
TrainResult train(Model& model, const std::vector<synth::Scene>& scenes, const TrainOptions& options = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history);

/// Binary checkpoint: magic line, JSON header (config, step, seed, tensor
/// table) and raw little-endian float64 parameter data.
void save_checkpoint(const std::filesystem::path& path, Model& model, long step);
Model load_checkpoint(const std::filesystem::path& path, long* step = nullptr);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

}  // namespace apseg::pipeline
