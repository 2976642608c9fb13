#pragma once

// Evaluation loop (predict, segment, score) and the four-way ablation grid
// over the proposal-offset and class-knowledge modules.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "apseg/metrics.hpp"
#include "apseg/pipeline.hpp"
#include "apseg/segmenter.hpp"
#include "apseg/synthdata.hpp"

namespace apseg::experiment {

/// Evaluation segmenter: lattice disk of twice the median ground-truth
/// equivalent radius of `reference`, intersected with a foreground mask.
segmenter::SegmenterConfig protocol_segmenter(const std::vector<synth::Scene>& reference);

struct EvalOptions {
  segmenter::SegmenterConfig segmenter;
  double match_radius = 12.0;
};

struct EvalResult {
  std::vector<metrics::SceneMetrics> rows;
  metrics::SceneMetrics mean;
  std::vector<PromptSet> prompts;
  std::vector<InstanceMap> instance_maps;
};

/// Ground-truth points and classes as prompts (score 1).
PromptSet gt_prompts(const synth::Scene& scene);

/// Scores a prompt set per scene (prompts[i] belongs to scenes[i]).
EvalResult evaluate_prompts(const std::vector<synth::Scene>& scenes, const std::vector<PromptSet>& prompts,
                            segmenter::Segmenter& seg, const EvalOptions& options,
                            const std::vector<std::string>& names = {});

EvalResult evaluate_model(pipeline::Model& model, const std::vector<synth::Scene>& scenes, const EvalOptions& options,
                          const std::vector<std::string>& names = {});

struct AblationRow {
  bool use_dgpom = false;
  bool use_cksim = false;
  std::vector<metrics::SceneMetrics> per_seed;  // test-set means, one per seed
  metrics::SceneMetrics mean;                   // mean over seeds
};

struct AblationOptions {
  pipeline::ModelConfig base;
  std::vector<std::uint64_t> seeds{0};
  EvalOptions eval;
  /// Called after each (configuration, seed) run.
  std::function<void(const AblationRow&, std::uint64_t seed, const metrics::SceneMetrics&)> on_run;
};

/// Rows in order: baseline, +DG-POM, +CK-SIM, full. Every configuration is
/// trained from the same seeds on the same scenes.
std::vector<AblationRow> run_ablation(const std::vector<synth::Scene>& train, const std::vector<synth::Scene>& test,
                                      const AblationOptions& options);

std::string ablation_label(const AblationRow& row);

/// Columns: config, dgpom, cksim, cls_p, cls_r, cls_f, det_p, det_r, det_f, dice, aji, pq, bpq, mpq.
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace apseg::experiment
