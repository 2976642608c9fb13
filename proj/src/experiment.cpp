#include "apseg/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "apseg/errors.hpp"

namespace apseg::experiment {

segmenter::SegmenterConfig protocol_segmenter(const std::vector<synth::Scene>& reference) {
  segmenter::SegmenterConfig c;
  c.radius = 2.0 * synth::median_equivalent_radius(reference);
  if (!(c.radius > 0.0)) c.radius = 5.0;
  c.use_foreground_mask = true;
  c.foreground_threshold = 0.8;
  return c;
}

PromptSet gt_prompts(const synth::Scene& scene) {
  PromptSet out;
  for (int i = 0; i < scene.n(); ++i)
    out.push_back({scene.points[static_cast<std::size_t>(i)], scene.classes[static_cast<std::size_t>(i)], 1.0});
  return out;
}

EvalResult evaluate_prompts(const std::vector<synth::Scene>& scenes, const std::vector<PromptSet>& prompts,
                            segmenter::Segmenter& seg, const EvalOptions& options,
                            const std::vector<std::string>& names) {
  if (prompts.size() != scenes.size()) throw ArgumentError("one prompt set per scene is required");
  EvalResult r;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    InstanceMap pred = seg.run(s.image, prompts[i]);
    const std::string name = i < names.size() ? names[i] : std::to_string(i);
    r.rows.push_back(
        metrics::evaluate_scene(name, pred, s.instances, prompts[i], s.points, s.classes, options.match_radius));
    r.prompts.push_back(prompts[i]);
    r.instance_maps.push_back(std::move(pred));
  }
  r.mean = metrics::aggregate(r.rows);
  return r;
}

EvalResult evaluate_model(pipeline::Model& model, const std::vector<synth::Scene>& scenes, const EvalOptions& options,
                          const std::vector<std::string>& names) {
  std::vector<PromptSet> prompts;
  for (const auto& s : scenes) prompts.push_back(pipeline::predict(model, s).prompts);
  segmenter::BaselineSegmenter seg(options.segmenter);
  return evaluate_prompts(scenes, prompts, seg, options, names);
}

std::vector<AblationRow> run_ablation(const std::vector<synth::Scene>& train, const std::vector<synth::Scene>& test,
                                      const AblationOptions& options) {
  if (options.seeds.empty()) throw ArgumentError("ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (auto [dg, ck] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
    AblationRow row;
    row.use_dgpom = dg;
    row.use_cksim = ck;
    for (std::uint64_t seed : options.seeds) {
      pipeline::ModelConfig cfg = options.base;
      cfg.use_dgpom = dg;
      cfg.use_cksim = ck;
      cfg.seed = seed;
      pipeline::Model model(cfg);
      pipeline::train(model, train);
      const EvalResult r = evaluate_model(model, test, options.eval);
      row.per_seed.push_back(r.mean);
      if (options.on_run) options.on_run(row, seed, r.mean);
    }
    row.mean = metrics::aggregate(row.per_seed, ablation_label(row));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_label(const AblationRow& row) {
  if (row.use_dgpom && row.use_cksim) return "full";
  if (row.use_dgpom) return "+dgpom";
  if (row.use_cksim) return "+cksim";
  return "baseline";
}

namespace {

std::vector<double> table_values(const metrics::SceneMetrics& m) {
  return {m.cls_p, m.cls_r, m.cls_f, m.det_p, m.det_r, m.det_f, m.dice, m.aji, m.pq, m.bpq, m.mpq};
}

}  // namespace

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot create " + path.string());
  out << "config,dgpom,cksim,cls_p,cls_r,cls_f,det_p,det_r,det_f,dice,aji,pq,bpq,mpq\n";
  char buf[64];
  for (const auto& r : rows) {
    out << ablation_label(r) << "," << r.use_dgpom << "," << r.use_cksim;
    for (double v : table_values(r.mean)) {
      std::snprintf(buf, sizeof buf, ",%.10g", v);
      out << buf;
    }
    out << "\n";
  }
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-9s %-6s %-6s | %-20s | %-20s | %-20s\n", "config", "DG-POM", "CK-SIM",
                "Classification P/R/F", "Detection P/R/F", "Segm. Dice/AJI/PQ");
  os << buf;
  for (const auto& r : rows) {
    const auto& m = r.mean;
    std::snprintf(buf, sizeof buf, "%-9s %-6s %-6s | %.3f %.3f %.3f    | %.3f %.3f %.3f    | %.3f %.3f %.3f\n",
                  ablation_label(r).c_str(), r.use_dgpom ? "yes" : "no", r.use_cksim ? "yes" : "no", m.cls_p,
                  m.cls_r, m.cls_f, m.det_p, m.det_r, m.det_f, m.dice, m.aji, m.pq);
    os << buf;
  }
  return os.str();
}

}  // namespace apseg::experiment
