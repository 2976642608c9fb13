#include "apseg/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "apseg/errors.hpp"
#include "apseg/experiment.hpp"
#include "apseg/pipeline.hpp"
#include "apseg/plot.hpp"
#include "apseg/segmenter.hpp"
#include "apseg/synthdata.hpp"
#include "json.hpp"

namespace apseg::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void reject_unknown(const json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw UsageError("unknown key '" + it.key() + "' in " + where);
}

/// Optional structured config file: {"seed", "generate", "model", "segmenter", "eval"}.
json load_run_config(const fs::path& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("malformed config file " + path.string() + ": " + e.what());
  }
  reject_unknown(j, {"seed", "generate", "model", "segmenter", "eval"}, path.string());
  if (j.contains("generate"))
    reject_unknown(j["generate"],
                   {"scenes", "classes", "height", "width", "count_min", "count_max", "noise_sigma", "min_separation"},
                   "generate section");
  if (j.contains("segmenter"))
    reject_unknown(j["segmenter"], {"radius", "foreground_mask", "foreground_threshold", "command"},
                   "segmenter section");
  if (j.contains("eval")) reject_unknown(j["eval"], {"match_radius"}, "eval section");
  return j;
}

template <class T>
T pick(const CLI::Option* flag, const T& flag_value, const json& section, const char* key, T fallback) {
  if (flag && flag->count()) return flag_value;
  if (section.is_object() && section.contains(key)) {
    try {
      return section.at(key).get<T>();
    } catch (const json::exception& e) {
      throw UsageError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
  return fallback;
}

json section(const json& cfg, const char* name) { return cfg.contains(name) ? cfg.at(name) : json::object(); }

struct Common {
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
  std::string config;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  c.seed_opt = cmd->add_option("--seed", c.seed, "Seed for every random choice");
  auto* o = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) o->required();
  cmd->add_option("--config", c.config, "JSON config file (flags take precedence)")->check(CLI::ExistingFile);
}

std::uint64_t resolve_seed(const Common& c, const json& cfg) {
  return pick<std::uint64_t>(c.seed_opt, c.seed, cfg, "seed", 0);
}

struct SegmenterFlags {
  double radius = 0.0;
  CLI::Option* radius_opt = nullptr;
  bool no_mask = false;
  std::string command;
  CLI::Option* command_opt = nullptr;
  double match_radius = 12.0;
  CLI::Option* match_opt = nullptr;
};

void add_segmenter_flags(CLI::App* cmd, SegmenterFlags& f) {
  f.radius_opt = cmd->add_option("--radius", f.radius, "Segmenter disk radius (default: twice the median nucleus radius)")
                     ->check(CLI::PositiveNumber);
  cmd->add_flag("--no-fg-mask", f.no_mask, "Do not intersect disks with the foreground mask");
  f.command_opt = cmd->add_option("--segmenter-cmd", f.command, "External segmenter command");
  f.match_opt = cmd->add_option("--match-radius", f.match_radius, "Detection match radius in pixels")
                    ->check(CLI::PositiveNumber);
}

experiment::EvalOptions eval_options(const SegmenterFlags& f, const json& cfg, const std::vector<synth::Scene>& scenes) {
  experiment::EvalOptions o;
  o.segmenter = experiment::protocol_segmenter(scenes);
  const json seg = section(cfg, "segmenter");
  o.segmenter.radius = pick<double>(f.radius_opt, f.radius, seg, "radius", o.segmenter.radius);
  o.segmenter.use_foreground_mask = f.no_mask ? false : pick<bool>(nullptr, false, seg, "foreground_mask", true);
  o.segmenter.foreground_threshold =
      pick<double>(nullptr, 0.0, seg, "foreground_threshold", o.segmenter.foreground_threshold);
  o.match_radius = pick<double>(f.match_opt, f.match_radius, section(cfg, "eval"), "match_radius", 12.0);
  if (!(o.segmenter.radius > 0.0) || !(o.match_radius > 0.0)) throw UsageError("radii must be positive");
  return o;
}

std::unique_ptr<segmenter::Segmenter> make_segmenter(const SegmenterFlags& f, const json& cfg,
                                                     const segmenter::SegmenterConfig& baseline,
                                                     const fs::path& work_dir) {
  const std::string command = pick<std::string>(f.command_opt, f.command, section(cfg, "segmenter"), "command", "");
  if (!command.empty()) return std::make_unique<segmenter::ExternalSegmenter>(command, work_dir / "segmenter_io");
  return std::make_unique<segmenter::BaselineSegmenter>(baseline);
}

std::vector<std::string> scene_ids(const synth::Dataset& ds) {
  std::vector<std::string> ids;
  for (const auto& e : ds.manifest.scenes) ids.push_back(e.id);
  return ids;
}

void print_metrics(std::ostream& out, const metrics::SceneMetrics& m) {
  out << std::fixed << std::setprecision(4) << "dice " << m.dice << "  aji " << m.aji << "  pq " << m.pq << "  mpq "
      << m.mpq << "\ndetection P/R/F " << m.det_p << " " << m.det_r << " " << m.det_f << "\nclassification P/R/F "
      << m.cls_p << " " << m.cls_r << " " << m.cls_f << "\n";
  out << std::defaultfloat;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  Common common;
  int scenes = 50, classes = 4, height = 64, width = 64;
  CLI::Option *scenes_opt = nullptr, *classes_opt = nullptr, *height_opt = nullptr, *width_opt = nullptr;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const json cfg = load_run_config(a.common.config);
  const json g = section(cfg, "generate");
  synth::SceneConfig sc;
  const int n = pick<int>(a.scenes_opt, a.scenes, g, "scenes", 50);
  sc.num_classes = pick<int>(a.classes_opt, a.classes, g, "classes", 4);
  sc.height = pick<int>(a.height_opt, a.height, g, "height", sc.height);
  sc.width = pick<int>(a.width_opt, a.width, g, "width", sc.width);
  sc.count_min = pick<int>(nullptr, 0, g, "count_min", sc.count_min);
  sc.count_max = pick<int>(nullptr, 0, g, "count_max", sc.count_max);
  sc.noise_sigma = pick<double>(nullptr, 0.0, g, "noise_sigma", sc.noise_sigma);
  sc.min_separation = pick<double>(nullptr, 0.0, g, "min_separation", sc.min_separation);
  if (n < 1) throw UsageError("--scenes must be at least 1");
  const std::uint64_t seed = resolve_seed(a.common, cfg);
  sc.validate();
  const auto scenes = synth::generate_scenes(sc, n, seed);
  const auto manifest = synth::write_dataset(scenes, a.common.out, sc.num_classes, {}, seed);
  out << "wrote " << manifest.scenes.size() << " scenes (C=" << manifest.num_classes << ", seed " << seed << ") to "
      << a.common.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string data, test, embedding, descriptions;
  int epochs = 0;
  CLI::Option* epochs_opt = nullptr;
  double lr = 0.0;
  CLI::Option* lr_opt = nullptr;
  int stride = 0;
  CLI::Option* stride_opt = nullptr;
  int checkpoint_every = 0;
  CLI::Option* ckpt_every_opt = nullptr;
  bool no_dgpom = false, no_cksim = false, ablate = false;
  std::vector<std::uint64_t> seeds;
  SegmenterFlags seg;
};

pipeline::ModelConfig model_config(const TrainArgs& a, const json& cfg, int num_classes) {
  pipeline::ModelConfig m;
  if (cfg.contains("model")) {
    try {
      m = pipeline::config_from_json(cfg.at("model").dump());
    } catch (const ConfigError& e) {
      throw UsageError(std::string("model section: ") + e.what());
    }
  }
  m.num_classes = num_classes;
  m.seed = resolve_seed(a.common, cfg);
  if (a.epochs_opt->count()) m.epochs = a.epochs;
  if (a.lr_opt->count()) m.optimizer.learning_rate = a.lr;
  if (a.stride_opt->count()) m.stride = a.stride;
  if (a.ckpt_every_opt->count()) m.checkpoint_every = a.checkpoint_every;
  if (a.no_dgpom) m.use_dgpom = false;
  if (a.no_cksim) m.use_cksim = false;
  m.validate();
  return m;
}

cksim::KnowledgeEmbedding knowledge_for(const TrainArgs& a, const pipeline::ModelConfig& m) {
  if (!a.embedding.empty()) return cksim::load_embedding_file(a.embedding, m.num_classes);
  if (!a.descriptions.empty()) {
    const auto d = cksim::read_descriptions(a.descriptions);
    if (static_cast<int>(d.size()) != m.num_classes)
      throw ConsistencyError("description file lists " + std::to_string(d.size()) + " categories, dataset has " +
                             std::to_string(m.num_classes));
    return cksim::pseudo_embedding(d, m.knowledge_dim);
  }
  return pipeline::Model(m).knowledge();
}

int cmd_ablate(const TrainArgs& a, const json& cfg, const synth::Dataset& train_ds, std::ostream& out) {
  if (a.test.empty()) throw UsageError("--ablate needs --test");
  const synth::Dataset test_ds = synth::read_dataset(a.test);
  if (test_ds.manifest.num_classes != train_ds.manifest.num_classes)
    throw ConsistencyError("train and test datasets disagree on the number of classes");
  experiment::AblationOptions o;
  o.base = model_config(a, cfg, train_ds.manifest.num_classes);
  o.seeds = a.seeds.empty() ? std::vector<std::uint64_t>{o.base.seed} : a.seeds;
  o.eval = eval_options(a.seg, cfg, train_ds.scenes);
  o.on_run = [&](const experiment::AblationRow& row, std::uint64_t seed, const metrics::SceneMetrics& m) {
    out << std::fixed << std::setprecision(4) << experiment::ablation_label(row) << " seed " << seed << ": cls_f "
        << m.cls_f << " det_r " << m.det_r << " pq " << m.pq << std::defaultfloat << std::endl;
  };
  const auto rows = experiment::run_ablation(train_ds.scenes, test_ds.scenes, o);
  fs::create_directories(a.common.out);
  experiment::write_ablation_csv(fs::path(a.common.out) / "ablation.csv", rows);
  const std::string table = experiment::format_ablation_table(rows);
  std::ofstream(fs::path(a.common.out) / "ablation.txt") << table;
  out << table;
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const json cfg = load_run_config(a.common.config);
  const synth::Dataset ds = synth::read_dataset(a.data);
  if (ds.scenes.empty()) throw UsageError("dataset " + a.data + " has no scenes");
  if (a.ablate) return cmd_ablate(a, cfg, ds, out);
  const pipeline::ModelConfig m = model_config(a, cfg, ds.manifest.num_classes);
  pipeline::Model model(m, knowledge_for(a, m));
  const fs::path dir = a.common.out;
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << pipeline::config_to_json(m) << "\n";
  pipeline::TrainOptions opts;
  opts.out_dir = dir;
  const long per_epoch = static_cast<long>(ds.scenes.size());
  double epoch_sum = 0.0;
  opts.on_step = [&](const pipeline::LossRecord& r) {
    epoch_sum += r.loss.total;
    if ((r.step + 1) % per_epoch == 0) {
      out << "epoch " << (r.step + 1) / per_epoch << "/" << m.epochs << "  mean loss " << epoch_sum / per_epoch
          << std::endl;
      epoch_sum = 0.0;
    }
  };
  const auto result = pipeline::train(model, ds.scenes, opts);
  out << "trained " << result.history.size() << " steps; checkpoint " << (dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- predict / eval

struct PredictArgs {
  Common common;
  std::string data, checkpoint, prompts;
  SegmenterFlags seg;
};

std::vector<PromptSet> model_prompts(const std::string& checkpoint, const synth::Dataset& ds) {
  pipeline::Model model = pipeline::load_checkpoint(checkpoint);
  if (model.config().num_classes != ds.manifest.num_classes)
    throw ConsistencyError("checkpoint has " + std::to_string(model.config().num_classes) +
                           " classes, dataset has " + std::to_string(ds.manifest.num_classes));
  std::vector<PromptSet> out;
  for (const auto& s : ds.scenes) out.push_back(pipeline::predict(model, s).prompts);
  return out;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const json cfg = load_run_config(a.common.config);
  const synth::Dataset ds = synth::read_dataset(a.data);
  const auto prompts = model_prompts(a.checkpoint, ds);
  const auto opts = eval_options(a.seg, cfg, ds.scenes);
  const fs::path dir = a.common.out;
  fs::create_directories(dir / "prompts");
  fs::create_directories(dir / "masks");
  auto seg = make_segmenter(a.seg, cfg, opts.segmenter, dir);
  const auto ids = scene_ids(ds);
  std::size_t total = 0;
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    segmenter::write_prompts_json(dir / "prompts" / (ids[i] + ".json"), prompts[i]);
    const InstanceMap map = seg->run(ds.scenes[i].image, prompts[i]);
    segmenter::write_instance_map(dir / "masks" / (ids[i] + ".png"), dir / "masks" / (ids[i] + ".json"), map);
    total += prompts[i].size();
  }
  out << "wrote prompts and instance maps for " << ds.scenes.size() << " scenes (" << total << " prompts) to "
      << dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(const PredictArgs& a, std::ostream& out) {
  const json cfg = load_run_config(a.common.config);
  if (a.checkpoint.empty() == a.prompts.empty()) throw UsageError("eval needs exactly one of --checkpoint or --prompts");
  const synth::Dataset ds = synth::read_dataset(a.data);
  const auto ids = scene_ids(ds);
  std::vector<PromptSet> prompts;
  if (!a.checkpoint.empty()) {
    prompts = model_prompts(a.checkpoint, ds);
  } else if (a.prompts == "gt") {
    for (const auto& s : ds.scenes) prompts.push_back(experiment::gt_prompts(s));
  } else {
    if (!fs::is_directory(a.prompts)) throw UsageError("--prompts must be 'gt' or a directory of prompt files");
    for (const auto& id : ids) {
      const fs::path p = fs::path(a.prompts) / (id + ".json");
      prompts.push_back(fs::exists(p) ? segmenter::read_prompts_json(p) : PromptSet{});
    }
  }
  const auto opts = eval_options(a.seg, cfg, ds.scenes);
  const fs::path dir = a.common.out;
  fs::create_directories(dir);
  auto seg = make_segmenter(a.seg, cfg, opts.segmenter, dir);
  const auto r = experiment::evaluate_prompts(ds.scenes, prompts, *seg, opts, ids);
  auto rows = r.rows;
  rows.push_back(r.mean);
  metrics::write_report_csv(dir / "metrics.csv", rows, ds.manifest.num_classes);
  metrics::write_report_json(dir / "metrics.json", r.rows, r.mean);
  out << "evaluated " << ds.scenes.size() << " scenes (segmenter radius " << opts.segmenter.radius << ")\n";
  print_metrics(out, r.mean);
  return kExitOk;
}

// ---------------------------------------------------------------- plot

struct PlotArgs {
  std::string metrics, loss, predictions, data, out;
};

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

double cell_value(const std::vector<std::string>& row, std::size_t i) {
  if (i >= row.size() || row[i].empty()) return std::nan("");
  try {
    return std::stod(row[i]);
  } catch (const std::exception&) {
    throw LoadError("non-numeric cell '" + row[i] + "'");
  }
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw LoadError("missing column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sum += v[i];
    if (i >= window) sum -= v[i - window];
    out[i] = sum / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

int plot_metrics(const fs::path& path, const fs::path& dir, std::ostream& out, std::ostream& err) {
  const auto rows = read_csv(path);
  if (rows.size() < 2) {
    err << "warning: " << path.string() << " has no data rows; nothing plotted\n";
    return 0;
  }
  const auto& header = rows.front();
  int written = 0;
  if (header.front() == "config") {
    // Ablation table: one bar group per metric block, one bar per configuration.
    for (const char* metric : {"cls_f", "det_r", "pq"}) {
      const std::size_t c = column(header, metric);
      std::vector<double> v;
      for (std::size_t i = 1; i < rows.size(); ++i) v.push_back(cell_value(rows[i], c));
      plot::bar_chart(v).save(dir / (std::string("ablation_") + metric + ".png"));
      ++written;
    }
  } else {
    const auto* mean = &rows.back();
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (!rows[i].empty() && rows[i][0] == "mean") mean = &rows[i];
    std::vector<double> per_class;
    for (std::size_t k = 0;; ++k) {
      const auto it = std::find(header.begin(), header.end(), "pq_class_" + std::to_string(k));
      if (it == header.end()) break;
      per_class.push_back(cell_value(*mean, static_cast<std::size_t>(it - header.begin())));
    }
    plot::bar_chart(per_class).save(dir / "pq_per_class.png");
    std::vector<double> summary;
    for (const char* metric : {"dice", "aji", "pq", "det_f", "cls_f"}) summary.push_back(cell_value(*mean, column(header, metric)));
    plot::bar_chart(summary).save(dir / "summary.png");
    written += 2;
  }
  out << "plotted " << path.string() << " (" << written << " figures)\n";
  return written;
}

int plot_loss(const fs::path& path, const fs::path& dir, std::ostream& out, std::ostream& err) {
  const auto rows = read_csv(path);
  if (rows.size() < 2) {
    err << "warning: " << path.string() << " has no data rows; nothing plotted\n";
    return 0;
  }
  const auto& header = rows.front();
  int written = 0;
  for (const char* term : {"total", "l_cls", "l_reg", "l_count"}) {
    const std::size_t c = column(header, term);
    std::vector<double> v;
    for (std::size_t i = 1; i < rows.size(); ++i) v.push_back(cell_value(rows[i], c));
    const std::size_t window = std::max<std::size_t>(1, v.size() / 50);
    plot::line_chart({{"raw", v, {190, 200, 230}}, {"smoothed", moving_average(v, window), {0, 70, 170}}})
        .save(dir / (std::string("loss_") + term + ".png"));
    ++written;
  }
  out << "plotted " << path.string() << " (" << written << " figures)\n";
  return written;
}

int plot_overlays(const fs::path& pred_dir, const fs::path& data_dir, const fs::path& dir, std::ostream& out) {
  const synth::Dataset ds = synth::read_dataset(data_dir);
  const auto ids = scene_ids(ds);
  int written = 0;
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const fs::path prompt_file = pred_dir / "prompts" / (ids[i] + ".json");
    if (!fs::exists(prompt_file)) continue;
    const auto& s = ds.scenes[i];
    const PromptSet prompts = segmenter::read_prompts_json(prompt_file);
    const fs::path mask = pred_dir / "masks" / (ids[i] + ".png");
    const InstanceMap pred = fs::exists(mask)
                                 ? segmenter::read_instance_map(mask, pred_dir / "masks" / (ids[i] + ".json"))
                                 : InstanceMap(s.height(), s.width());
    const auto left = plot::overlay(s.image, s.instances, experiment::gt_prompts(s));
    const auto right = plot::overlay(s.image, pred, prompts);
    plot::side_by_side(left, right).save(dir / ("overlay_" + ids[i] + ".png"));
    ++written;
  }
  out << "plotted " << written << " overlays\n";
  return written;
}

int cmd_plot(const PlotArgs& a, std::ostream& out, std::ostream& err) {
  if (a.metrics.empty() && a.loss.empty() && a.predictions.empty())
    throw UsageError("plot needs --metrics, --loss or --predictions");
  if (!a.predictions.empty() && a.data.empty()) throw UsageError("--predictions needs --data for the images");
  const fs::path dir = a.out;
  fs::create_directories(dir);
  int written = 0;
  if (!a.metrics.empty()) written += plot_metrics(a.metrics, dir, out, err);
  if (!a.loss.empty()) written += plot_loss(a.loss, dir, out, err);
  if (!a.predictions.empty()) written += plot_overlays(a.predictions, a.data, dir, out);
  if (written == 0 && fs::is_empty(dir)) fs::remove(dir);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Automatic point prompts for nucleus instance segmentation", "apseg"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic dataset");
  add_common(g, gen.common, true);
  gen.scenes_opt = g->add_option("--scenes", gen.scenes, "Number of scenes");
  gen.classes_opt = g->add_option("--classes", gen.classes, "Number of nucleus classes");
  gen.height_opt = g->add_option("--height", gen.height, "Scene height");
  gen.width_opt = g->add_option("--width", gen.width, "Scene width");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model (or the four-way ablation grid with --ablate)");
  add_common(t, tr.common, true);
  t->add_option("--data", tr.data, "Training dataset")->required()->check(CLI::ExistingDirectory);
  t->add_option("--test", tr.test, "Test dataset for --ablate")->check(CLI::ExistingDirectory);
  tr.epochs_opt = t->add_option("--epochs", tr.epochs, "Passes over the training set")->check(CLI::NonNegativeNumber);
  tr.lr_opt = t->add_option("--lr", tr.lr, "AdamW learning rate")->check(CLI::PositiveNumber);
  tr.stride_opt = t->add_option("--stride", tr.stride, "Proposal grid spacing")->check(CLI::PositiveNumber);
  tr.ckpt_every_opt = t->add_option("--checkpoint-every", tr.checkpoint_every, "Extra checkpoint interval in steps");
  t->add_flag("--no-dgpom", tr.no_dgpom, "Disable the distribution-guided proposal offsets");
  t->add_flag("--no-cksim", tr.no_cksim, "Disable class-knowledge scoring");
  t->add_flag("--ablate", tr.ablate, "Train and evaluate all four module combinations");
  t->add_option("--seeds", tr.seeds, "Paired seeds for --ablate")->delimiter(',');
  t->add_option("--embedding", tr.embedding, "Class embedding file")->check(CLI::ExistingFile);
  t->add_option("--descriptions", tr.descriptions, "One category description per line")->check(CLI::ExistingFile);
  add_segmenter_flags(t, tr.seg);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Export prompts and instance maps");
  add_common(p, pr.common, true);
  p->add_option("--data", pr.data, "Dataset")->required()->check(CLI::ExistingDirectory);
  p->add_option("--checkpoint", pr.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  add_segmenter_flags(p, pr.seg);

  PredictArgs ev;
  auto* e = app.add_subcommand("eval", "Score prompts on a dataset");
  add_common(e, ev.common, true);
  e->add_option("--data", ev.data, "Dataset")->required()->check(CLI::ExistingDirectory);
  e->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint")->check(CLI::ExistingFile);
  e->add_option("--prompts", ev.prompts, "'gt' for ground-truth prompts, or a directory of prompt files");
  add_segmenter_flags(e, ev.seg);

  PlotArgs pl;
  auto* f = app.add_subcommand("plot", "Render figures from metrics, loss and prediction files");
  f->add_option("--out", pl.out, "Output directory")->required();
  f->add_option("--metrics", pl.metrics, "Metrics or ablation CSV")->check(CLI::ExistingFile);
  f->add_option("--loss", pl.loss, "Loss CSV from train")->check(CLI::ExistingFile);
  f->add_option("--predictions", pl.predictions, "Output directory of predict")->check(CLI::ExistingDirectory);
  f->add_option("--data", pl.data, "Dataset the predictions belong to")->check(CLI::ExistingDirectory);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (p->parsed()) return cmd_predict(pr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (f->parsed()) return cmd_plot(pl, out, err);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace apseg::cli
