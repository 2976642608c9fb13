#include "apseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "apseg/errors.hpp"
#include "apseg/init.hpp"
#include "apseg/rng.hpp"
#include "json.hpp"

namespace apseg::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum SeedTag : std::uint64_t { kBackbone = 1, kDgpom = 2, kCksim = 3, kPlain = 4, kShuffle = 5 };

std::vector<std::string> default_descriptions(int num_classes) {
  static const char* known[] = {
      "small round nucleus with dense dark chromatin, often clustered",
      "medium oval nucleus with pale vesicular chromatin in cohesive sheets",
      "long thin spindle-shaped nucleus aligned with surrounding fibres",
      "large round pale nucleus with irregular texture",
  };
  std::vector<std::string> out;
  for (int k = 0; k < num_classes; ++k)
    out.push_back(k < 4 ? known[k] : "nucleus category " + std::to_string(k));
  return out;
}

cksim::CksimConfig cksim_config(const ModelConfig& c) {
  cksim::CksimConfig k;
  k.num_classes = c.num_classes;
  k.channels = c.channels;
  k.attn_dim = c.attn_dim;
  k.hidden = c.head_hidden;
  k.share_projections = c.share_projections;
  k.foreground_prior = c.foreground_prior;
  return k;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (channels < 8) throw ConfigError("channels (C_I) must be at least 8");
  if (attn_dim < 1 || knowledge_dim < 1 || head_hidden < 1) throw ConfigError("layer widths must be positive");
  if (stride < 1) throw ConfigError("stride must be positive");
  if (!(score_threshold > 0.0 && score_threshold < 1.0)) throw ConfigError("score threshold must be in (0, 1)");
  if (!(foreground_prior > 0.0 && foreground_prior < 1.0)) throw ConfigError("foreground prior must be in (0, 1)");
  if (background_weight < 0.0) throw ConfigError("background weight must be non-negative");
  if (optimizer.learning_rate <= 0.0 || optimizer.weight_decay < 0.0) throw ConfigError("invalid optimizer settings");
  if (epochs < 0 || checkpoint_every < 0) throw ConfigError("epochs and checkpoint interval must be non-negative");
}

Model::Model(ModelConfig config, cksim::KnowledgeEmbedding knowledge)
    : config_(config),
      knowledge_(std::move(knowledge)),
      backbone_(backbone::init_backbone({config.channels, config.stage_widths}, derive_seed(config.seed, kBackbone))),
      dgpom_(dgpom::init_dgpom(config.channels, derive_seed(config.seed, kDgpom))),
      cksim_(cksim::init_cksim(cksim_config(config), knowledge_, derive_seed(config.seed, kCksim))),
      plain_(cksim::init_plain_head(config.num_classes, config.channels, config.head_hidden, config.foreground_prior,
                                    derive_seed(config.seed, kPlain))) {
  config_.validate();
}

Model::Model(ModelConfig config)
    : Model(config, cksim::pseudo_embedding(default_descriptions(config.num_classes), config.knowledge_dim)) {}

std::vector<std::pair<std::string, std::vector<ad::Parameter*>>> Model::parameter_groups() {
  std::vector<std::pair<std::string, std::vector<ad::Parameter*>>> g;
  g.emplace_back("backbone", backbone_.parameters());
  if (config_.use_dgpom) {
    g.emplace_back("dgpom.decoder", dgpom_.decoder_parameters());
    g.emplace_back("dgpom.deform", dgpom_.deform_parameters());
    g.emplace_back("dgpom.density", dgpom_.density_parameters());
  }
  g.emplace_back("dgpom.regression", dgpom_.regression_parameters());
  if (config_.use_cksim)
    g.emplace_back("cksim", cksim_.parameters());
  else
    g.emplace_back("plain_head", plain_.parameters());
  return g;
}

std::vector<ad::Parameter*> Model::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& [name, ps] : parameter_groups()) out.insert(out.end(), ps.begin(), ps.end());
  return out;
}

std::vector<ad::Parameter*> Model::all_parameters() {
  std::vector<ad::Parameter*> out = backbone_.parameters();
  for (auto&& ps : {dgpom_.decoder_parameters(), dgpom_.deform_parameters(), dgpom_.regression_parameters(),
                    dgpom_.density_parameters()})
    out.insert(out.end(), ps.begin(), ps.end());
  for (auto* p : cksim_.parameters()) out.push_back(p);
  for (auto* p : plain_.parameters()) out.push_back(p);
  return out;
}

ForwardVars forward(ad::Tape& tape, const Tensor& image_chw, Model& model) {
  const ModelConfig& cfg = model.config();
  if (image_chw.rank() != 3 || image_chw.dim(0) != 3) throw ShapeError("forward expects a 3×H×W image");
  const int h = image_chw.dim(1), w = image_chw.dim(2);
  backbone::check_input_size(h, w);

  ForwardVars fv;
  fv.initial = tape.constant(dgpom::make_proposal_grid(h, w, cfg.stride));
  const backbone::FeaturePyramid pyr =
      backbone::extract_pyramid(tape, tape.constant(image_chw), model.backbone());

  if (cfg.use_dgpom) {
    ad::Var decoded = dgpom::distribution_decode(tape, pyr.shallow(), model.dgpom());
    const dgpom::Offsets d = dgpom::deform_proposals(tape, decoded, fv.initial, model.dgpom());
    fv.deform_offsets = d.offsets;
    fv.deformed = d.moved;
    fv.density = dgpom::density_map(tape, decoded, model.dgpom());
  } else {
    const int k = fv.initial.value().dim(0);
    fv.deform_offsets = tape.constant(Tensor({k, 2}, 0.0));
    fv.deformed = fv.initial;
  }
  const dgpom::Offsets r = dgpom::regress_points(tape, pyr, fv.deformed, model.dgpom());
  fv.reg_offsets = r.offsets;
  fv.points = r.moved;

  if (cfg.use_cksim) {
    const auto activated = cksim::class_activate_pyramid(tape, pyr, model.cksim());
    fv.scores = cksim::classify_proposals(tape, activated, fv.deformed, model.cksim());
  } else {
    fv.scores = cksim::classify_plain(tape, dgpom::sample_pyramid(pyr, fv.deformed), model.plain_head());
  }
  return fv;
}

PromptSet export_prompts(const Tensor& points, const Tensor& scores, double tau, int height, int width,
                         double suppress_radius) {
  if (!(tau > 0.0 && tau < 1.0)) throw ArgumentError("score threshold must be in (0, 1)");
  const int k = points.dim(0), m = scores.dim(1), c = m - 1;
  if (scores.dim(0) != k) throw ShapeError("export_prompts: points and scores disagree on K");
  struct Candidate {
    int index;
    Prompt prompt;
  };
  std::vector<Candidate> kept;
  for (int i = 0; i < k; ++i) {
    double mx = scores.at(i, 0);
    for (int j = 1; j < m; ++j) mx = std::max(mx, scores.at(i, j));
    double z = 0.0;
    for (int j = 0; j < m; ++j) z += std::exp(scores.at(i, j) - mx);
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (scores.at(i, j) > scores.at(i, best)) best = j;
    const double p_fg = std::exp(scores.at(i, best) - mx) / z;
    const double p_bg = std::exp(scores.at(i, c) - mx) / z;
    if (p_fg < tau || p_fg <= p_bg) continue;
    Prompt p;
    p.point = {std::clamp(points.at(i, 0), 0.0, static_cast<double>(width - 1)),
               std::clamp(points.at(i, 1), 0.0, static_cast<double>(height - 1))};
    p.class_id = best;
    p.score = p_fg;
    kept.push_back({i, p});
  }
  if (suppress_radius > 0.0) {
    std::vector<std::size_t> order(kept.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return kept[a].prompt.score > kept[b].prompt.score; });
    std::vector<char> alive(kept.size(), 1);
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      const std::size_t a = order[oi];
      if (!alive[a]) continue;
      for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
        const std::size_t b = order[oj];
        if (alive[b] && std::hypot(kept[a].prompt.point.x - kept[b].prompt.point.x,
                                   kept[a].prompt.point.y - kept[b].prompt.point.y) <= suppress_radius)
          alive[b] = 0;
      }
    }
    std::vector<Candidate> survivors;
    for (std::size_t i = 0; i < kept.size(); ++i)
      if (alive[i]) survivors.push_back(kept[i]);
    kept = std::move(survivors);
  }
  PromptSet out;
  for (auto& c2 : kept) out.push_back(c2.prompt);
  return out;
}

Prediction predict(Model& model, const Tensor& image_chw) {
  ad::Tape tape(false);
  const ForwardVars fv = forward(tape, image_chw, model);
  Prediction p;
  p.proposals = {fv.initial.value(), fv.deform_offsets.value(), fv.deformed.value(), fv.reg_offsets.value(),
                 fv.points.value()};
  p.scores = fv.scores.value();
  if (fv.density.valid()) p.density = fv.density.value();
  const ModelConfig& cfg = model.config();
  p.prompts = export_prompts(p.proposals.points, p.scores, cfg.score_threshold, image_chw.dim(1), image_chw.dim(2),
                             cfg.suppress_radius);
  return p;
}

Prediction predict(Model& model, const synth::Scene& scene) { return predict(model, scene.image_chw()); }

StepResult loss_and_gradients(Model& model, const synth::Scene& scene, bool compute_gradients) {
  const ModelConfig& cfg = model.config();
  ad::Tape tape(compute_gradients);
  const ForwardVars fv = forward(tape, scene.image_chw(), model);
  StepResult r;
  r.assignment = matching::match_points(fv.points.value(), scene.points);
  const auto labels =
      matching::assign_labels(r.assignment, fv.points.value().dim(0), scene.classes, cfg.num_classes);
  const auto weights = cksim::default_class_weights(cfg.num_classes, cfg.background_weight);
  ad::Var l_cls = cksim::classification_loss(fv.scores, labels, weights);
  ad::Var l_reg = matching::regression_loss(fv.points, scene.points, r.assignment);
  ad::Var l_count = cfg.use_dgpom ? dgpom::count_loss(fv.density, scene.n()) : tape.constant(Tensor({1}, 0.0));
  const matching::TotalLoss total = matching::total_loss(l_cls, l_reg, l_count, cfg.loss_weights);
  r.loss = total.breakdown;
  if (compute_gradients) tape.backward(total.total);
  return r;
}

double total_loss_value(Model& model, const synth::Scene& scene) {
  return loss_and_gradients(model, scene, false).loss.total;
}

void AdamW::step(const std::vector<ad::Parameter*>& params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->value.shape);
      v_.emplace_back(p->value.shape);
    }
  }
  if (m_.size() != params.size()) throw ArgumentError("AdamW: parameter list changed between steps");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2, lr = config_.learning_rate;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Parameter& p = *params[k];
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.value[i] -= lr * config_.weight_decay * p.value[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

void write_loss_csv(const fs::path& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot create " + path.string());
  out << "step,l_cls,l_reg,l_count,total\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss.l_cls, r.loss.l_reg,
                  r.loss.l_count, r.loss.total);
    out << buf;
  }
}

TrainResult train(Model& model, const std::vector<synth::Scene>& scenes, const TrainOptions& options) {
  if (scenes.empty()) throw ArgumentError("train: empty dataset");
  const ModelConfig& cfg = model.config();
  const long total_steps =
      options.max_steps > 0 ? options.max_steps : static_cast<long>(cfg.epochs) * static_cast<long>(scenes.size());
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  auto params = model.parameters();
  AdamW opt(cfg.optimizer);
  Rng shuffle_rng(derive_seed(cfg.seed, kShuffle));
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;

  for (long step = 0; step < total_steps; ++step) {
    const std::size_t pos = static_cast<std::size_t>(step) % scenes.size();
    if (pos == 0) {
      // Fisher-Yates with the library generator keeps the order portable.
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.next() % i)]);
    }
    for (auto* p : params) p->zero_grad();
    StepResult r;
    try {
      r = loss_and_gradients(model, scenes[order[pos]]);
    } catch (const NumericError& e) {
      throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(r.loss.total))
      throw DivergenceError("training diverged at step " + std::to_string(step) +
                            " (l_cls=" + std::to_string(r.loss.l_cls) + ", l_reg=" + std::to_string(r.loss.l_reg) +
                            ", l_count=" + std::to_string(r.loss.l_count) + ")");
    opt.step(params);
    LossRecord rec{step, r.loss};
    result.history.push_back(rec);
    if (options.on_step) options.on_step(rec);
    if (!options.out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < total_steps) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06ld.bin", step + 1);
      save_checkpoint(options.out_dir / name, model, step + 1);
    }
  }
  if (!options.out_dir.empty()) {
    save_checkpoint(options.out_dir / "checkpoint.bin", model, total_steps);
    write_loss_csv(options.out_dir / "loss.csv", result.history);
  }
  return result;
}

std::string config_to_json(const ModelConfig& c) {
  json j{{"num_classes", c.num_classes},
         {"channels", c.channels},
         {"stage_widths", c.stage_widths},
         {"attn_dim", c.attn_dim},
         {"knowledge_dim", c.knowledge_dim},
         {"head_hidden", c.head_hidden},
         {"stride", c.stride},
         {"share_projections", c.share_projections},
         {"foreground_prior", c.foreground_prior},
         {"background_weight", c.background_weight},
         {"score_threshold", c.score_threshold},
         {"suppress_radius", c.suppress_radius},
         {"use_dgpom", c.use_dgpom},
         {"use_cksim", c.use_cksim},
         {"learning_rate", c.optimizer.learning_rate},
         {"weight_decay", c.optimizer.weight_decay},
         {"epochs", c.epochs},
         {"checkpoint_every", c.checkpoint_every},
         {"w_cls", c.loss_weights.cls},
         {"w_reg", c.loss_weights.reg},
         {"w_count", c.loss_weights.count},
         {"seed", c.seed}};
  return j.dump(1);
}

ModelConfig config_from_json(const std::string& text) {
  ModelConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  static const std::vector<std::string> known = {
      "num_classes", "channels", "stage_widths", "attn_dim", "knowledge_dim", "head_hidden", "stride",
      "share_projections", "foreground_prior", "background_weight", "score_threshold", "suppress_radius",
      "use_dgpom", "use_cksim", "learning_rate", "weight_decay", "epochs", "checkpoint_every", "w_cls", "w_reg",
      "w_count", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown config key: " + it.key());
  try {
    c.num_classes = j.value("num_classes", c.num_classes);
    c.channels = j.value("channels", c.channels);
    c.stage_widths = j.value("stage_widths", c.stage_widths);
    c.attn_dim = j.value("attn_dim", c.attn_dim);
    c.knowledge_dim = j.value("knowledge_dim", c.knowledge_dim);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.stride = j.value("stride", c.stride);
    c.share_projections = j.value("share_projections", c.share_projections);
    c.foreground_prior = j.value("foreground_prior", c.foreground_prior);
    c.background_weight = j.value("background_weight", c.background_weight);
    c.score_threshold = j.value("score_threshold", c.score_threshold);
    c.suppress_radius = j.value("suppress_radius", c.suppress_radius);
    c.use_dgpom = j.value("use_dgpom", c.use_dgpom);
    c.use_cksim = j.value("use_cksim", c.use_cksim);
    c.optimizer.learning_rate = j.value("learning_rate", c.optimizer.learning_rate);
    c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.loss_weights.cls = j.value("w_cls", c.loss_weights.cls);
    c.loss_weights.reg = j.value("w_reg", c.loss_weights.reg);
    c.loss_weights.count = j.value("w_count", c.loss_weights.count);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

constexpr char kMagic[] = "APSEG-CHECKPOINT-1\n";

}  // namespace

void save_checkpoint(const fs::path& path, Model& model, long step) {
  std::vector<ad::Parameter*> params = model.all_parameters();
  const Tensor& know = model.knowledge().rows;
  json table = json::array();
  std::size_t offset = 0;
  auto add_entry = [&](const std::string& name, const Tensor& t) {
    table.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.size();
  };
  for (auto* p : params) add_entry(p->name, p->value);
  add_entry("knowledge.rows", know);
  json header{{"config", json::parse(config_to_json(model.config()))},
              {"step", step},
              {"seed", model.config().seed},
              {"knowledge_source", model.knowledge().source == cksim::KnowledgeEmbedding::Source::File ? "file" : "pseudo"},
              {"class_names", model.knowledge().class_names},
              {"tensors", table}};
  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot create checkpoint " + path.string());
  out << kMagic << hs.size() << "\n" << hs;
  auto write_tensor = [&](const Tensor& t) {
    for (double v : t.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      unsigned char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  };
  for (auto* p : params) write_tensor(p->value);
  write_tensor(know);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const fs::path& path, long* step) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic + "\n" != kMagic) throw LoadError("not a checkpoint file: " + path.string());
  std::string len_line;
  std::getline(in, len_line);
  std::size_t len = 0;
  try {
    len = std::stoul(len_line);
  } catch (const std::exception&) {
    throw LoadError("corrupt checkpoint header in " + path.string());
  }
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw LoadError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  std::vector<double> data;
  for (unsigned char b[8]; in.read(reinterpret_cast<char*>(b), 8);) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    data.push_back(v);
  }
  const ModelConfig cfg = config_from_json(header.at("config").dump());
  auto tensor_at = [&](const json& e) {
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    const std::size_t off = e.at("offset").get<std::size_t>();
    const std::size_t n = element_count(shape);
    if (off + n > data.size()) throw LoadError("truncated checkpoint data in " + path.string());
    return Tensor(shape, std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(off),
                                             data.begin() + static_cast<std::ptrdiff_t>(off + n)));
  };
  std::map<std::string, Tensor> tensors;
  for (const auto& e : header.at("tensors")) tensors[e.at("name").get<std::string>()] = tensor_at(e);
  if (!tensors.count("knowledge.rows")) throw LoadError("checkpoint lacks knowledge embedding: " + path.string());
  cksim::KnowledgeEmbedding know;
  know.rows = tensors["knowledge.rows"];
  know.source = header.value("knowledge_source", std::string("pseudo")) == "file"
                    ? cksim::KnowledgeEmbedding::Source::File
                    : cksim::KnowledgeEmbedding::Source::Pseudo;
  know.class_names = header.value("class_names", std::vector<std::string>{});
  Model model(cfg, know);
  for (auto* p : model.all_parameters()) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw LoadError("checkpoint lacks parameter " + p->name);
    if (it->second.shape != p->value.shape) throw LoadError("shape mismatch for parameter " + p->name);
    p->value = it->second;
  }
  if (step) *step = header.value("step", 0L);
  return model;
}

}  // namespace apseg::pipeline
