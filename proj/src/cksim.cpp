#include "apseg/cksim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "apseg/errors.hpp"
#include "apseg/init.hpp"
#include "json.hpp"

namespace apseg::cksim {

namespace {

void normalize_rows(Tensor& rows) {
  const int c = rows.dim(0), k = rows.dim(1);
  for (int i = 0; i < c; ++i) {
    double n = 0.0;
    for (int j = 0; j < k; ++j) n += rows.at(i, j) * rows.at(i, j);
    n = std::sqrt(n);
    if (n == 0.0) throw NumericError("embedding row " + std::to_string(i) + " has zero norm");
    for (int j = 0; j < k; ++j) rows.at(i, j) /= n;
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Bias vector giving the background column probability 1 − prior.
Tensor prior_bias(int num_classes, double prior) {
  if (prior <= 0.0 || prior >= 1.0) throw ConfigError("foreground prior must be in (0, 1)");
  Tensor b({num_classes + 1}, 0.0);
  b[static_cast<std::size_t>(num_classes)] = std::log((1.0 - prior) * num_classes / prior);
  return b;
}

}  // namespace

KnowledgeEmbedding pseudo_embedding(std::span<const std::string> descriptions, int dim) {
  if (descriptions.empty()) throw ArgumentError("no category descriptions");
  if (dim < 1) throw ConfigError("embedding dimension must be positive");
  KnowledgeEmbedding e;
  e.rows = Tensor({static_cast<int>(descriptions.size()), dim});
  for (std::size_t i = 0; i < descriptions.size(); ++i) {
    Rng rng(fnv1a(descriptions[i]));
    for (int j = 0; j < dim; ++j) e.rows.at(static_cast<int>(i), j) = rng.normal();
    e.class_names.push_back("class_" + std::to_string(i));
  }
  normalize_rows(e.rows);
  e.source = KnowledgeEmbedding::Source::Pseudo;
  return e;
}

KnowledgeEmbedding load_embedding_file(const std::filesystem::path& path, int expected_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open embedding file " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  int c = 0, k = 0;
  if (!(hs >> c >> k) || c <= 0 || k <= 0) throw LoadError("bad embedding header in " + path.string());
  if (c != expected_classes)
    throw ConsistencyError("embedding file " + path.string() + " has " + std::to_string(c) + " rows, expected " +
                           std::to_string(expected_classes));
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(c) * k);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(raw.size() * 4))
    throw LoadError("truncated embedding data in " + path.string());
  KnowledgeEmbedding e;
  e.rows = Tensor({c, k});
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::uint32_t bits = raw[i];
    if constexpr (std::endian::native == std::endian::big)
      bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
    const double v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) throw NumericError("non-finite value in embedding file " + path.string());
    e.rows[i] = v;
  }
  normalize_rows(e.rows);
  e.source = KnowledgeEmbedding::Source::File;
  const std::filesystem::path sidecar = path.string() + ".json";
  if (std::filesystem::exists(sidecar)) {
    std::ifstream js(sidecar);
    try {
      e.class_names = nlohmann::json::parse(js).at("class_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& ex) {
      throw LoadError("malformed sidecar " + sidecar.string() + ": " + ex.what());
    }
    if (static_cast<int>(e.class_names.size()) != c)
      throw ConsistencyError("sidecar " + sidecar.string() + " lists a different number of classes");
  } else {
    for (int i = 0; i < c; ++i) e.class_names.push_back("class_" + std::to_string(i));
  }
  return e;
}

void write_embedding_file(const std::filesystem::path& path, const Tensor& rows,
                          std::span<const std::string> class_names) {
  if (rows.rank() != 2) throw ShapeError("embedding must be a C×C_k matrix");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot create " + path.string());
  out << rows.dim(0) << " " << rows.dim(1) << "\n";
  for (double v : rows.data) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    if constexpr (std::endian::native == std::endian::big)
      bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
    out.write(reinterpret_cast<const char*>(&bits), 4);
  }
  if (!class_names.empty()) {
    std::ofstream js(path.string() + ".json");
    js << nlohmann::json{{"class_names", std::vector<std::string>(class_names.begin(), class_names.end())}}.dump(1)
       << "\n";
  }
}

std::vector<std::string> read_descriptions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open description file " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<ad::Parameter*> CksimParams::parameters() {
  std::vector<ad::Parameter*> out{&query, &w_q};
  for (auto& l : levels) out.push_back(&l.w_k);
  for (auto* p : {&agg_w, &agg_b, &head_w, &head_b}) out.push_back(p);
  return out;
}

CksimParams init_cksim(const CksimConfig& cfg, const KnowledgeEmbedding& knowledge, std::uint64_t seed) {
  if (knowledge.num_classes() != cfg.num_classes)
    throw ConsistencyError("knowledge embedding has " + std::to_string(knowledge.num_classes()) +
                           " rows but the model has " + std::to_string(cfg.num_classes) + " classes");
  if (cfg.attn_dim < 1 || cfg.hidden < 1 || cfg.channels < 1) throw ConfigError("invalid CK-SIM dimensions");
  Rng rng(seed);
  const int c = cfg.num_classes, ci = cfg.channels, d = cfg.attn_dim, ck = knowledge.dim();
  CksimParams p{cfg,
                ad::Parameter("cksim.query", knowledge.rows),
                he_normal("cksim.w_q", {d, ck}, ck, rng),
                {},
                he_normal("cksim.agg.w", {cfg.hidden, 3 * c * ci}, 3 * c * ci, rng),
                filled("cksim.agg.b", {cfg.hidden}, 0.0),
                he_normal("cksim.head.w", {c + 1, cfg.hidden}, cfg.hidden, rng),
                ad::Parameter("cksim.head.b", prior_bias(c, cfg.foreground_prior))};
  const int n_levels = cfg.share_projections ? 1 : 3;
  for (int l = 0; l < n_levels; ++l) {
    const std::string tag = "cksim.level" + std::to_string(l);
    p.levels.push_back(LevelProjections{he_normal(tag + ".w_k", {d, ci}, ci, rng)});
  }
  return p;
}

std::vector<ad::Parameter*> PlainHeadParams::parameters() { return {&fc1_w, &fc1_b, &fc2_w, &fc2_b}; }

PlainHeadParams init_plain_head(int num_classes, int channels, int hidden, double foreground_prior,
                                std::uint64_t seed) {
  Rng rng(seed);
  return PlainHeadParams{he_normal("plain.fc1.w", {hidden, 3 * channels}, 3 * channels, rng),
                         filled("plain.fc1.b", {hidden}, 0.0),
                         he_normal("plain.fc2.w", {num_classes + 1, hidden}, hidden, rng),
                         ad::Parameter("plain.fc2.b", prior_bias(num_classes, foreground_prior))};
}

ActivatedLevel activate_level(ad::Var query, ad::Var w_q, ad::Var w_k, ad::Var level_map) {
  const auto& shape = level_map.shape();
  const int h = shape.at(1), w = shape.at(2);
  const double d = static_cast<double>(w_q.value().dim(0));
  ad::Var q = ad::linear(query, w_q, ad::Var{});  // C × d
  ad::Var tok = ad::tokens(level_map);            // hw × C_I
  ad::Var k = ad::linear(tok, w_k, ad::Var{});    // hw × d
  ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(d)));
  return {attn, ad::attention_modulate(attn, tok, h, w)};
}

std::array<ActivatedLevel, 3> class_activate_pyramid(ad::Tape& tape, const backbone::FeaturePyramid& pyramid,
                                                     CksimParams& p) {
  ad::Var q = tape.param(p.query);
  ad::Var wq = tape.param(p.w_q);
  std::array<ActivatedLevel, 3> out;
  std::array<ad::Var, 3> wk;
  for (std::size_t l = 0; l < p.levels.size(); ++l) wk[l] = tape.param(p.levels[l].w_k);
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t src = p.config.share_projections ? 0 : l;
    out[l] = activate_level(q, wq, wk[src], pyramid.levels[l]);
  }
  return out;
}

ad::Var classify_proposals(ad::Tape& tape, const std::array<ActivatedLevel, 3>& activated, ad::Var proposals,
                           CksimParams& p) {
  std::array<ad::Var, 3> parts;
  for (std::size_t l = 0; l < 3; ++l)
    parts[l] = ad::bilinear_sample(activated[l].maps, proposals, backbone::FeaturePyramid::kStrides[l]);
  ad::Var e = ad::concat_cols(parts);
  ad::Var h = ad::relu(ad::linear(e, tape.param(p.agg_w), tape.param(p.agg_b)));
  return ad::linear(h, tape.param(p.head_w), tape.param(p.head_b));
}

ad::Var classify_plain(ad::Tape& tape, ad::Var embedding, PlainHeadParams& p) {
  ad::Var h = ad::relu(ad::linear(embedding, tape.param(p.fc1_w), tape.param(p.fc1_b)));
  return ad::linear(h, tape.param(p.fc2_w), tape.param(p.fc2_b));
}

ad::Var classification_loss(ad::Var scores, std::span<const int> labels, std::span<const double> class_weights) {
  return ad::weighted_cross_entropy(scores, labels, class_weights);
}

std::vector<double> default_class_weights(int num_classes, double background_weight) {
  std::vector<double> w(static_cast<std::size_t>(num_classes) + 1, 1.0);
  w.back() = background_weight;
  return w;
}

}  // namespace apseg::cksim
