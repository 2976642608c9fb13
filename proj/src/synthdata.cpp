#include "apseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "apseg/errors.hpp"
#include "apseg/png_io.hpp"
#include "apseg/rng.hpp"
#include "json.hpp"

namespace apseg::synth {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<ClassAppearance> default_appearance(int num_classes) {
  // Loosely modelled on small dark round lymphocytes, mid-size epithelial
  // nuclei, elongated spindle cells and large pale miscellaneous nuclei.
  static const ClassAppearance base[4] = {
      {2.4, 3.0, 0.85, 1.00, 0.78, 0.92, {0.40, 0.18, 0.52}},
      {3.6, 4.4, 0.75, 0.90, 0.50, 0.64, {0.55, 0.30, 0.62}},
      {6.0, 7.0, 0.40, 0.50, 0.60, 0.74, {0.62, 0.26, 0.45}},
      {5.6, 6.4, 0.85, 1.00, 0.36, 0.50, {0.50, 0.36, 0.64}},
  };
  std::vector<ClassAppearance> out;
  for (int k = 0; k < num_classes; ++k) {
    if (k < 4) {
      out.push_back(base[k]);
      continue;
    }
    ClassAppearance a = base[k % 4];
    a.major_min += 0.8 * (k / 4);
    a.major_max += 0.8 * (k / 4);
    out.push_back(a);
  }
  return out;
}

std::vector<ClassAppearance> SceneConfig::resolved_classes() const {
  return classes.empty() ? default_appearance(num_classes) : classes;
}

void SceneConfig::validate() const {
  if (height < 64 || width < 64) throw ConfigError("scene size must be at least 64×64");
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (count_min < 1 || count_max < count_min || count_max > 200)
    throw ConfigError("count range must satisfy 1 <= min <= max <= 200");
  if (!classes.empty() && static_cast<int>(classes.size()) != num_classes)
    throw ConfigError("appearance list size does not match class count");
  for (const auto& a : resolved_classes()) {
    if (a.major_min <= 0.0 || a.major_max < a.major_min || a.ratio_min <= 0.0 || a.ratio_max > 1.0 ||
        a.ratio_max < a.ratio_min)
      throw ConfigError("invalid class appearance range");
  }
  if (placement_max_x_fraction <= 0.0 || placement_max_x_fraction > 1.0)
    throw ConfigError("placement_max_x_fraction must be in (0, 1]");
  if (max_attempts_per_nucleus < 1 || max_layout_restarts < 0) throw ConfigError("invalid placement attempt limits");
}

Tensor Scene::image_chw() const {
  const int h = image.dim(0), w = image.dim(1);
  Tensor out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = image[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  return out;
}

std::vector<std::pair<int, int>> rasterize(const NucleusSpec& s, int height, int width) {
  std::vector<std::pair<int, int>> px;
  const double ca = std::cos(s.angle), sa = std::sin(s.angle);
  const int r = static_cast<int>(std::ceil(s.semi_major)) + 1;
  const int cy = static_cast<int>(std::floor(s.center.y)), cx = static_cast<int>(std::floor(s.center.x));
  for (int i = std::max(0, cy - r); i <= std::min(height - 1, cy + r); ++i)
    for (int j = std::max(0, cx - r); j <= std::min(width - 1, cx + r); ++j) {
      const double dx = j + 0.5 - s.center.x, dy = i + 0.5 - s.center.y;
      const double u = dx * ca + dy * sa;
      const double v = -dx * sa + dy * ca;
      const double q = (u * u) / (s.semi_major * s.semi_major) + (v * v) / (s.semi_minor * s.semi_minor);
      if (q <= 1.0) px.emplace_back(i, j);
    }
  return px;
}

namespace {

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  const auto appearance = config.resolved_classes();
  const int h = config.height, w = config.width;
  Rng rng(seed);
  const int n_target = rng.uniform_int(config.count_min, config.count_max);

  Scene scene;
  std::vector<NucleusSpec> placed;
  const double x_limit = config.placement_max_x_fraction * w;

  bool complete = false;
  for (int restart = 0; restart <= config.max_layout_restarts && !complete; ++restart) {
    scene.instances = InstanceMap(h, w);
    scene.points.clear();
    scene.classes.clear();
    placed.clear();
    complete = true;
    for (int k = 0; k < n_target && complete; ++k) {
      const int cls = rng.uniform_int(0, config.num_classes - 1);
      const ClassAppearance& app = appearance[static_cast<std::size_t>(cls)];
      bool ok = false;
      for (int attempt = 0; attempt < config.max_attempts_per_nucleus && !ok; ++attempt) {
        NucleusSpec s;
        s.class_id = cls;
        s.semi_major = rng.uniform(app.major_min, app.major_max);
        s.semi_minor = s.semi_major * rng.uniform(app.ratio_min, app.ratio_max);
        s.angle = rng.uniform(0.0, std::numbers::pi);
        s.intensity = rng.uniform(app.intensity_min, app.intensity_max);
        const double margin = s.semi_major + 1.0;
        const double x_hi = std::min(w - margin, x_limit);
        if (x_hi <= margin || h - margin <= margin) continue;
        s.center = {rng.uniform(margin, x_hi), rng.uniform(margin, h - margin)};

        bool clear = true;
        for (const auto& o : placed) {
          const double d = std::hypot(o.center.x - s.center.x, o.center.y - s.center.y);
          if (d < o.semi_major + s.semi_major + config.min_separation) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        const auto pixels = rasterize(s, h, w);
        if (pixels.empty()) continue;
        double sx = 0.0, sy = 0.0;
        for (auto [i, j] : pixels) {
          sx += j + 0.5;
          sy += i + 0.5;
        }
        const Point2 centroid{sx / pixels.size(), sy / pixels.size()};
        const std::pair<int, int> home{static_cast<int>(std::floor(centroid.y)),
                                       static_cast<int>(std::floor(centroid.x))};
        if (std::find(pixels.begin(), pixels.end(), home) == pixels.end()) continue;

        const int id = static_cast<int>(placed.size()) + 1;
        for (auto [i, j] : pixels) scene.instances.at(i, j) = id;
        scene.instances.class_of[id] = cls;
        scene.points.push_back(centroid);
        scene.classes.push_back(cls);
        placed.push_back(s);
        ok = true;
      }
      if (!ok) complete = false;
    }
  }
  if (!complete)
    throw GenerationError("nucleus placement failed after " + std::to_string(config.max_layout_restarts + 1) +
                          " layouts of " + std::to_string(config.max_attempts_per_nucleus) +
                          " attempts per nucleus (seed " + std::to_string(seed) + ")");

  scene.image = Tensor({h, w, 3});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int id = scene.instances.at(i, j);
      for (int c = 0; c < 3; ++c) {
        double v = config.background[c];
        if (id > 0) {
          const NucleusSpec& s = placed[static_cast<std::size_t>(id - 1)];
          const double tint = appearance[static_cast<std::size_t>(s.class_id)].tint[c];
          v = (1.0 - s.intensity) * v + s.intensity * tint;
        }
        v += config.noise_sigma * rng.normal();
        scene.image[(static_cast<std::size_t>(i) * w + j) * 3 + c] = quantize8(v);
      }
    }
  return scene;
}

std::vector<Scene> generate_scenes(const SceneConfig& config, int count, std::uint64_t base_seed) {
  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(generate_scene(config, base_seed + static_cast<std::uint64_t>(i)));
  return out;
}

void check_scene(const Scene& scene, int num_classes) {
  const int n = scene.n();
  if (static_cast<int>(scene.classes.size()) != n) throw ConsistencyError("points/classes length mismatch");
  const auto ids = scene.instances.instance_ids();
  if (static_cast<int>(ids.size()) != n) throw ConsistencyError("instance count does not match point count");
  for (int i = 0; i < n; ++i)
    if (ids[static_cast<std::size_t>(i)] != i + 1) throw ConsistencyError("instance labels are not contiguous");
  for (int i = 0; i < n; ++i) {
    const int c = scene.classes[static_cast<std::size_t>(i)];
    if (c < 0 || c >= num_classes) throw ConsistencyError("class id out of range");
    const Point2 p = scene.points[static_cast<std::size_t>(i)];
    const int row = static_cast<int>(std::floor(p.y)), col = static_cast<int>(std::floor(p.x));
    if (row < 0 || col < 0 || row >= scene.height() || col >= scene.width() || scene.instances.at(row, col) != i + 1)
      throw ConsistencyError("point " + std::to_string(i) + " lies outside its instance");
  }
}

void write_scene_files(const Scene& scene, const fs::path& image_path, const fs::path& mask_path,
                       const fs::path& ann_path) {
  const int h = scene.height(), w = scene.width();
  png::Image8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(scene.image[i], 0.0, 1.0) * 255.0));
  png::write_rgb8(image_path, img);

  png::Image16 mask{w, h, std::vector<std::uint16_t>(static_cast<std::size_t>(w) * h)};
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    const int v = scene.instances.labels[i];
    if (v < 0 || v > 65535) throw ArgumentError("instance label does not fit 16 bits");
    mask.pixels[i] = static_cast<std::uint16_t>(v);
  }
  png::write_gray16(mask_path, mask);

  json ann;
  ann["points"] = json::array();
  for (const auto& p : scene.points) ann["points"].push_back({p.x, p.y});
  ann["classes"] = scene.classes;
  ann["n"] = scene.n();
  std::ofstream out(ann_path);
  if (!out) throw Error("cannot create " + ann_path.string());
  out << ann.dump(1) << "\n";
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

Scene read_scene_files(const fs::path& image_path, const fs::path& mask_path, const fs::path& ann_path,
                       int num_classes) {
  const png::Image8 img = png::read_rgb8(image_path);
  const png::Image16 mask = png::read_gray16(mask_path);
  if (img.width != mask.width || img.height != mask.height)
    throw ConsistencyError("image and mask sizes differ for " + mask_path.string());
  Scene s;
  s.image = Tensor({img.height, img.width, 3});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) s.image[i] = img.pixels[i] / 255.0;
  s.instances = InstanceMap(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) s.instances.labels[i] = mask.pixels[i];

  const json ann = read_json(ann_path);
  try {
    for (const auto& p : ann.at("points")) s.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    s.classes = ann.at("classes").get<std::vector<int>>();
    const int n = ann.at("n").get<int>();
    if (n != s.n() || s.classes.size() != s.points.size())
      throw LoadError("annotation counts disagree in " + ann_path.string());
  } catch (const json::exception& e) {
    throw LoadError("malformed annotation " + ann_path.string() + ": " + e.what());
  }
  for (int i = 0; i < s.n(); ++i) {
    const int c = s.classes[static_cast<std::size_t>(i)];
    if (c < 0 || c >= num_classes)
      throw ConsistencyError("class " + std::to_string(c) + " in " + ann_path.string() +
                             " exceeds manifest class count " + std::to_string(num_classes));
    s.instances.class_of[i + 1] = c;
  }
  if (s.instances.max_label() > s.n())
    throw ConsistencyError("mask " + mask_path.string() + " has more instances than its annotation");
  return s;
}

DatasetManifest write_dataset(const std::vector<Scene>& scenes, const fs::path& root, int num_classes,
                              std::vector<std::string> class_names, std::uint64_t seed) {
  if (num_classes < 1) throw ArgumentError("num_classes must be positive");
  if (class_names.empty())
    for (int k = 0; k < num_classes; ++k) class_names.push_back("class_" + std::to_string(k));
  if (static_cast<int>(class_names.size()) != num_classes)
    throw ConsistencyError("class name count does not match class count");
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  fs::create_directories(root / "ann");

  DatasetManifest m;
  m.root = root;
  m.num_classes = num_classes;
  m.class_names = class_names;
  m.seed = seed;
  json entries = json::array();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    DatasetEntry e{buf, std::string("images/") + buf + ".png", std::string("masks/") + buf + ".png",
                   std::string("ann/") + buf + ".json"};
    write_scene_files(scenes[i], root / e.image, root / e.mask, root / e.ann);
    entries.push_back({{"id", e.id}, {"image", e.image}, {"mask", e.mask}, {"ann", e.ann}});
    m.scenes.push_back(std::move(e));
  }
  json manifest{{"num_classes", num_classes}, {"class_names", class_names}, {"seed", seed}, {"scenes", entries}};
  std::ofstream out(root / "manifest.json");
  if (!out) throw Error("cannot create " + (root / "manifest.json").string());
  out << manifest.dump(1) << "\n";
  return m;
}

Dataset read_dataset(const fs::path& root) {
  const fs::path mpath = root / "manifest.json";
  if (!fs::exists(mpath)) throw LoadError("missing manifest: " + mpath.string());
  const json j = read_json(mpath);
  Dataset d;
  d.manifest.root = root;
  try {
    d.manifest.num_classes = j.at("num_classes").get<int>();
    d.manifest.class_names = j.at("class_names").get<std::vector<std::string>>();
    d.manifest.seed = j.value("seed", std::uint64_t{0});
    for (const auto& e : j.at("scenes"))
      d.manifest.scenes.push_back({e.at("id").get<std::string>(), e.at("image").get<std::string>(),
                                   e.at("mask").get<std::string>(), e.at("ann").get<std::string>()});
  } catch (const json::exception& e) {
    throw LoadError("malformed manifest " + mpath.string() + ": " + e.what());
  }
  if (static_cast<int>(d.manifest.class_names.size()) != d.manifest.num_classes)
    throw ConsistencyError("manifest class names do not match num_classes");
  for (const auto& e : d.manifest.scenes) {
    for (const auto& f : {e.image, e.mask, e.ann})
      if (!fs::exists(root / f)) throw LoadError("missing dataset file: " + (root / f).string());
    d.scenes.push_back(read_scene_files(root / e.image, root / e.mask, root / e.ann, d.manifest.num_classes));
  }
  return d;
}

double median_equivalent_radius(const std::vector<Scene>& scenes) {
  std::vector<double> radii;
  for (const auto& s : scenes) {
    std::map<int, int> area;
    for (int v : s.instances.labels)
      if (v) ++area[v];
    for (auto [id, a] : area) radii.push_back(std::sqrt(a / std::numbers::pi));
  }
  if (radii.empty()) return 0.0;
  std::sort(radii.begin(), radii.end());
  const std::size_t m = radii.size() / 2;
  return radii.size() % 2 ? radii[m] : 0.5 * (radii[m - 1] + radii[m]);
}

}  // namespace apseg::synth
