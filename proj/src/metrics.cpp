#include "apseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "apseg/errors.hpp"
#include "apseg/matching.hpp"
#include "json.hpp"

namespace apseg::metrics {

namespace {

void require_same_size(const InstanceMap& a, const InstanceMap& b) {
  if (a.height != b.height || a.width != b.width)
    throw ArgumentError("instance maps differ in size: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                        " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
}

struct Overlaps {
  std::map<int, long> pred_area, gt_area;
  std::map<std::pair<int, int>, long> inter;  // (pred, gt)
};

Overlaps overlaps(const InstanceMap& pred, const InstanceMap& gt) {
  require_same_size(pred, gt);
  Overlaps o;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const int p = pred.labels[i], g = gt.labels[i];
    if (p) ++o.pred_area[p];
    if (g) ++o.gt_area[g];
    if (p && g) ++o.inter[{p, g}];
  }
  return o;
}

/// Copy of `map` keeping only instances of class `cls`.
InstanceMap restrict_to_class(const InstanceMap& map, int cls) {
  InstanceMap out(map.height, map.width);
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    const int id = map.labels[i];
    if (!id) continue;
    auto it = map.class_of.find(id);
    if (it != map.class_of.end() && it->second == cls) out.labels[i] = id;
  }
  for (auto [id, c] : map.class_of)
    if (c == cls) out.class_of[id] = c;
  return out;
}

}  // namespace

InstanceMatching match_instances_iou(const InstanceMap& pred, const InstanceMap& gt) {
  const Overlaps o = overlaps(pred, gt);
  InstanceMatching m;
  std::set<int> matched_pred, matched_gt;
  for (const auto& [key, inter] : o.inter) {
    const auto [p, g] = key;
    const double uni = static_cast<double>(o.pred_area.at(p) + o.gt_area.at(g) - inter);
    const double iou = inter / uni;
    if (iou > 0.5) {
      m.matches.push_back({p, g, iou});
      matched_pred.insert(p);
      matched_gt.insert(g);
    }
  }
  std::sort(m.matches.begin(), m.matches.end(), [](const IouMatch& a, const IouMatch& b) { return a.gt_id < b.gt_id; });
  for (const auto& [p, a] : o.pred_area)
    if (!matched_pred.count(p)) m.unmatched_pred.push_back(p);
  for (const auto& [g, a] : o.gt_area)
    if (!matched_gt.count(g)) m.unmatched_gt.push_back(g);
  return m;
}

PanopticResult panoptic_quality(const InstanceMap& pred, const InstanceMap& gt) {
  const InstanceMatching m = match_instances_iou(pred, gt);
  PanopticResult r;
  r.tp = static_cast<int>(m.matches.size());
  r.fp = static_cast<int>(m.unmatched_pred.size());
  r.fn = static_cast<int>(m.unmatched_gt.size());
  double iou_sum = 0.0;
  for (const auto& x : m.matches) {
    r.matched_ious.push_back(x.iou);
    iou_sum += x.iou;
  }
  const double denom = r.tp + 0.5 * r.fp + 0.5 * r.fn;
  r.dq = denom > 0.0 ? r.tp / denom : 0.0;
  r.sq = r.tp > 0 ? iou_sum / r.tp : 0.0;
  r.pq = r.dq * r.sq;
  return r;
}

PanopticResult binary_pq(const InstanceMap& pred, const InstanceMap& gt) { return panoptic_quality(pred, gt); }

MultiClassPQ multi_class_pq(const InstanceMap& pred, const InstanceMap& gt) {
  require_same_size(pred, gt);
  std::set<int> classes;
  for (int id : gt.instance_ids()) {
    auto it = gt.class_of.find(id);
    if (it == gt.class_of.end()) throw ArgumentError("gt instance " + std::to_string(id) + " has no class");
    classes.insert(it->second);
  }
  MultiClassPQ out;
  double total = 0.0;
  for (int c : classes) {
    out.per_class[c] = panoptic_quality(restrict_to_class(pred, c), restrict_to_class(gt, c));
    total += out.per_class[c].pq;
  }
  out.mpq = classes.empty() ? 0.0 : total / static_cast<double>(classes.size());
  return out;
}

double aji(const InstanceMap& pred, const InstanceMap& gt) {
  const Overlaps o = overlaps(pred, gt);
  // Per gt, best pred by IoU (lowest pred id among ties).
  std::map<int, std::vector<std::pair<int, long>>> by_gt;
  for (const auto& [key, inter] : o.inter) by_gt[key.second].emplace_back(key.first, inter);
  long c_sum = 0, u_sum = 0;
  std::set<int> used;
  for (const auto& [g, garea] : o.gt_area) {
    int best = 0;
    double best_iou = 0.0;
    long best_inter = 0, best_union = 0;
    for (const auto& [p, inter] : by_gt[g]) {
      const long uni = o.pred_area.at(p) + garea - inter;
      const double iou = static_cast<double>(inter) / static_cast<double>(uni);
      if (iou > best_iou) {
        best_iou = iou;
        best = p;
        best_inter = inter;
        best_union = uni;
      }
    }
    if (best == 0) {
      u_sum += garea;
      continue;
    }
    c_sum += best_inter;
    u_sum += best_union;
    used.insert(best);
  }
  for (const auto& [p, area] : o.pred_area)
    if (!used.count(p)) u_sum += area;
  if (u_sum == 0) return 1.0;
  return static_cast<double>(c_sum) / static_cast<double>(u_sum);
}

double dice(const InstanceMap& pred, const InstanceMap& gt) {
  require_same_size(pred, gt);
  long p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool a = pred.labels[i] != 0, b = gt.labels[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

PRF prf_from_counts(int tp, int fp, int fn) {
  PRF r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

DetectionResult detection_scores(const PromptSet& pred, std::span<const Point2> gt_points,
                                 std::span<const int> gt_classes, double radius) {
  if (!(radius > 0.0)) throw ArgumentError("detection radius must be positive");
  if (gt_points.size() != gt_classes.size()) throw ArgumentError("gt points and classes are not aligned");
  const int k = static_cast<int>(pred.size()), n = static_cast<int>(gt_points.size());
  // Out-of-radius pairs cost more than any full set of in-radius pairs.
  const double penalty = radius * (std::min(k, n) + 1) + 1.0;
  std::vector<double> cost(static_cast<std::size_t>(k) * n);
  std::vector<double> dist(cost.size());
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      dist[idx] = std::hypot(pred[static_cast<std::size_t>(i)].point.x - gt_points[static_cast<std::size_t>(j)].x,
                             pred[static_cast<std::size_t>(i)].point.y - gt_points[static_cast<std::size_t>(j)].y);
      cost[idx] = dist[idx] <= radius ? dist[idx] : penalty;
    }
  const matching::Assignment a = matching::hungarian(cost, k, n);

  DetectionResult r;
  r.radius = radius;
  int tp = 0, cls_tp = 0;
  std::map<int, int> ctp, cfp, cfn;
  std::vector<char> pred_hit(static_cast<std::size_t>(k), 0), gt_hit(static_cast<std::size_t>(n), 0);
  for (auto [i, j] : a.pairs) {
    if (dist[static_cast<std::size_t>(i) * n + j] > radius) continue;
    ++tp;
    const int pc = pred[static_cast<std::size_t>(i)].class_id, gc = gt_classes[static_cast<std::size_t>(j)];
    if (pc == gc) {
      ++cls_tp;
      ++ctp[gc];
      pred_hit[static_cast<std::size_t>(i)] = 1;
      gt_hit[static_cast<std::size_t>(j)] = 1;
    }
  }
  for (int i = 0; i < k; ++i)
    if (!pred_hit[static_cast<std::size_t>(i)]) ++cfp[pred[static_cast<std::size_t>(i)].class_id];
  for (int j = 0; j < n; ++j)
    if (!gt_hit[static_cast<std::size_t>(j)]) ++cfn[gt_classes[static_cast<std::size_t>(j)]];
  r.detection = prf_from_counts(tp, k - tp, n - tp);
  r.classification = prf_from_counts(cls_tp, k - cls_tp, n - cls_tp);
  std::set<int> classes;
  for (const auto& p : pred) classes.insert(p.class_id);
  for (int c : gt_classes) classes.insert(c);
  for (int c : classes) r.per_class[c] = prf_from_counts(ctp[c], cfp[c], cfn[c]);
  return r;
}

SceneMetrics evaluate_scene(const std::string& name, const InstanceMap& pred, const InstanceMap& gt,
                            const PromptSet& prompts, std::span<const Point2> gt_points,
                            std::span<const int> gt_classes, double radius) {
  SceneMetrics m;
  m.scene = name;
  m.dice = dice(pred, gt);
  m.aji = aji(pred, gt);
  const PanopticResult b = panoptic_quality(pred, gt);
  m.dq = b.dq;
  m.sq = b.sq;
  m.pq = b.pq;
  m.bpq = b.pq;
  const MultiClassPQ mc = multi_class_pq(pred, gt);
  m.mpq = mc.mpq;
  for (const auto& [c, r] : mc.per_class) m.pq_class[c] = r.pq;
  const DetectionResult d = detection_scores(prompts, gt_points, gt_classes, radius);
  m.det_p = d.detection.precision;
  m.det_r = d.detection.recall;
  m.det_f = d.detection.f1;
  m.cls_p = d.classification.precision;
  m.cls_r = d.classification.recall;
  m.cls_f = d.classification.f1;
  return m;
}

SceneMetrics aggregate(const std::vector<SceneMetrics>& rows, const std::string& name) {
  SceneMetrics s;
  s.scene = name;
  if (rows.empty()) return s;
  std::map<int, std::pair<double, int>> per_class;
  for (const auto& r : rows) {
    s.dice += r.dice;
    s.aji += r.aji;
    s.dq += r.dq;
    s.sq += r.sq;
    s.pq += r.pq;
    s.bpq += r.bpq;
    s.mpq += r.mpq;
    s.det_p += r.det_p;
    s.det_r += r.det_r;
    s.det_f += r.det_f;
    s.cls_p += r.cls_p;
    s.cls_r += r.cls_r;
    s.cls_f += r.cls_f;
    for (auto [c, v] : r.pq_class) {
      per_class[c].first += v;
      per_class[c].second += 1;
    }
  }
  const double n = static_cast<double>(rows.size());
  for (double* f : {&s.dice, &s.aji, &s.dq, &s.sq, &s.pq, &s.bpq, &s.mpq, &s.det_p, &s.det_r, &s.det_f, &s.cls_p,
                    &s.cls_r, &s.cls_f})
    *f /= n;
  for (auto [c, acc] : per_class) s.pq_class[c] = acc.first / acc.second;
  return s;
}

namespace {

const char* kColumns[] = {"dice", "aji", "dq", "sq", "pq", "bpq", "mpq",
                          "det_p", "det_r", "det_f", "cls_p", "cls_r", "cls_f"};

std::vector<double> row_values(const SceneMetrics& m) {
  return {m.dice, m.aji, m.dq, m.sq, m.pq, m.bpq, m.mpq, m.det_p, m.det_r, m.det_f, m.cls_p, m.cls_r, m.cls_f};
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const std::vector<SceneMetrics>& rows, int num_classes) {
  std::ofstream out(path);
  if (!out) throw Error("cannot create " + path.string());
  out << "scene";
  for (const char* c : kColumns) out << "," << c;
  for (int k = 0; k < num_classes; ++k) out << ",pq_class_" << k;
  out << "\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.scene;
    for (double v : row_values(r)) {
      std::snprintf(buf, sizeof buf, ",%.10g", v);
      out << buf;
    }
    for (int k = 0; k < num_classes; ++k) {
      auto it = r.pq_class.find(k);
      if (it == r.pq_class.end()) {
        out << ",";
      } else {
        std::snprintf(buf, sizeof buf, ",%.10g", it->second);
        out << buf;
      }
    }
    out << "\n";
  }
}

void write_report_json(const std::filesystem::path& path, const std::vector<SceneMetrics>& rows,
                       const SceneMetrics& summary) {
  auto to_json = [](const SceneMetrics& m) {
    nlohmann::json j{{"scene", m.scene}};
    const auto vals = row_values(m);
    for (std::size_t i = 0; i < vals.size(); ++i) j[kColumns[i]] = vals[i];
    for (auto [c, v] : m.pq_class) j["pq_class_" + std::to_string(c)] = v;
    return j;
  };
  nlohmann::json j{{"summary", to_json(summary)}, {"scenes", nlohmann::json::array()}};
  for (const auto& r : rows) j["scenes"].push_back(to_json(r));
  std::ofstream out(path);
  if (!out) throw Error("cannot create " + path.string());
  out << j.dump(1) << "\n";
}

std::vector<SceneMetrics> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string line;
  std::vector<SceneMetrics> rows;
  if (!std::getline(in, line)) return rows;
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    SceneMetrics m;
    std::map<std::string, double*> fields{{"dice", &m.dice},   {"aji", &m.aji},     {"dq", &m.dq},
                                          {"sq", &m.sq},       {"pq", &m.pq},       {"bpq", &m.bpq},
                                          {"mpq", &m.mpq},     {"det_p", &m.det_p}, {"det_r", &m.det_r},
                                          {"det_f", &m.det_f}, {"cls_p", &m.cls_p}, {"cls_r", &m.cls_r},
                                          {"cls_f", &m.cls_f}};
    for (std::size_t i = 0; i < cells.size() && i < header.size(); ++i) {
      const std::string& h = header[i];
      if (h == "scene") {
        m.scene = cells[i];
      } else if (cells[i].empty()) {
        continue;
      } else if (auto it = fields.find(h); it != fields.end()) {
        *it->second = std::stod(cells[i]);
      } else if (h.rfind("pq_class_", 0) == 0) {
        m.pq_class[std::stoi(h.substr(9))] = std::stod(cells[i]);
      }
    }
    rows.push_back(m);
  }
  return rows;
}

}  // namespace apseg::metrics
