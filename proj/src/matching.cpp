#include "apseg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "apseg/errors.hpp"

namespace apseg::matching {

namespace {

// Rows <= cols. Returns col_of_row.
std::vector<int> solve(const std::vector<double>& a, int n, int m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  auto cost = [&](int i, int j) { return a[static_cast<std::size_t>(i - 1) * m + (j - 1)]; };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0, j) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of_row(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) col_of_row[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return col_of_row;
}

}  // namespace

Assignment hungarian(std::span<const double> cost, int rows, int cols) {
  if (rows < 0 || cols < 0 || cost.size() != static_cast<std::size_t>(rows) * cols)
    throw ShapeError("hungarian: cost size does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  for (double c : cost) {
    if (std::isnan(c)) throw NumericError("hungarian: NaN in cost matrix");
    if (!std::isfinite(c)) throw NumericError("hungarian: non-finite cost entry");
  }
  Assignment out;
  if (rows > 0 && cols > 0) {
    const bool transpose = rows > cols;
    const int n = transpose ? cols : rows, m = transpose ? rows : cols;
    std::vector<double> a(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        a[static_cast<std::size_t>(i) * m + j] =
            transpose ? cost[static_cast<std::size_t>(j) * cols + i] : cost[static_cast<std::size_t>(i) * cols + j];
    const auto match = solve(a, n, m);
    for (int i = 0; i < n; ++i) {
      const int j = match[static_cast<std::size_t>(i)];
      out.pairs.emplace_back(transpose ? j : i, transpose ? i : j);
    }
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  std::vector<char> row_used(static_cast<std::size_t>(rows), 0), col_used(static_cast<std::size_t>(cols), 0);
  for (auto [r, c] : out.pairs) {
    row_used[static_cast<std::size_t>(r)] = 1;
    col_used[static_cast<std::size_t>(c)] = 1;
    out.total_cost += cost[static_cast<std::size_t>(r) * cols + c];
  }
  for (int r = 0; r < rows; ++r)
    if (!row_used[static_cast<std::size_t>(r)]) out.unmatched_proposals.push_back(r);
  for (int c = 0; c < cols; ++c)
    if (!col_used[static_cast<std::size_t>(c)]) out.unmatched_gt.push_back(c);
  return out;
}

Assignment hungarian(const Tensor& cost) {
  if (cost.rank() != 2) throw ShapeError("hungarian: cost must be a matrix");
  return hungarian(cost.data, cost.dim(0), cost.dim(1));
}

Assignment match_points(const Tensor& predicted, std::span<const Point2> gt) {
  if (predicted.rank() != 2 || predicted.dim(1) != 2) throw ShapeError("match_points: predictions must be K×2");
  const int k = predicted.dim(0), n = static_cast<int>(gt.size());
  std::vector<double> cost(static_cast<std::size_t>(k) * n);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j)
      cost[static_cast<std::size_t>(i) * n + j] =
          std::hypot(predicted.at(i, 0) - gt[static_cast<std::size_t>(j)].x, predicted.at(i, 1) - gt[static_cast<std::size_t>(j)].y);
  return hungarian(cost, k, n);
}

std::vector<int> assign_labels(const Assignment& a, int num_proposals, std::span<const int> gt_classes,
                               int num_classes) {
  std::vector<int> labels(static_cast<std::size_t>(num_proposals), num_classes);
  for (auto [r, c] : a.pairs) labels[static_cast<std::size_t>(r)] = gt_classes[static_cast<std::size_t>(c)];
  return labels;
}

Tensor points_tensor(std::span<const Point2> pts) {
  Tensor t({static_cast<int>(pts.size()), 2});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    t.at(static_cast<int>(i), 0) = pts[i].x;
    t.at(static_cast<int>(i), 1) = pts[i].y;
  }
  return t;
}

ad::Var regression_loss(ad::Var points, std::span<const Point2> gt, const Assignment& a) {
  return ad::l1_pairs(points, points_tensor(gt), a.pairs);
}

namespace {

void check_components(double l_cls, double l_reg, double l_count) {
  if (!std::isfinite(l_cls)) throw NumericError("non-finite classification loss l_cls");
  if (!std::isfinite(l_reg)) throw NumericError("non-finite regression loss l_reg");
  if (!std::isfinite(l_count)) throw NumericError("non-finite count loss l_count");
}

}  // namespace

LossBreakdown total_loss(double l_cls, double l_reg, double l_count, const LossWeights& w) {
  check_components(l_cls, l_reg, l_count);
  return {l_cls, l_reg, l_count, w.cls * l_cls + w.reg * l_reg + w.count * l_count, w};
}

TotalLoss total_loss(ad::Var l_cls, ad::Var l_reg, ad::Var l_count, const LossWeights& w) {
  const LossBreakdown b = total_loss(l_cls.item(), l_reg.item(), l_count.item(), w);
  const std::array<ad::Var, 3> terms{l_cls, l_reg, l_count};
  const std::array<double, 3> weights{w.cls, w.reg, w.count};
  TotalLoss out{b, ad::weighted_sum(terms, weights)};
  out.breakdown.total = out.total.item();
  return out;
}

}  // namespace apseg::matching
