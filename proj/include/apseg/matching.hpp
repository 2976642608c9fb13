#pragma once

// Minimum-cost bipartite assignment and the training losses built on it.

#include <span>
#include <utility>
#include <vector>

#include "apseg/autodiff.hpp"
#include "apseg/types.hpp"

namespace apseg::matching {

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (proposal/row, gt/column), ascending rows
  std::vector<int> unmatched_proposals;
  std::vector<int> unmatched_gt;
  double total_cost = 0.0;
};

/// Exact minimum-cost assignment of min(K, N) pairs for a K×N cost matrix
/// (row-major). Shortest augmenting paths with potentials, O(min²·max).
/// Scans visit lower indices first and only strictly better candidates
/// replace the current choice, so ties resolve toward lower indices.
Assignment hungarian(std::span<const double> cost, int rows, int cols);
Assignment hungarian(const Tensor& cost);

/// Euclidean-distance matching of predicted points (K×2) to gt points.
Assignment match_points(const Tensor& predicted, std::span<const Point2> gt);

/// Proposal labels for classification: the matched gt class, or
/// `num_classes` (background) for unmatched proposals.
std::vector<int> assign_labels(const Assignment& a, int num_proposals, std::span<const int> gt_classes,
                               int num_classes);

Tensor points_tensor(std::span<const Point2> pts);

/// Σ over matched pairs of |Δx| + |Δy|. The assignment is a constant.
ad::Var regression_loss(ad::Var points, std::span<const Point2> gt, const Assignment& a);

struct LossWeights {
  double cls = 1.0;
  double reg = 5e-3;
  double count = 1e-4;
};

struct LossBreakdown {
  double l_cls = 0.0, l_reg = 0.0, l_count = 0.0, total = 0.0;
  LossWeights weights;
};

struct TotalLoss {
  LossBreakdown breakdown;
  ad::Var total;
};

/// w_cls·l_cls + w_reg·l_reg + w_count·l_count. Throws NumericError naming
/// the first non-finite component.
TotalLoss total_loss(ad::Var l_cls, ad::Var l_reg, ad::Var l_count, const LossWeights& w);
LossBreakdown total_loss(double l_cls, double l_reg, double l_count, const LossWeights& w);

}  // namespace apseg::matching
