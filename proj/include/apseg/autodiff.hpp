#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every operation of one forward pass. Parameters live outside
// the tape and receive accumulated gradients when Tape::backward runs. All
// arithmetic is in double precision so finite-difference checks are tight.

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "apseg/tensor.hpp"

namespace apseg::ad {

/// A named learnable array together with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape; }
  double item() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor t);
  /// Leaf that tracks its own gradient (readable through grad()).
  Var input(Tensor t);
  /// Leaf bound to a parameter; backward() adds into p.grad.
  Var param(Parameter& p);

  /// Records a computed node. `backward` is invoked only when some input
  /// requires a gradient; it reads grad(self) and accumulates into inputs.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  /// Reverse sweep from a single-element root.
  void backward(Var root);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(int id);
  const Tensor& grad(Var v) { return grad(v.id()); }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// ---- elementwise and structural ops ----

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var shift(Var a, double s);
Var relu(Var a);
Var softplus(Var a);
Var abs(Var a);
/// Sum of all entries, returned as shape [1].
Var sum(Var a);
/// Σ_i weights[i]·terms[i] over single-element vars.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);
/// Column-wise concatenation of K×n_i matrices.
Var concat_cols(std::span<const Var> parts);

// ---- dense layers ----

/// x: K×in, w: out×in, b: out (may be invalid Var for no bias) -> K×out.
Var linear(Var x, Var w, Var b);
/// a: m×k, b: n×k -> a·bᵀ (m×n).
Var matmul_nt(Var a, Var b);
/// Row-wise softmax of an m×n matrix.
Var softmax_rows(Var a);
/// C×h×w feature map -> (h·w)×C token matrix.
Var tokens(Var fmap);
/// attn: Q×(h·w), values: (h·w)×V -> (Q·V)×h×w map with
/// out[q,v,p] = (h·w)·attn[q,p]·values[p,v]. Uniform attention reproduces
/// the value map for every query.
Var attention_modulate(Var attn, Var values, int h, int w);

// ---- convolutional ops ----

/// x: Cin×H×W, w: Cout×Cin×k×k, b: Cout -> Cout×Ho×Wo (zero padding).
Var conv2d(Var x, Var w, Var b, int stride, int pad);
/// Per-position normalization over channels with affine gamma/beta (C each).
Var layer_norm_channels(Var x, Var gamma, Var beta, double eps = 1e-6);

// ---- sampling ----

/// Bilinear sample of fmap (C×h×w) at image-frame coords (K×2, columns x,y).
/// Feature coordinate = image coordinate / stride − 0.5; out-of-grid
/// coordinates clamp to the border. Returns K×C. Differentiable in both
/// arguments; throws NumericError on NaN coordinates.
Var bilinear_sample(Var fmap, Var coords, double stride);

// ---- losses ----

/// −Σ_n weights[labels[n]] · log softmax(logits_n)[labels[n]].
Var weighted_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights);
/// Σ over pairs of |p_i − g_j|_1 with predicted points K×2 and fixed targets.
Var l1_pairs(Var points, const Tensor& targets, std::span<const std::pair<int, int>> pairs);

}  // namespace apseg::ad
