#include "apseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "apseg/errors.hpp"

namespace apseg::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

double Var::item() const {
  const Tensor& t = value();
  if (t.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(t.shape));
  return t[0];
}

Var Tape::constant(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, {}, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::input(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, {}, nullptr, grad_enabled_});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, grad_enabled_ ? &p : nullptr, grad_enabled_});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& v : inputs)
      if (v.valid() && requires_grad(v.id())) needs = true;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() != n.value.size() || n.grad.shape != n.value.shape) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ArgumentError("backward root belongs to another tape");
  if (value(root.id()).size() != 1) throw ShapeError("backward root must be a single element");
  if (!requires_grad(root.id())) return;
  grad(root.id())[0] += 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      auto& pg = n.param->grad.data;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad.data[i];
    }
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
}

template <class F>
Var unary(Var a, F&& f, Tape::Backward back) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape()->record(std::move(out), {a}, std::move(back));
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Tensor g = t.grad(self);
    for (Var in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      Tensor& gi = t.grad(in.id());
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Tensor g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a.id());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Tensor g = t.grad(self);
    const Tensor& av = t.value(a.id());
    const Tensor& bv = t.value(b.id());
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a.id());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [a, s](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var shift(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a.id());
    Tensor& ga = t.grad(a.id());
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

Var softplus(Var a) {
  auto f = [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); };
  return unary(a, f, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a.id());
    Tensor& ga = t.grad(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (1.0 + std::exp(-x[i]));
  });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::fabs(x); }, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a.id());
    Tensor& ga = t.grad(a.id());
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
  });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data) s += v;
  return a.tape()->record(Tensor({1}, {s}), {a}, [a](Tape& t, int self) {
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad(a.id());
    for (auto& v : ga.data) v += g;
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size())
    throw ArgumentError("weighted_sum: terms and weights must be non-empty and aligned");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) s += weights[i] * terms[i].item();
  std::vector<Var> ins(terms.begin(), terms.end());
  std::vector<double> w(weights.begin(), weights.end());
  return terms[0].tape()->record(Tensor({1}, {s}), ins, [ins, w](Tape& t, int self) {
    const double g = t.grad(self)[0];
    for (std::size_t i = 0; i < ins.size(); ++i)
      if (t.requires_grad(ins[i])) t.grad(ins[i].id())[0] += w[i] * g;
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const int rows = parts[0].value().dim(0);
  int cols = 0;
  std::vector<int> offsets;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.value().dim(0) != rows) throw ShapeError("concat_cols: row count mismatch");
    offsets.push_back(cols);
    cols += p.value().dim(1);
  }
  Tensor out({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    const int n = x.dim(1);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < n; ++c) out.at(r, offsets[k] + c) = x.at(r, c);
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), ins, [ins, offsets](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (!t.requires_grad(ins[k])) continue;
      Tensor& gi = t.grad(ins[k].id());
      const int rows = gi.dim(0), n = gi.dim(1);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < n; ++c) gi.at(r, c) += g.at(r, offsets[k] + c);
    }
  });
}

Var linear(Var x, Var w, Var b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const int rows = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
  if (wv.dim(1) != in)
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + shape_string(wv.shape));
  if (b.valid() && b.value().size() != static_cast<std::size_t>(out_dim))
    throw ShapeError("linear: bias size mismatch");
  Tensor out({rows, out_dim});
  for (int r = 0; r < rows; ++r) {
    const double* xr = &xv.data[static_cast<std::size_t>(r) * in];
    for (int o = 0; o < out_dim; ++o) {
      const double* wr = &wv.data[static_cast<std::size_t>(o) * in];
      double s = b.valid() ? b.value()[static_cast<std::size_t>(o)] : 0.0;
      for (int i = 0; i < in; ++i) s += xr[i] * wr[i];
      out.at(r, o) = s;
    }
  }
  std::vector<Var> ins{x, w};
  if (b.valid()) ins.push_back(b);
  return x.tape()->record(std::move(out), ins, [x, w, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x.id());
    const Tensor& wv = t.value(w.id());
    const int rows = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad(x.id());
      for (int r = 0; r < rows; ++r)
        for (int o = 0; o < out_dim; ++o) {
          const double go = g.at(r, o);
          if (go == 0.0) continue;
          const double* wr = &wv.data[static_cast<std::size_t>(o) * in];
          double* gxr = &gx.data[static_cast<std::size_t>(r) * in];
          for (int i = 0; i < in; ++i) gxr[i] += go * wr[i];
        }
    }
    if (t.requires_grad(w)) {
      Tensor& gw = t.grad(w.id());
      for (int r = 0; r < rows; ++r)
        for (int o = 0; o < out_dim; ++o) {
          const double go = g.at(r, o);
          if (go == 0.0) continue;
          const double* xr = &xv.data[static_cast<std::size_t>(r) * in];
          double* gwr = &gw.data[static_cast<std::size_t>(o) * in];
          for (int i = 0; i < in; ++i) gwr[i] += go * xr[i];
        }
    }
    if (b.valid() && t.requires_grad(b)) {
      Tensor& gb = t.grad(b.id());
      for (int r = 0; r < rows; ++r)
        for (int o = 0; o < out_dim; ++o) gb[static_cast<std::size_t>(o)] += g.at(r, o);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  if (a.value().dim(1) != b.value().dim(1)) throw ShapeError("matmul_nt: inner dimension mismatch");
  return linear(a, b, Var{});
}

Var softmax_rows(Var a) {
  require_rank(a, 2, "softmax_rows");
  const Tensor& x = a.value();
  const int m = x.dim(0), n = x.dim(1);
  Tensor out(x.shape);
  for (int r = 0; r < m; ++r) {
    double mx = x.at(r, 0);
    for (int c = 1; c < n; ++c) mx = std::max(mx, x.at(r, c));
    double z = 0.0;
    for (int c = 0; c < n; ++c) z += (out.at(r, c) = std::exp(x.at(r, c) - mx));
    for (int c = 0; c < n; ++c) out.at(r, c) /= z;
  }
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(a.id());
    const int m = y.dim(0), n = y.dim(1);
    for (int r = 0; r < m; ++r) {
      double dot = 0.0;
      for (int c = 0; c < n; ++c) dot += g.at(r, c) * y.at(r, c);
      for (int c = 0; c < n; ++c) ga.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

Var tokens(Var fmap) {
  require_rank(fmap, 3, "tokens");
  const Tensor& f = fmap.value();
  const int c = f.dim(0), hw = f.dim(1) * f.dim(2);
  Tensor out({hw, c});
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < hw; ++p) out.at(p, ch) = f[static_cast<std::size_t>(ch) * hw + p];
  return fmap.tape()->record(std::move(out), {fmap}, [fmap](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gf = t.grad(fmap.id());
    const int hw = g.dim(0), c = g.dim(1);
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p) gf[static_cast<std::size_t>(ch) * hw + p] += g.at(p, ch);
  });
}

Var attention_modulate(Var attn, Var values, int h, int w) {
  require_rank(attn, 2, "attention_modulate");
  require_rank(values, 2, "attention_modulate");
  const Tensor& a = attn.value();
  const Tensor& v = values.value();
  const int q = a.dim(0), hw = a.dim(1), vd = v.dim(1);
  if (hw != h * w || v.dim(0) != hw) throw ShapeError("attention_modulate: token count mismatch");
  Tensor out({q * vd, h, w});
  const double n = static_cast<double>(hw);
  for (int i = 0; i < q; ++i)
    for (int c = 0; c < vd; ++c) {
      double* o = &out.data[(static_cast<std::size_t>(i) * vd + c) * hw];
      for (int p = 0; p < hw; ++p) o[p] = n * a.at(i, p) * v.at(p, c);
    }
  return attn.tape()->record(std::move(out), {attn, values}, [attn, values](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& a = t.value(attn.id());
    const Tensor& v = t.value(values.id());
    const int q = a.dim(0), hw = a.dim(1), vd = v.dim(1);
    const double n = static_cast<double>(hw);
    const bool ga_on = t.requires_grad(attn), gv_on = t.requires_grad(values);
    Tensor* ga = ga_on ? &t.grad(attn.id()) : nullptr;
    Tensor* gv = gv_on ? &t.grad(values.id()) : nullptr;
    for (int i = 0; i < q; ++i)
      for (int c = 0; c < vd; ++c) {
        const double* go = &g.data[(static_cast<std::size_t>(i) * vd + c) * hw];
        for (int p = 0; p < hw; ++p) {
          if (ga) ga->at(i, p) += n * go[p] * v.at(p, c);
          if (gv) gv->at(p, c) += n * go[p] * a.at(i, p);
        }
      }
  });
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  require_rank(x, 3, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv2d: weight " + shape_string(wv.shape) + " incompatible with input " +
                     shape_string(xv.shape));
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: invalid stride/padding");
  const int cin = xv.dim(0), hin = xv.dim(1), win = xv.dim(2);
  const int cout = wv.dim(0), k = wv.dim(2);
  const int hout = (hin + 2 * pad - k) / stride + 1;
  const int wout = (win + 2 * pad - k) / stride + 1;
  if (hout <= 0 || wout <= 0) throw ShapeError("conv2d: input smaller than kernel");
  if (b.valid() && b.value().size() != static_cast<std::size_t>(cout))
    throw ShapeError("conv2d: bias size mismatch");
  Tensor out({cout, hout, wout});
  for (int co = 0; co < cout; ++co) {
    double* o = &out.data[static_cast<std::size_t>(co) * hout * wout];
    const double bias = b.valid() ? b.value()[static_cast<std::size_t>(co)] : 0.0;
    for (int i = 0; i < hout * wout; ++i) o[i] = bias;
    for (int ci = 0; ci < cin; ++ci) {
      const double* xi = &xv.data[static_cast<std::size_t>(ci) * hin * win];
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wk = wv.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx];
          if (wk == 0.0) continue;
          for (int oy = 0; oy < hout; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= hin) continue;
            for (int ox = 0; ox < wout; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= win) continue;
              o[oy * wout + ox] += wk * xi[iy * win + ix];
            }
          }
        }
    }
  }
  std::vector<Var> ins{x, w};
  if (b.valid()) ins.push_back(b);
  return x.tape()->record(std::move(out), ins, [x, w, b, stride, pad](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x.id());
    const Tensor& wv = t.value(w.id());
    const int cin = xv.dim(0), hin = xv.dim(1), win = xv.dim(2);
    const int cout = wv.dim(0), k = wv.dim(2);
    const int hout = g.dim(1), wout = g.dim(2);
    Tensor* gx = t.requires_grad(x) ? &t.grad(x.id()) : nullptr;
    Tensor* gw = t.requires_grad(w) ? &t.grad(w.id()) : nullptr;
    for (int co = 0; co < cout; ++co) {
      const double* go = &g.data[static_cast<std::size_t>(co) * hout * wout];
      for (int ci = 0; ci < cin; ++ci) {
        const double* xi = &xv.data[static_cast<std::size_t>(ci) * hin * win];
        double* gxi = gx ? &gx->data[static_cast<std::size_t>(ci) * hin * win] : nullptr;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const std::size_t widx = ((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx;
            const double wk = wv.data[widx];
            double acc = 0.0;
            for (int oy = 0; oy < hout; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= hin) continue;
              for (int ox = 0; ox < wout; ++ox) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= win) continue;
                const double gv = go[oy * wout + ox];
                acc += gv * xi[iy * win + ix];
                if (gxi) gxi[iy * win + ix] += gv * wk;
              }
            }
            if (gw) gw->data[widx] += acc;
          }
      }
    }
    if (b.valid() && t.requires_grad(b)) {
      Tensor& gb = t.grad(b.id());
      for (int co = 0; co < cout; ++co) {
        double s = 0.0;
        for (int i = 0; i < hout * wout; ++i) s += g.data[static_cast<std::size_t>(co) * hout * wout + i];
        gb[static_cast<std::size_t>(co)] += s;
      }
    }
  });
}

Var layer_norm_channels(Var x, Var gamma, Var beta, double eps) {
  require_rank(x, 3, "layer_norm_channels");
  const Tensor& xv = x.value();
  const int c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  if (gamma.value().size() != static_cast<std::size_t>(c) || beta.value().size() != static_cast<std::size_t>(c))
    throw ShapeError("layer_norm_channels: affine parameter size mismatch");
  Tensor out(xv.shape);
  // Normalized activations and inverse deviations are kept for backward.
  auto xhat = std::make_shared<Tensor>(xv.shape);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(hw));
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (int p = 0; p < hw; ++p) {
    double mean = 0.0;
    for (int ch = 0; ch < c; ++ch) mean += xv[static_cast<std::size_t>(ch) * hw + p];
    mean /= c;
    double var = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double d = xv[static_cast<std::size_t>(ch) * hw + p] - mean;
      var += d * d;
    }
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(p)] = is;
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t idx = static_cast<std::size_t>(ch) * hw + p;
      const double xh = (xv[idx] - mean) * is;
      (*xhat)[idx] = xh;
      out[idx] = gv[static_cast<std::size_t>(ch)] * xh + bv[static_cast<std::size_t>(ch)];
    }
  }
  return x.tape()->record(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& gv = t.value(gamma.id());
    const int c = g.dim(0), hw = g.dim(1) * g.dim(2);
    if (t.requires_grad(gamma) || t.requires_grad(beta)) {
      Tensor& gg = t.grad(gamma.id());
      Tensor& gb = t.grad(beta.id());
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p) {
          const std::size_t idx = static_cast<std::size_t>(ch) * hw + p;
          gg[static_cast<std::size_t>(ch)] += g[idx] * (*xhat)[idx];
          gb[static_cast<std::size_t>(ch)] += g[idx];
        }
    }
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad(x.id());
      for (int p = 0; p < hw; ++p) {
        double m1 = 0.0, m2 = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t idx = static_cast<std::size_t>(ch) * hw + p;
          const double d = g[idx] * gv[static_cast<std::size_t>(ch)];
          m1 += d;
          m2 += d * (*xhat)[idx];
        }
        m1 /= c;
        m2 /= c;
        const double is = (*inv_std)[static_cast<std::size_t>(p)];
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t idx = static_cast<std::size_t>(ch) * hw + p;
          const double d = g[idx] * gv[static_cast<std::size_t>(ch)];
          gx[idx] += is * (d - m1 - (*xhat)[idx] * m2);
        }
      }
    }
  });
}

namespace {

struct BilinearTap {
  int x0, x1, y0, y1;
  double fx, fy;
  // Derivative of the clamped feature coordinate w.r.t. the image coordinate.
  double dux, duy;
};

BilinearTap bilinear_tap(double x, double y, double stride, int h, int w) {
  BilinearTap tap{};
  double u = x / stride - 0.5;
  double v = y / stride - 0.5;
  tap.dux = 1.0 / stride;
  tap.duy = 1.0 / stride;
  if (u <= 0.0) { u = 0.0; tap.dux = 0.0; }
  if (u >= w - 1) { u = w - 1; tap.dux = 0.0; }
  if (v <= 0.0) { v = 0.0; tap.duy = 0.0; }
  if (v >= h - 1) { v = h - 1; tap.duy = 0.0; }
  tap.x0 = std::min(static_cast<int>(std::floor(u)), std::max(w - 2, 0));
  tap.y0 = std::min(static_cast<int>(std::floor(v)), std::max(h - 2, 0));
  tap.x1 = std::min(tap.x0 + 1, w - 1);
  tap.y1 = std::min(tap.y0 + 1, h - 1);
  tap.fx = u - tap.x0;
  tap.fy = v - tap.y0;
  return tap;
}

}  // namespace

Var bilinear_sample(Var fmap, Var coords, double stride) {
  require_rank(fmap, 3, "bilinear_sample");
  require_rank(coords, 2, "bilinear_sample");
  const Tensor& f = fmap.value();
  const Tensor& pc = coords.value();
  if (pc.dim(1) != 2) throw ShapeError("bilinear_sample: coords must be K×2");
  if (stride <= 0.0) throw ArgumentError("bilinear_sample: stride must be positive");
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2), k = pc.dim(0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto taps = std::make_shared<std::vector<BilinearTap>>(static_cast<std::size_t>(k));
  Tensor out({k, c});
  for (int i = 0; i < k; ++i) {
    const double x = pc.at(i, 0), y = pc.at(i, 1);
    if (std::isnan(x) || std::isnan(y))
      throw NumericError("bilinear_sample: NaN coordinate at proposal " + std::to_string(i));
    const BilinearTap tp = bilinear_tap(x, y, stride, h, w);
    (*taps)[static_cast<std::size_t>(i)] = tp;
    const double w00 = (1 - tp.fx) * (1 - tp.fy), w01 = tp.fx * (1 - tp.fy);
    const double w10 = (1 - tp.fx) * tp.fy, w11 = tp.fx * tp.fy;
    for (int ch = 0; ch < c; ++ch) {
      const double* fc = &f.data[ch * plane];
      out.at(i, ch) = w00 * fc[tp.y0 * w + tp.x0] + w01 * fc[tp.y0 * w + tp.x1] +
                      w10 * fc[tp.y1 * w + tp.x0] + w11 * fc[tp.y1 * w + tp.x1];
    }
  }
  return fmap.tape()->record(std::move(out), {fmap, coords}, [fmap, coords, taps](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& f = t.value(fmap.id());
    const int c = f.dim(0), h = f.dim(1), w = f.dim(2), k = g.dim(0);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor* gf = t.requires_grad(fmap) ? &t.grad(fmap.id()) : nullptr;
    Tensor* gc = t.requires_grad(coords) ? &t.grad(coords.id()) : nullptr;
    for (int i = 0; i < k; ++i) {
      const BilinearTap& tp = (*taps)[static_cast<std::size_t>(i)];
      const double w00 = (1 - tp.fx) * (1 - tp.fy), w01 = tp.fx * (1 - tp.fy);
      const double w10 = (1 - tp.fx) * tp.fy, w11 = tp.fx * tp.fy;
      double gx = 0.0, gy = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double go = g.at(i, ch);
        if (go == 0.0) continue;
        const double* fc = &f.data[ch * plane];
        const double f00 = fc[tp.y0 * w + tp.x0], f01 = fc[tp.y0 * w + tp.x1];
        const double f10 = fc[tp.y1 * w + tp.x0], f11 = fc[tp.y1 * w + tp.x1];
        if (gf) {
          double* gfc = &gf->data[ch * plane];
          gfc[tp.y0 * w + tp.x0] += go * w00;
          gfc[tp.y0 * w + tp.x1] += go * w01;
          gfc[tp.y1 * w + tp.x0] += go * w10;
          gfc[tp.y1 * w + tp.x1] += go * w11;
        }
        gx += go * ((1 - tp.fy) * (f01 - f00) + tp.fy * (f11 - f10));
        gy += go * ((1 - tp.fx) * (f10 - f00) + tp.fx * (f11 - f01));
      }
      if (gc) {
        gc->at(i, 0) += gx * tp.dux;
        gc->at(i, 1) += gy * tp.duy;
      }
    }
  });
}

Var weighted_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights) {
  require_rank(logits, 2, "weighted_cross_entropy");
  const Tensor& s = logits.value();
  const int k = s.dim(0), m = s.dim(1);
  if (labels.size() != static_cast<std::size_t>(k))
    throw ShapeError("weighted_cross_entropy: label count does not match logits rows");
  if (class_weights.size() != static_cast<std::size_t>(m))
    throw ShapeError("weighted_cross_entropy: class weight count does not match logits columns");
  auto probs = std::make_shared<Tensor>(s.shape);
  double loss = 0.0;
  for (int n = 0; n < k; ++n) {
    const int lab = labels[static_cast<std::size_t>(n)];
    if (lab < 0 || lab >= m) throw ArgumentError("weighted_cross_entropy: label " + std::to_string(lab) + " out of range");
    double mx = s.at(n, 0);
    for (int c = 1; c < m; ++c) mx = std::max(mx, s.at(n, c));
    double z = 0.0;
    for (int c = 0; c < m; ++c) z += (probs->at(n, c) = std::exp(s.at(n, c) - mx));
    for (int c = 0; c < m; ++c) probs->at(n, c) /= z;
    const double log_p = s.at(n, lab) - mx - std::log(z);
    loss -= class_weights[static_cast<std::size_t>(lab)] * log_p;
  }
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> wts(class_weights.begin(), class_weights.end());
  return logits.tape()->record(Tensor({1}, {loss}), {logits}, [logits, probs, lab, wts](Tape& t, int self) {
    const double g = t.grad(self)[0];
    Tensor& gl = t.grad(logits.id());
    const int k = gl.dim(0), m = gl.dim(1);
    for (int n = 0; n < k; ++n) {
      const double wn = wts[static_cast<std::size_t>(lab[static_cast<std::size_t>(n)])];
      for (int c = 0; c < m; ++c) {
        const double onehot = c == lab[static_cast<std::size_t>(n)] ? 1.0 : 0.0;
        gl.at(n, c) += g * wn * (probs->at(n, c) - onehot);
      }
    }
  });
}

Var l1_pairs(Var points, const Tensor& targets, std::span<const std::pair<int, int>> pairs) {
  require_rank(points, 2, "l1_pairs");
  const Tensor& p = points.value();
  double loss = 0.0;
  std::vector<std::pair<int, int>> pr(pairs.begin(), pairs.end());
  for (auto [i, j] : pr) {
    if (i < 0 || i >= p.dim(0) || j < 0 || j >= targets.dim(0))
      throw ArgumentError("l1_pairs: pair index out of range");
    loss += std::fabs(p.at(i, 0) - targets.at(j, 0)) + std::fabs(p.at(i, 1) - targets.at(j, 1));
  }
  return points.tape()->record(Tensor({1}, {loss}), {points}, [points, targets, pr](Tape& t, int self) {
    const double g = t.grad(self)[0];
    const Tensor& p = t.value(points.id());
    Tensor& gp = t.grad(points.id());
    auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
    for (auto [i, j] : pr) {
      gp.at(i, 0) += g * sgn(p.at(i, 0) - targets.at(j, 0));
      gp.at(i, 1) += g * sgn(p.at(i, 1) - targets.at(j, 1));
    }
  });
}

}  // namespace apseg::ad
