#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "deft/autodiff.hpp"
#include "deft/tensor.hpp"

namespace deft {

// SELU constants (Klambauer et al.).
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;

namespace detail {

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                Tensor::shape_str(a.shape()) + " vs " +
                                Tensor::shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      if (!n.inputs[k]->requires_grad) continue;
      Tensor& g = n.inputs[k]->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (n.inputs[0]->requires_grad) {
      Tensor& g = n.inputs[0]->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& g = n.inputs[1]->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      Tensor& g = n.inputs[0]->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& g = n.inputs[1]->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  return make_op(std::move(out), {a}, [s](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) g[i] += s * n.grad[i];
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] += c;
  return make_op(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

/// c - a, elementwise.
inline Var sub_from_scalar(double c, const Var& a) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = c - out[i];
  return make_op(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "div");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      Tensor& g = n.inputs[0]->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] / bv[i];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& g = n.inputs[1]->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i)
        g[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

inline Var selu(const Var& a) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) {
    double x = out[i];
    out[i] = x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
  }
  return make_op(std::move(out), {a}, [](Node& n) {
    const Tensor& x = n.inputs[0]->value;
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) {
      double d = x[i] > 0.0 ? kSeluLambda
                            : kSeluLambda * kSeluAlpha * std::exp(x[i]);
      g[i] += n.grad[i] * d;
    }
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) {
    double x = out[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  Tensor y = out;
  return make_op(std::move(out), {a}, [y](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i)
      g[i] += n.grad[i] * y[i] * (1.0 - y[i]);
  });
}

// ---------------------------------------------------------------------------
// Reductions and linear algebra
// ---------------------------------------------------------------------------

inline Var sum(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.value().size(); ++i) s += a.value()[i];
  return make_op(Tensor::scalar(s), {a}, [](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    double d = n.grad[0];
    for (int64_t i = 0; i < g.size(); ++i) g[i] += d;
  });
}

inline Var mean(const Var& a) {
  int64_t cnt = a.value().size();
  if (cnt == 0) throw std::invalid_argument("mean: empty tensor");
  double s = 0.0;
  for (int64_t i = 0; i < cnt; ++i) s += a.value()[i];
  return make_op(Tensor::scalar(s / static_cast<double>(cnt)), {a},
                 [cnt](Node& n) {
                   Tensor& g = n.inputs[0]->ensure_grad();
                   double d = n.grad[0] / static_cast<double>(cnt);
                   for (int64_t i = 0; i < g.size(); ++i) g[i] += d;
                 });
}

inline Var dot(const Var& a, const Var& b) {
  if (a.value().size() != b.value().size())
    throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < a.value().size(); ++i)
    s += a.value()[i] * b.value()[i];
  return make_op(Tensor::scalar(s), {a, b}, [](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    double d = n.grad[0];
    if (n.inputs[0]->requires_grad) {
      Tensor& g = n.inputs[0]->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += d * bv[i];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& g = n.inputs[1]->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += d * av[i];
    }
  });
}

/// [m,k] x [k,n] -> [m,n]
inline Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 ||
      a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = a.value().at(i, p);
      for (int j = 0; j < n; ++j) out.at(i, j) += av * b.value().at(p, j);
    }
  return make_op(std::move(out), {a, b}, [m, k, n](Node& nd) {
    const Tensor& av = nd.inputs[0]->value;
    const Tensor& bv = nd.inputs[1]->value;
    if (nd.inputs[0]->requires_grad) {
      Tensor& ga = nd.inputs[0]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double d = nd.grad.at(i, j);
          for (int p = 0; p < k; ++p) ga.at(i, p) += d * bv.at(p, j);
        }
    }
    if (nd.inputs[1]->requires_grad) {
      Tensor& gb = nd.inputs[1]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double av_ip = av.at(i, p);
          for (int j = 0; j < n; ++j) gb.at(p, j) += av_ip * nd.grad.at(i, j);
        }
    }
  });
}

/// [m,k] x [n,k]^T -> [m,n]; used for descriptor similarity matrices.
inline Var matmul_nt(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 ||
      a.dim(1) != b.dim(1))
    throw std::invalid_argument("matmul_nt: incompatible shapes");
  int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a.value().at(i, p) * b.value().at(j, p);
      out.at(i, j) = s;
    }
  return make_op(std::move(out), {a, b}, [m, k, n](Node& nd) {
    const Tensor& av = nd.inputs[0]->value;
    const Tensor& bv = nd.inputs[1]->value;
    if (nd.inputs[0]->requires_grad) {
      Tensor& ga = nd.inputs[0]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double d = nd.grad.at(i, j);
          for (int p = 0; p < k; ++p) ga.at(i, p) += d * bv.at(j, p);
        }
    }
    if (nd.inputs[1]->requires_grad) {
      Tensor& gb = nd.inputs[1]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double d = nd.grad.at(i, j);
          for (int p = 0; p < k; ++p) gb.at(j, p) += d * av.at(i, p);
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var reshape(const Var& a, std::vector<int> shape) {
  if (Tensor::numel_of(shape) != a.value().size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(shape), a.value().vec());
  return make_op(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

/// Stacks equally-shaped tensors along a new leading axis.
inline Var stack(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack: empty input");
  const std::vector<int>& s0 = parts[0].shape();
  int64_t step = parts[0].value().size();
  std::vector<int> out_shape;
  out_shape.push_back(static_cast<int>(parts.size()));
  for (int d : s0) out_shape.push_back(d);
  Tensor out(out_shape);
  for (size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].shape() != s0)
      throw std::invalid_argument("stack: shape mismatch");
    for (int64_t i = 0; i < step; ++i) out[p * step + i] = parts[p].value()[i];
  }
  return make_op(std::move(out), parts, [step](Node& n) {
    for (size_t p = 0; p < n.inputs.size(); ++p) {
      if (!n.inputs[p]->requires_grad) continue;
      Tensor& g = n.inputs[p]->ensure_grad();
      for (int64_t i = 0; i < step; ++i) g[i] += n.grad[p * step + i];
    }
  });
}

/// Gathers rows of a [n,d] matrix; duplicate indices accumulate on backward.
inline Var gather_rows(const Var& m, const std::vector<int>& idx) {
  if (m.value().rank() != 2) throw std::invalid_argument("gather_rows: rank");
  int d = m.dim(1);
  Tensor out({static_cast<int>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= m.dim(0))
      throw std::out_of_range("gather_rows: index");
    for (int c = 0; c < d; ++c) out.at(static_cast<int>(r), c) = m.value().at(idx[r], c);
  }
  return make_op(std::move(out), {m}, [idx, d](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < d; ++c)
        g.at(idx[r], c) += n.grad.at(static_cast<int>(r), c);
  });
}

/// rows [n,d] + v [d], broadcast over rows.
inline Var add_row_vector(const Var& rows, const Var& v) {
  if (rows.value().rank() != 2 || v.value().rank() != 1 ||
      rows.dim(1) != v.dim(0))
    throw std::invalid_argument("add_row_vector: shapes");
  int n = rows.dim(0), d = rows.dim(1);
  Tensor out = rows.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) += v.value()[j];
  return make_op(std::move(out), {rows, v}, [n, d](Node& nd) {
    if (nd.inputs[0]->requires_grad) {
      Tensor& g = nd.inputs[0]->ensure_grad();
      for (int64_t i = 0; i < nd.grad.size(); ++i) g[i] += nd.grad[i];
    }
    if (nd.inputs[1]->requires_grad) {
      Tensor& g = nd.inputs[1]->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) g[j] += nd.grad.at(i, j);
    }
  });
}

/// Concatenates [H,W,Ci] maps along the channel axis.
inline Var concat_channels(const std::vector<Var>& maps) {
  if (maps.empty()) throw std::invalid_argument("concat_channels: empty");
  int h = maps[0].dim(0), w = maps[0].dim(1);
  int ctot = 0;
  for (const Var& m : maps) {
    if (m.value().rank() != 3 || m.dim(0) != h || m.dim(1) != w)
      throw std::invalid_argument("concat_channels: shape mismatch");
    ctot += m.dim(2);
  }
  Tensor out({h, w, ctot});
  std::vector<int> offs;
  int off = 0;
  for (const Var& m : maps) {
    offs.push_back(off);
    int c = m.dim(2);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int k = 0; k < c; ++k) out.at(y, x, off + k) = m.value().at(y, x, k);
    off += c;
  }
  return make_op(std::move(out), maps, [h, w, offs](Node& n) {
    for (size_t p = 0; p < n.inputs.size(); ++p) {
      if (!n.inputs[p]->requires_grad) continue;
      Tensor& g = n.inputs[p]->ensure_grad();
      int c = g.dim(2);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int k = 0; k < c; ++k) g.at(y, x, k) += n.grad.at(y, x, offs[p] + k);
    }
  });
}

/// Slices a [W,W] window centered at integer pixel (cx, cy) out of an [H,W]
/// map. The window must lie fully inside the map.
inline Var extract_patch(const Var& map, int cy, int cx, int w) {
  if (map.value().rank() != 2) throw std::invalid_argument("extract_patch: rank");
  if (w % 2 == 0) throw std::invalid_argument("extract_patch: even window");
  int r = w / 2;
  int hh = map.dim(0), ww = map.dim(1);
  if (cy - r < 0 || cx - r < 0 || cy + r >= hh || cx + r >= ww)
    throw std::out_of_range("extract_patch: window crosses the border");
  Tensor out({w, w});
  for (int dy = 0; dy < w; ++dy)
    for (int dx = 0; dx < w; ++dx)
      out.at(dy, dx) = map.value().at(cy - r + dy, cx - r + dx);
  return make_op(std::move(out), {map}, [cy, cx, w, r](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (int dy = 0; dy < w; ++dy)
      for (int dx = 0; dx < w; ++dx)
        g.at(cy - r + dy, cx - r + dx) += n.grad.at(dy, dx);
  });
}

// ---------------------------------------------------------------------------
// Sampling, convolution, pooling
// ---------------------------------------------------------------------------

namespace detail {

/// Shared bilinear kernel with zero padding outside the map.
/// Accumulates the sampled C-vector into `out`, or derivatives on demand.
struct BilinearTap {
  int x0, y0;
  double fx, fy;
  bool in00, in10, in01, in11;
};

inline BilinearTap bilinear_tap(int h, int w, double x, double y) {
  BilinearTap t;
  t.x0 = static_cast<int>(std::floor(x));
  t.y0 = static_cast<int>(std::floor(y));
  t.fx = x - t.x0;
  t.fy = y - t.y0;
  auto inside = [h, w](int xx, int yy) {
    return xx >= 0 && xx < w && yy >= 0 && yy < h;
  };
  t.in00 = inside(t.x0, t.y0);
  t.in10 = inside(t.x0 + 1, t.y0);
  t.in01 = inside(t.x0, t.y0 + 1);
  t.in11 = inside(t.x0 + 1, t.y0 + 1);
  return t;
}

}  // namespace detail

/// Samples a [H,W,C] grid at subpixel points [N,2] (x,y order), zero padding
/// outside; returns [N,C]. Differentiable in both the grid and the points.
inline Var bilinear_sample(const Var& grid, const Var& points) {
  if (grid.value().rank() != 3 || points.value().rank() != 2 ||
      points.dim(1) != 2)
    throw std::invalid_argument("bilinear_sample: expects [H,W,C] and [N,2]");
  int h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
  int n = points.dim(0);
  Tensor out({n, c});
  const Tensor& g = grid.value();
  for (int i = 0; i < n; ++i) {
    double x = points.value().at(i, 0), y = points.value().at(i, 1);
    auto t = detail::bilinear_tap(h, w, x, y);
    double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
    double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
    for (int k = 0; k < c; ++k) {
      double v = 0.0;
      if (t.in00) v += w00 * g.at(t.y0, t.x0, k);
      if (t.in10) v += w10 * g.at(t.y0, t.x0 + 1, k);
      if (t.in01) v += w01 * g.at(t.y0 + 1, t.x0, k);
      if (t.in11) v += w11 * g.at(t.y0 + 1, t.x0 + 1, k);
      out.at(i, k) = v;
    }
  }
  return make_op(std::move(out), {grid, points}, [h, w, c, n](Node& nd) {
    const Tensor& g = nd.inputs[0]->value;
    const Tensor& pts = nd.inputs[1]->value;
    bool need_g = nd.inputs[0]->requires_grad;
    bool need_p = nd.inputs[1]->requires_grad;
    Tensor* gg = need_g ? &nd.inputs[0]->ensure_grad() : nullptr;
    Tensor* gp = need_p ? &nd.inputs[1]->ensure_grad() : nullptr;
    for (int i = 0; i < n; ++i) {
      double x = pts.at(i, 0), y = pts.at(i, 1);
      auto t = detail::bilinear_tap(h, w, x, y);
      double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
      double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
      double dx = 0.0, dy = 0.0;
      for (int k = 0; k < c; ++k) {
        double d = nd.grad.at(i, k);
        if (d == 0.0) continue;
        double v00 = t.in00 ? g.at(t.y0, t.x0, k) : 0.0;
        double v10 = t.in10 ? g.at(t.y0, t.x0 + 1, k) : 0.0;
        double v01 = t.in01 ? g.at(t.y0 + 1, t.x0, k) : 0.0;
        double v11 = t.in11 ? g.at(t.y0 + 1, t.x0 + 1, k) : 0.0;
        if (need_g) {
          if (t.in00) gg->at(t.y0, t.x0, k) += d * w00;
          if (t.in10) gg->at(t.y0, t.x0 + 1, k) += d * w10;
          if (t.in01) gg->at(t.y0 + 1, t.x0, k) += d * w01;
          if (t.in11) gg->at(t.y0 + 1, t.x0 + 1, k) += d * w11;
        }
        if (need_p) {
          dx += d * ((1 - t.fy) * (v10 - v00) + t.fy * (v11 - v01));
          dy += d * ((1 - t.fx) * (v01 - v00) + t.fx * (v11 - v10));
        }
      }
      if (need_p) {
        gp->at(i, 0) += dx;
        gp->at(i, 1) += dy;
      }
    }
  });
}

/// Cross-correlation of [H,W,Cin] with [K,K,Cin,Cout] (+ optional bias
/// [Cout]), zero padding `pad`, stride `stride`.
inline Var conv2d(const Var& grid, const Var& kernel, const Var& bias,
                  int stride = 1, int pad = 0) {
  if (grid.value().rank() != 3 || kernel.value().rank() != 4)
    throw std::invalid_argument("conv2d: expects [H,W,Cin] and [K,K,Cin,Cout]");
  int h = grid.dim(0), w = grid.dim(1), cin = grid.dim(2);
  int kh = kernel.dim(0), kw = kernel.dim(1);
  if (kernel.dim(2) != cin)
    throw std::invalid_argument("conv2d: channel mismatch");
  int cout = kernel.dim(3);
  bool has_bias = bias.defined() && bias.value().size() > 0;
  if (has_bias && bias.value().size() != cout)
    throw std::invalid_argument("conv2d: bias size mismatch");
  if (stride < 1) throw std::invalid_argument("conv2d: stride < 1");
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (w + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

  Tensor out({oh, ow, cout});
  const Tensor& g = grid.value();
  const Tensor& kv = kernel.value();
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int co = 0; co < cout; ++co) {
        double acc = has_bias ? bias.value()[co] : 0.0;
        for (int ky = 0; ky < kh; ++ky) {
          int y = oy * stride - pad + ky;
          if (y < 0 || y >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int x = ox * stride - pad + kx;
            if (x < 0 || x >= w) continue;
            for (int ci = 0; ci < cin; ++ci)
              acc += kv.at(ky, kx, ci, co) * g.at(y, x, ci);
          }
        }
        out.at(oy, ox, co) = acc;
      }

  std::vector<Var> inputs = has_bias ? std::vector<Var>{grid, kernel, bias}
                                     : std::vector<Var>{grid, kernel};
  return make_op(
      std::move(out), std::move(inputs),
      [h, w, cin, kh, kw, cout, stride, pad, oh, ow, has_bias](Node& nd) {
        const Tensor& g = nd.inputs[0]->value;
        const Tensor& kv = nd.inputs[1]->value;
        bool need_g = nd.inputs[0]->requires_grad;
        bool need_k = nd.inputs[1]->requires_grad;
        bool need_b = has_bias && nd.inputs[2]->requires_grad;
        Tensor* gg = need_g ? &nd.inputs[0]->ensure_grad() : nullptr;
        Tensor* gk = need_k ? &nd.inputs[1]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &nd.inputs[2]->ensure_grad() : nullptr;
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox)
            for (int co = 0; co < cout; ++co) {
              double d = nd.grad.at(oy, ox, co);
              if (d == 0.0) continue;
              if (need_b) (*gb)[co] += d;
              for (int ky = 0; ky < kh; ++ky) {
                int y = oy * stride - pad + ky;
                if (y < 0 || y >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  int x = ox * stride - pad + kx;
                  if (x < 0 || x >= w) continue;
                  for (int ci = 0; ci < cin; ++ci) {
                    if (need_k) gk->at(ky, kx, ci, co) += d * g.at(y, x, ci);
                    if (need_g) gg->at(y, x, ci) += d * kv.at(ky, kx, ci, co);
                  }
                }
              }
            }
      });
}

/// Deformable convolution: same-size output, stride 1, zero padding.
/// `offsets` is [H,W,K*K,2] (x,y displacement added to each grid tap of each
/// output pixel). Zero offsets reproduce conv2d with pad=(K-1)/2 exactly.
inline Var dcn_conv(const Var& grid, const Var& kernel, const Var& bias,
                    const Var& offsets) {
  if (grid.value().rank() != 3 || kernel.value().rank() != 4 ||
      offsets.value().rank() != 4)
    throw std::invalid_argument("dcn_conv: bad ranks");
  int h = grid.dim(0), w = grid.dim(1), cin = grid.dim(2);
  int k = kernel.dim(0);
  if (kernel.dim(1) != k || k % 2 == 0)
    throw std::invalid_argument("dcn_conv: kernel must be odd square");
  if (kernel.dim(2) != cin)
    throw std::invalid_argument("dcn_conv: channel mismatch");
  int cout = kernel.dim(3);
  if (offsets.dim(0) != h || offsets.dim(1) != w || offsets.dim(2) != k * k ||
      offsets.dim(3) != 2)
    throw std::invalid_argument("dcn_conv: offsets must be [H,W,K*K,2]");
  bool has_bias = bias.defined() && bias.value().size() > 0;
  if (has_bias && bias.value().size() != cout)
    throw std::invalid_argument("dcn_conv: bias size mismatch");
  int r = k / 2;

  const Tensor& g = grid.value();
  const Tensor& kv = kernel.value();
  const Tensor& off = offsets.value();
  Tensor out({h, w, cout});
  std::vector<double> sample(static_cast<size_t>(k) * k * cin);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Gather the K*K deformed taps once per output pixel.
      for (int i = 0; i < k * k; ++i) {
        int ky = i / k, kx = i % k;
        double sx = x + (kx - r) + off.at(y, x, i, 0);
        double sy = y + (ky - r) + off.at(y, x, i, 1);
        auto t = detail::bilinear_tap(h, w, sx, sy);
        double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
        double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
        for (int ci = 0; ci < cin; ++ci) {
          double v = 0.0;
          if (t.in00) v += w00 * g.at(t.y0, t.x0, ci);
          if (t.in10) v += w10 * g.at(t.y0, t.x0 + 1, ci);
          if (t.in01) v += w01 * g.at(t.y0 + 1, t.x0, ci);
          if (t.in11) v += w11 * g.at(t.y0 + 1, t.x0 + 1, ci);
          sample[static_cast<size_t>(i) * cin + ci] = v;
        }
      }
      for (int co = 0; co < cout; ++co) {
        double acc = has_bias ? bias.value()[co] : 0.0;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            int i = ky * k + kx;
            for (int ci = 0; ci < cin; ++ci)
              acc += kv.at(ky, kx, ci, co) *
                     sample[static_cast<size_t>(i) * cin + ci];
          }
        out.at(y, x, co) = acc;
      }
    }

  std::vector<Var> inputs = has_bias
                                ? std::vector<Var>{grid, kernel, offsets, bias}
                                : std::vector<Var>{grid, kernel, offsets};
  return make_op(std::move(out), std::move(inputs),
                 [h, w, cin, k, cout, r, has_bias](Node& nd) {
    const Tensor& g = nd.inputs[0]->value;
    const Tensor& kv = nd.inputs[1]->value;
    const Tensor& off = nd.inputs[2]->value;
    bool need_g = nd.inputs[0]->requires_grad;
    bool need_k = nd.inputs[1]->requires_grad;
    bool need_o = nd.inputs[2]->requires_grad;
    bool need_b = has_bias && nd.inputs[3]->requires_grad;
    Tensor* gg = need_g ? &nd.inputs[0]->ensure_grad() : nullptr;
    Tensor* gk = need_k ? &nd.inputs[1]->ensure_grad() : nullptr;
    Tensor* go = need_o ? &nd.inputs[2]->ensure_grad() : nullptr;
    Tensor* gb = need_b ? &nd.inputs[3]->ensure_grad() : nullptr;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int i = 0; i < k * k; ++i) {
          int ky = i / k, kx = i % k;
          double sx = x + (kx - r) + off.at(y, x, i, 0);
          double sy = y + (ky - r) + off.at(y, x, i, 1);
          auto t = detail::bilinear_tap(h, w, sx, sy);
          double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
          double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
          double dx = 0.0, dy = 0.0;
          for (int ci = 0; ci < cin; ++ci) {
            double v00 = t.in00 ? g.at(t.y0, t.x0, ci) : 0.0;
            double v10 = t.in10 ? g.at(t.y0, t.x0 + 1, ci) : 0.0;
            double v01 = t.in01 ? g.at(t.y0 + 1, t.x0, ci) : 0.0;
            double v11 = t.in11 ? g.at(t.y0 + 1, t.x0 + 1, ci) : 0.0;
            double sample = w00 * v00 + w10 * v10 + w01 * v01 + w11 * v11;
            // dL/d(sample_ci) pooled over output channels.
            double ds = 0.0;
            for (int co = 0; co < cout; ++co) {
              double d = nd.grad.at(y, x, co);
              if (d == 0.0) continue;
              ds += d * kv.at(ky, kx, ci, co);
              if (need_k) gk->at(ky, kx, ci, co) += d * sample;
              if (need_b && ci == 0 && i == 0) (*gb)[co] += d;
            }
            if (ds != 0.0) {
              if (need_g) {
                if (t.in00) gg->at(t.y0, t.x0, ci) += ds * w00;
                if (t.in10) gg->at(t.y0, t.x0 + 1, ci) += ds * w10;
                if (t.in01) gg->at(t.y0 + 1, t.x0, ci) += ds * w01;
                if (t.in11) gg->at(t.y0 + 1, t.x0 + 1, ci) += ds * w11;
              }
              dx += ds * ((1 - t.fy) * (v10 - v00) + t.fy * (v11 - v01));
              dy += ds * ((1 - t.fx) * (v01 - v00) + t.fx * (v11 - v10));
            }
          }
          if (need_o) {
            go->at(y, x, i, 0) += dx;
            go->at(y, x, i, 1) += dy;
          }
        }
  });
}

/// Non-overlapping k x k average pooling; H and W must divide by k.
inline Var avg_pool(const Var& grid, int k) {
  if (grid.value().rank() != 3) throw std::invalid_argument("avg_pool: rank");
  int h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
  if (h % k != 0 || w % k != 0)
    throw std::invalid_argument("avg_pool: size not divisible by window");
  int oh = h / k, ow = w / k;
  Tensor out({oh, ow, c});
  double inv = 1.0 / (k * k);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int ci = 0; ci < c; ++ci) {
        double s = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            s += grid.value().at(oy * k + dy, ox * k + dx, ci);
        out.at(oy, ox, ci) = s * inv;
      }
  return make_op(std::move(out), {grid}, [k, oh, ow, c, inv](Node& nd) {
    Tensor& g = nd.inputs[0]->ensure_grad();
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int ci = 0; ci < c; ++ci) {
          double d = nd.grad.at(oy, ox, ci) * inv;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              g.at(oy * k + dy, ox * k + dx, ci) += d;
        }
  });
}

/// Bilinear upsampling to (oh, ow) with half-pixel centers and edge clamping
/// (a constant map stays constant; contrast with bilinear_sample's zero pad).
inline Var upsample_bilinear(const Var& grid, int oh, int ow) {
  if (grid.value().rank() != 3) throw std::invalid_argument("upsample: rank");
  int h = grid.dim(0), w = grid.dim(1), c = grid.dim(2);
  Tensor out({oh, ow, c});
  double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
  auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
  for (int oy = 0; oy < oh; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = clampi(y0, 0, h - 1), y1c = clampi(y0 + 1, 0, h - 1);
    for (int ox = 0; ox < ow; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = clampi(x0, 0, w - 1), x1c = clampi(x0 + 1, 0, w - 1);
      for (int ci = 0; ci < c; ++ci) {
        const Tensor& g = grid.value();
        out.at(oy, ox, ci) = (1 - wy) * ((1 - wx) * g.at(y0c, x0c, ci) +
                                         wx * g.at(y0c, x1c, ci)) +
                             wy * ((1 - wx) * g.at(y1c, x0c, ci) +
                                   wx * g.at(y1c, x1c, ci));
      }
    }
  }
  return make_op(std::move(out), {grid}, [h, w, c, oh, ow, sy, sx](Node& nd) {
    Tensor& g = nd.inputs[0]->ensure_grad();
    auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
    for (int oy = 0; oy < oh; ++oy) {
      double fy = (oy + 0.5) * sy - 0.5;
      int y0 = static_cast<int>(std::floor(fy));
      double wy = fy - y0;
      int y0c = clampi(y0, 0, h - 1), y1c = clampi(y0 + 1, 0, h - 1);
      for (int ox = 0; ox < ow; ++ox) {
        double fx = (ox + 0.5) * sx - 0.5;
        int x0 = static_cast<int>(std::floor(fx));
        double wx = fx - x0;
        int x0c = clampi(x0, 0, w - 1), x1c = clampi(x0 + 1, 0, w - 1);
        for (int ci = 0; ci < c; ++ci) {
          double d = nd.grad.at(oy, ox, ci);
          if (d == 0.0) continue;
          g.at(y0c, x0c, ci) += d * (1 - wy) * (1 - wx);
          g.at(y0c, x1c, ci) += d * (1 - wy) * wx;
          g.at(y1c, x0c, ci) += d * wy * (1 - wx);
          g.at(y1c, x1c, ci) += d * wy * wx;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

/// softmax(x / t) over the flattened tensor, max-shifted for stability.
inline Var softmax(const Var& x, double t = 1.0) {
  if (t <= 0.0) throw std::domain_error("softmax: temperature must be > 0");
  if (x.value().size() == 0) throw std::invalid_argument("softmax: empty");
  Tensor out = x.value();
  double m = out[0];
  for (int64_t i = 1; i < out.size(); ++i) m = std::max(m, out[i]);
  double z = 0.0;
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp((out[i] - m) / t);
    z += out[i];
  }
  for (int64_t i = 0; i < out.size(); ++i) out[i] /= z;
  Tensor y = out;
  return make_op(std::move(out), {x}, [y, t](Node& nd) {
    Tensor& g = nd.inputs[0]->ensure_grad();
    double s = 0.0;
    for (int64_t i = 0; i < y.size(); ++i) s += nd.grad[i] * y[i];
    for (int64_t i = 0; i < y.size(); ++i) g[i] += y[i] * (nd.grad[i] - s) / t;
  });
}

/// Soft-argmax over an odd [W,W] patch: expectation of the coordinate grid
/// (x,y, centered at the patch center) under softmax(patch / t). The result
/// lies in [-(W-1)/2, (W-1)/2]^2.
inline Var softargmax(const Var& patch, double t) {
  if (patch.value().rank() != 2 || patch.dim(0) != patch.dim(1))
    throw std::invalid_argument("softargmax: expects square patch");
  int w = patch.dim(0);
  if (w % 2 == 0) throw std::domain_error("softargmax: window must be odd");
  Var q = softmax(patch, t);
  int r = w / 2;
  Tensor cx({w * w}), cy({w * w});
  for (int i = 0; i < w * w; ++i) {
    cx[i] = (i % w) - r;
    cy[i] = (i / w) - r;
  }
  Var qf = reshape(q, {w * w});
  Var ox = dot(qf, Var::constant(std::move(cx)));
  Var oy = dot(qf, Var::constant(std::move(cy)));
  return stack({ox, oy});
}

/// Per-row cross-entropy -ln softmax(row / t)[target]; returns [n].
inline Var softmax_xent_rows(const Var& logits, const std::vector<int>& targets,
                             double t) {
  if (logits.value().rank() != 2)
    throw std::invalid_argument("softmax_xent_rows: rank");
  if (t <= 0.0) throw std::domain_error("softmax_xent_rows: temperature");
  int n = logits.dim(0), m = logits.dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("softmax_xent_rows: target count");
  Tensor out({n});
  Tensor probs({n, m});
  for (int i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= m)
      throw std::out_of_range("softmax_xent_rows: target index");
    double mx = logits.value().at(i, 0);
    for (int j = 1; j < m; ++j) mx = std::max(mx, logits.value().at(i, j));
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      double e = std::exp((logits.value().at(i, j) - mx) / t);
      probs.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < m; ++j) probs.at(i, j) /= z;
    out[i] = -std::log(probs.at(i, targets[i]));
  }
  return make_op(std::move(out), {logits}, [probs, targets, t, n, m](Node& nd) {
    Tensor& g = nd.inputs[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      double d = nd.grad[i];
      if (d == 0.0) continue;
      for (int j = 0; j < m; ++j) {
        double delta = (j == targets[i]) ? 1.0 : 0.0;
        g.at(i, j) += d * (probs.at(i, j) - delta) / t;
      }
    }
  });
}

/// Per-row softmax(row / t)[target]; returns [n] probabilities.
inline Var softmax_pick_rows(const Var& logits, const std::vector<int>& targets,
                             double t) {
  if (logits.value().rank() != 2)
    throw std::invalid_argument("softmax_pick_rows: rank");
  if (t <= 0.0) throw std::domain_error("softmax_pick_rows: temperature");
  int n = logits.dim(0), m = logits.dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("softmax_pick_rows: target count");
  Tensor out({n});
  Tensor probs({n, m});
  for (int i = 0; i < n; ++i) {
    double mx = logits.value().at(i, 0);
    for (int j = 1; j < m; ++j) mx = std::max(mx, logits.value().at(i, j));
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      double e = std::exp((logits.value().at(i, j) - mx) / t);
      probs.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < m; ++j) probs.at(i, j) /= z;
    out[i] = probs.at(i, targets[i]);
  }
  return make_op(std::move(out), {logits}, [probs, targets, t, n, m](Node& nd) {
    Tensor& g = nd.inputs[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      double d = nd.grad[i];
      if (d == 0.0) continue;
      double qt = probs.at(i, targets[i]);
      for (int j = 0; j < m; ++j) {
        double delta = (j == targets[i]) ? 1.0 : 0.0;
        g.at(i, j) += d * qt * (delta - probs.at(i, j)) / t;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

/// Euclidean norm of each [n,2] row (guarded near zero); returns [n].
inline Var rowwise_norm(const Var& pts) {
  if (pts.value().rank() != 2 || pts.dim(1) != 2)
    throw std::invalid_argument("rowwise_norm: expects [n,2]");
  int n = pts.dim(0);
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double x = pts.value().at(i, 0), y = pts.value().at(i, 1);
    out[i] = std::sqrt(std::max(x * x + y * y, 1e-24));
  }
  Tensor norms = out;
  return make_op(std::move(out), {pts}, [norms, n](Node& nd) {
    const Tensor& p = nd.inputs[0]->value;
    Tensor& g = nd.inputs[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      double d = nd.grad[i] / norms[i];
      g.at(i, 0) += d * p.at(i, 0);
      g.at(i, 1) += d * p.at(i, 1);
    }
  });
}

/// Distances from a single point [2] to constant coordinates [n,2]; [n].
inline Var dist_to_coords(const Var& p, const Tensor& coords) {
  if (p.value().size() != 2 || coords.rank() != 2 || coords.dim(1) != 2)
    throw std::invalid_argument("dist_to_coords: shapes");
  int n = coords.dim(0);
  Tensor out({n});
  double px = p.value()[0], py = p.value()[1];
  for (int i = 0; i < n; ++i) {
    double dx = px - coords.at(i, 0), dy = py - coords.at(i, 1);
    out[i] = std::sqrt(std::max(dx * dx + dy * dy, 1e-24));
  }
  Tensor dists = out;
  return make_op(std::move(out), {p}, [dists, coords, n](Node& nd) {
    const Tensor& pv = nd.inputs[0]->value;
    Tensor& g = nd.inputs[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      double d = nd.grad[i] / dists[i];
      g[0] += d * (pv[0] - coords.at(i, 0));
      g[1] += d * (pv[1] - coords.at(i, 1));
    }
  });
}

/// Row-wise L2 normalization of [n,d]; rows with norm below eps are scaled
/// by 1/eps instead (matching the usual max(norm, eps) guard).
inline Var l2_normalize_rows(const Var& m, double eps = 1e-12) {
  if (m.value().rank() != 2)
    throw std::invalid_argument("l2_normalize_rows: rank");
  int n = m.dim(0), d = m.dim(1);
  Tensor out({n, d});
  Tensor norms({n});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += m.value().at(i, j) * m.value().at(i, j);
    double nn = std::max(std::sqrt(s), eps);
    norms[i] = nn;
    for (int j = 0; j < d; ++j) out.at(i, j) = m.value().at(i, j) / nn;
  }
  Tensor y = out;
  return make_op(std::move(out), {m}, [y, norms, n, d, eps](Node& nd) {
    Tensor& g = nd.inputs[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      if (norms[i] <= eps) {
        for (int j = 0; j < d; ++j) g.at(i, j) += nd.grad.at(i, j) / eps;
        continue;
      }
      double dy_dot_y = 0.0;
      for (int j = 0; j < d; ++j) dy_dot_y += nd.grad.at(i, j) * y.at(i, j);
      for (int j = 0; j < d; ++j)
        g.at(i, j) += (nd.grad.at(i, j) - y.at(i, j) * dy_dot_y) / norms[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Non-maximum suppression (not differentiable)
// ---------------------------------------------------------------------------

/// Mask of strict local maxima of an [H,W] map over a (2*radius+1)^2 window
/// (clipped at borders). Plateaus are suppressed: ties never survive.
inline Tensor nms(const Tensor& s, int radius) {
  if (s.rank() != 2) throw std::invalid_argument("nms: expects [H,W]");
  if (radius < 1) throw std::invalid_argument("nms: radius must be >= 1");
  int h = s.dim(0), w = s.dim(1);
  Tensor mask({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = s.at(y, x);
      bool is_max = true;
      for (int dy = -radius; dy <= radius && is_max; ++dy) {
        int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          int xx = x + dx;
          if (xx < 0 || xx >= w || (dx == 0 && dy == 0)) continue;
          if (s.at(yy, xx) >= v) {
            is_max = false;
            break;
          }
        }
      }
      mask.at(y, x) = is_max ? 1.0 : 0.0;
    }
  return mask;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const std::function<Var(const Var&)>& f,
                         const Tensor& x0, double eps) {
  if (eps <= 0.0) throw std::domain_error("grad_check: eps must be > 0");
  Var x = Var::leaf(x0, /*requires_grad=*/true);
  Var y = f(x);
  backward(y);
  Tensor analytic = x.node->grad.size() > 0 ? x.node->grad : Tensor(x0.shape());

  Tensor xp = x0;
  double max_rel = 0.0;
  for (int64_t i = 0; i < x0.size(); ++i) {
    xp[i] = x0[i] + eps;
    double fp = f(Var::constant(xp)).value().item();
    xp[i] = x0[i] - eps;
    double fm = f(Var::constant(xp)).value().item();
    xp[i] = x0[i];
    double numeric = (fp - fm) / (2.0 * eps);
    double rel = std::abs(analytic[i] - numeric) /
                 std::max(1.0, std::abs(analytic[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

/// grad_check restricted to a random subset of coordinates; used where the
/// full central-difference sweep would be needlessly slow (large parameter
/// vectors of composite models).
inline double grad_check_sampled(const std::function<Var(const Var&)>& f,
                                 const Tensor& x0, double eps,
                                 int64_t max_coords, uint64_t seed) {
  if (x0.size() <= max_coords) return grad_check(f, x0, eps);
  Var x = Var::leaf(x0, true);
  Var y = f(x);
  backward(y);
  Tensor analytic = x.node->grad.size() > 0 ? x.node->grad : Tensor(x0.shape());

  std::mt19937_64 rng(seed);
  std::vector<int64_t> coords(static_cast<size_t>(x0.size()));
  for (int64_t i = 0; i < x0.size(); ++i) coords[static_cast<size_t>(i)] = i;
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(static_cast<size_t>(max_coords));

  Tensor xp = x0;
  double max_rel = 0.0;
  for (int64_t i : coords) {
    xp[i] = x0[i] + eps;
    double fp = f(Var::constant(xp)).value().item();
    xp[i] = x0[i] - eps;
    double fm = f(Var::constant(xp)).value().item();
    xp[i] = x0[i];
    double numeric = (fp - fm) / (2.0 * eps);
    double rel = std::abs(analytic[i] - numeric) /
                 std::max(1.0, std::abs(analytic[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace deft
