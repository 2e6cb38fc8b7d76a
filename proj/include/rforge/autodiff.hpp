#pragma once

// Tensor-level reverse-mode differentiation. Every op records a node holding
// its value and a closure that pushes the node's gradient into its parents.
// Nodes whose inputs need no gradient keep no parents, so inference graphs
// are dropped as soon as the values are.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rforge/error.hpp"
#include "rforge/tensor.hpp"

namespace rforge::ad {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  Tensor<T>& ensure_grad() {
    if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
    return grad;
  }
  bool has_grad() const noexcept { return grad.shape == value.shape && !grad.data.empty(); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

inline thread_local bool grad_enabled = true;

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
  ~NoGradGuard() { grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <class T>
Var<T> parameter(Tensor<T> value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

namespace detail {

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (const T& x : t.data)
    if (!std::isfinite(x)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
}

template <class T>
Var<T> make(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn,
            const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  if (grad_enabled)
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

// Output index range [lo, hi) for which in = out * stride + k - pad lies in [0, extent).
inline std::pair<long, long> valid_range(long k, long stride, long pad, long extent, long out) {
  const long a = pad - k;
  const long lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const long b = extent - 1 + pad - k;
  const long hi = b < 0 ? 0 : std::min(out, b / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Raw 3D convolution kernels. x: [N,Ci,D,H,W], w: [Co,Ci,kd,kh,kw], b: [Co].

struct ConvGeometry {
  long n, ci, co, d, h, w, kd, kh, kw, od, oh, ow, stride, pad;
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                           int pad) {
  detail::require(x.rank() == 5, "conv3d input must be [N,C,D,H,W], got " + to_string(x.shape));
  detail::require(w.rank() == 5, "conv3d kernel must be rank 5, got " + to_string(w.shape));
  detail::require(w.dim(1) == x.dim(1), "conv3d channel mismatch: input " + to_string(x.shape) +
                                            " kernel " + to_string(w.shape));
  detail::require(b.rank() == 1 && b.dim(0) == w.dim(0), "conv3d bias must be [Co]");
  detail::require(w.dim(2) % 2 == 1 && w.dim(3) % 2 == 1 && w.dim(4) % 2 == 1,
                  "conv3d kernel extents must be odd");
  detail::require(stride >= 1 && pad >= 0, "conv3d stride must be >= 1 and pad >= 0");
  ConvGeometry g{};
  g.n = static_cast<long>(x.dim(0));
  g.ci = static_cast<long>(x.dim(1));
  g.d = static_cast<long>(x.dim(2));
  g.h = static_cast<long>(x.dim(3));
  g.w = static_cast<long>(x.dim(4));
  g.co = static_cast<long>(w.dim(0));
  g.kd = static_cast<long>(w.dim(2));
  g.kh = static_cast<long>(w.dim(3));
  g.kw = static_cast<long>(w.dim(4));
  g.stride = stride;
  g.pad = pad;
  const auto out_extent = [&](long in, long k) { return (in + 2 * pad - k) / stride + 1; };
  detail::require(g.d + 2 * pad >= g.kd && g.h + 2 * pad >= g.kh && g.w + 2 * pad >= g.kw,
                  "conv3d kernel larger than padded input");
  g.od = out_extent(g.d, g.kd);
  g.oh = out_extent(g.h, g.kh);
  g.ow = out_extent(g.w, g.kw);
  return g;
}

// Visits every (output row, input row, weight) triple of the convolution.
// fn(out_row_offset, in_row_offset, weight_index, ox_lo, ox_hi, in_x_shift).
template <class Fn>
void for_each_conv_row(const ConvGeometry& g, Fn&& fn) {
  for (long n = 0; n < g.n; ++n)
    for (long co = 0; co < g.co; ++co)
      for (long ci = 0; ci < g.ci; ++ci)
        for (long kz = 0; kz < g.kd; ++kz) {
          const auto [z_lo, z_hi] = detail::valid_range(kz, g.stride, g.pad, g.d, g.od);
          for (long ky = 0; ky < g.kh; ++ky) {
            const auto [y_lo, y_hi] = detail::valid_range(ky, g.stride, g.pad, g.h, g.oh);
            for (long kx = 0; kx < g.kw; ++kx) {
              const auto [x_lo, x_hi] = detail::valid_range(kx, g.stride, g.pad, g.w, g.ow);
              if (x_lo >= x_hi) continue;
              const long widx = (((co * g.ci + ci) * g.kd + kz) * g.kh + ky) * g.kw + kx;
              for (long oz = z_lo; oz < z_hi; ++oz) {
                const long iz = oz * g.stride + kz - g.pad;
                for (long oy = y_lo; oy < y_hi; ++oy) {
                  const long iy = oy * g.stride + ky - g.pad;
                  const long out_row = (((n * g.co + co) * g.od + oz) * g.oh + oy) * g.ow;
                  const long in_row = (((n * g.ci + ci) * g.d + iz) * g.h + iy) * g.w;
                  fn(out_row, in_row, widx, x_lo, x_hi, kx - g.pad);
                }
              }
            }
          }
        }
}

template <class T>
Tensor<T> conv3d_values(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                        int pad) {
  const ConvGeometry g = conv_geometry(x, w, b, stride, pad);
  Tensor<T> y({static_cast<std::size_t>(g.n), static_cast<std::size_t>(g.co),
               static_cast<std::size_t>(g.od), static_cast<std::size_t>(g.oh),
               static_cast<std::size_t>(g.ow)});
  const long plane = g.od * g.oh * g.ow;
  for (long n = 0; n < g.n; ++n)
    for (long co = 0; co < g.co; ++co)
      std::fill_n(y.data.begin() + (n * g.co + co) * plane, plane, b[co]);
  T* yp = y.data.data();
  const T* xp = x.data.data();
  const T* wp = w.data.data();
  const long s = g.stride;
  for_each_conv_row(g, [&](long out_row, long in_row, long widx, long lo, long hi, long shift) {
    const T wv = wp[widx];
    T* yr = yp + out_row;
    const T* xr = xp + in_row + shift;
    if (s == 1) {
      for (long ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox];
    } else {
      for (long ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox * s];
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Differentiable ops.

template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  Tensor<T> y = conv3d_values(x->value, w->value, b->value, stride, pad);
  return detail::make<T>(
      std::move(y), {x, w, b},
      [stride, pad](Node<T>& self) {
        auto& x = *self.parents[0];
        auto& w = *self.parents[1];
        auto& b = *self.parents[2];
        const ConvGeometry g = conv_geometry(x.value, w.value, b.value, stride, pad);
        const T* gy = self.grad.data.data();
        const long plane = g.od * g.oh * g.ow;
        if (b.requires_grad) {
          auto& gb = b.ensure_grad();
          for (long n = 0; n < g.n; ++n)
            for (long co = 0; co < g.co; ++co) {
              T acc = 0;
              const T* p = gy + (n * g.co + co) * plane;
              for (long i = 0; i < plane; ++i) acc += p[i];
              gb[co] += acc;
            }
        }
        const long s = g.stride;
        if (w.requires_grad) {
          T* gw = w.ensure_grad().data.data();
          const T* xp = x.value.data.data();
          for_each_conv_row(g, [&](long out_row, long in_row, long widx, long lo, long hi,
                                   long shift) {
            const T* gr = gy + out_row;
            const T* xr = xp + in_row + shift;
            T acc = 0;
            if (s == 1) {
              for (long ox = lo; ox < hi; ++ox) acc += gr[ox] * xr[ox];
            } else {
              for (long ox = lo; ox < hi; ++ox) acc += gr[ox] * xr[ox * s];
            }
            gw[widx] += acc;
          });
        }
        if (x.requires_grad) {
          T* gx = x.ensure_grad().data.data();
          const T* wp = w.value.data.data();
          for_each_conv_row(g, [&](long out_row, long in_row, long widx, long lo, long hi,
                                   long shift) {
            const T wv = wp[widx];
            const T* gr = gy + out_row;
            T* xr = gx + in_row + shift;
            if (s == 1) {
              for (long ox = lo; ox < hi; ++ox) xr[ox] += wv * gr[ox];
            } else {
              for (long ox = lo; ox < hi; ++ox) xr[ox * s] += wv * gr[ox];
            }
          });
        }
      },
      "conv3d");
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return detail::make<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& x = *self.parents[0];
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (x.value[i] > T(0)) gx[i] += self.grad[i];
  }, "relu");
}

template <class T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = sigmoid_value(v);
  return detail::make<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T s = self.value[i];
      gx[i] += self.grad[i] * s * (T(1) - s);
    }
  }, "sigmoid");
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require(a->value.shape == b->value.shape, "add shape mismatch " +
                                                        to_string(a->value.shape) + " vs " +
                                                        to_string(b->value.shape));
  Tensor<T> y = a->value;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b->value[i];
  return detail::make<T>(std::move(y), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  }, "add");
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require(a->value.shape == b->value.shape, "sub shape mismatch");
  Tensor<T> y = a->value;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b->value[i];
  return detail::make<T>(std::move(y), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  }, "sub");
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require(a->value.shape == b->value.shape, "mul shape mismatch " +
                                                        to_string(a->value.shape) + " vs " +
                                                        to_string(b->value.shape));
  Tensor<T> y = a->value;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b->value[i];
  return detail::make<T>(std::move(y), {a, b}, [](Node<T>& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) {
      auto& g = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value[i];
    }
    if (b.requires_grad) {
      auto& g = b.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value[i];
    }
  }, "mul");
}

// scale * x + shift, elementwise.
template <class T>
Var<T> affine(const Var<T>& x, T scale, T shift = T(0)) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = scale * v + shift;
  return detail::make<T>(std::move(y), {x}, [scale](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * self.grad[i];
  }, "affine");
}

// Subgradient 0 at x == 0.
template <class T>
Var<T> abs(const Var<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = std::abs(v);
  return detail::make<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& x = *self.parents[0];
    auto& g = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = x.value[i];
      g[i] += v > T(0) ? self.grad[i] : v < T(0) ? -self.grad[i] : T(0);
    }
  }, "abs");
}

// max(x, floor); gradient passes only where x > floor.
template <class T>
Var<T> clamp_min(const Var<T>& x, T floor) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = v > floor ? v : floor;
  return detail::make<T>(std::move(y), {x}, [floor](Node<T>& self) {
    auto& x = *self.parents[0];
    auto& g = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.value[i] > floor) g[i] += self.grad[i];
  }, "clamp_min");
}

// min(max(x, lo), hi); gradient passes strictly inside.
template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = v < lo ? lo : v > hi ? hi : v;
  return detail::make<T>(std::move(y), {x}, [lo, hi](Node<T>& self) {
    auto& x = *self.parents[0];
    auto& g = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.value[i] > lo && x.value[i] < hi) g[i] += self.grad[i];
  }, "clamp");
}

template <class T>
Var<T> log(const Var<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = std::log(v);
  return detail::make<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& x = *self.parents[0];
    auto& g = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / x.value[i];
  }, "log");
}

template <class T>
Var<T> square(const Var<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.data) v = v * v;
  return detail::make<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& x = *self.parents[0];
    auto& g = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * x.value[i] * self.grad[i];
  }, "square");
}

// Sum of all elements, shape [1].
template <class T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (const T& v : x->value.data) acc += v;
  return detail::make<T>(Tensor<T>({1}, acc), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T gy = self.grad[0];
    for (auto& v : g.data) v += gy;
  }, "sum");
}

// Mean of all elements, shape [1].
template <class T>
Var<T> mean(const Var<T>& x) {
  const T n = static_cast<T>(x->value.size());
  return affine(sum(x), T(1) / n);
}

// [N, ...] -> [N]: per-item sum over every non-leading axis.
template <class T>
Var<T> sum_per_item(const Var<T>& x) {
  const std::size_t n = x->value.dim(0);
  const std::size_t per = x->value.size() / n;
  Tensor<T> y({n});
  for (std::size_t i = 0; i < n; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < per; ++j) acc += x->value[i * per + j];
    y[i] = acc;
  }
  return detail::make<T>(std::move(y), {x}, [per](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / per];
  }, "sum_per_item");
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  detail::require(numel(shape) == x->value.size(), "reshape size mismatch");
  Tensor<T> y(std::move(shape), x->value.data);
  return detail::make<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }, "reshape");
}

// Nearest-neighbour 2x upsampling of [N,C,D,H,W].
template <class T>
Var<T> upsample2(const Var<T>& x) {
  const auto& s = x->value.shape;
  detail::require(s.size() == 5, "upsample2 expects rank 5");
  const std::size_t nc = s[0] * s[1], d = s[2], h = s[3], w = s[4];
  Tensor<T> y({s[0], s[1], 2 * d, 2 * h, 2 * w});
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t z = 0; z < 2 * d; ++z)
      for (std::size_t yy = 0; yy < 2 * h; ++yy) {
        const T* src = &x->value[((p * d + z / 2) * h + yy / 2) * w];
        T* dst = &y[((p * 2 * d + z) * 2 * h + yy) * 2 * w];
        for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
      }
  return detail::make<T>(std::move(y), {x}, [nc, d, h, w](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t p = 0; p < nc; ++p)
      for (std::size_t z = 0; z < 2 * d; ++z)
        for (std::size_t yy = 0; yy < 2 * h; ++yy) {
          const T* src = &self.grad[((p * 2 * d + z) * 2 * h + yy) * 2 * w];
          T* dst = &g[((p * d + z / 2) * h + yy / 2) * w];
          for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[xx / 2] += src[xx];
        }
  }, "upsample2");
}

// Concatenate along the channel axis (axis 1) of two [N,C,...] tensors.
template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a->value.shape;
  const auto& sb = b->value.shape;
  detail::require(sa.size() >= 2 && sa.size() == sb.size() && sa[0] == sb[0],
                  "concat_channels rank/batch mismatch");
  for (std::size_t i = 2; i < sa.size(); ++i)
    detail::require(sa[i] == sb[i], "concat_channels spatial mismatch " + to_string(sa) + " vs " +
                                        to_string(sb));
  const std::size_t n = sa[0];
  const std::size_t la = a->value.size() / n, lb = b->value.size() / n;
  Shape shape = sa;
  shape[1] = sa[1] + sb[1];
  Tensor<T> y(shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a->value.data.begin() + i * la, la, y.data.begin() + i * (la + lb));
    std::copy_n(b->value.data.begin() + i * lb, lb, y.data.begin() + i * (la + lb) + la);
  }
  return detail::make<T>(std::move(y), {a, b}, [n, la, lb](Node<T>& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) {
      auto& g = a.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < la; ++j) g[i * la + j] += self.grad[i * (la + lb) + j];
    }
    if (b.requires_grad) {
      auto& g = b.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < lb; ++j) g[i * lb + j] += self.grad[i * (la + lb) + la + j];
    }
  }, "concat_channels");
}

// [N,C,...] -> [N,C] spatial average.
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& s = x->value.shape;
  detail::require(s.size() >= 3, "global_avg_pool expects [N,C,...]");
  const std::size_t nc = s[0] * s[1];
  const std::size_t per = x->value.size() / nc;
  Tensor<T> y({s[0], s[1]});
  for (std::size_t p = 0; p < nc; ++p) {
    T acc = 0;
    for (std::size_t j = 0; j < per; ++j) acc += x->value[p * per + j];
    y[p] = acc / static_cast<T>(per);
  }
  return detail::make<T>(std::move(y), {x}, [per](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T inv = T(1) / static_cast<T>(per);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / per] * inv;
  }, "global_avg_pool");
}

// x: [N,Ci], w: [Co,Ci], b: [Co] -> [N,Co].
template <class T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x->value.shape;
  const auto& ws = w->value.shape;
  detail::require(xs.size() == 2 && ws.size() == 2 && ws[1] == xs[1],
                  "dense shape mismatch " + to_string(xs) + " x " + to_string(ws));
  detail::require(b->value.rank() == 1 && b->value.dim(0) == ws[0], "dense bias must be [Co]");
  const std::size_t n = xs[0], ci = xs[1], co = ws[0];
  Tensor<T> y({n, co});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < co; ++o) {
      T acc = b->value[o];
      for (std::size_t k = 0; k < ci; ++k) acc += w->value[o * ci + k] * x->value[i * ci + k];
      y[i * co + o] = acc;
    }
  return detail::make<T>(std::move(y), {x, w, b}, [n, ci, co](Node<T>& self) {
    auto& x = *self.parents[0];
    auto& w = *self.parents[1];
    auto& b = *self.parents[2];
    if (b.requires_grad) {
      auto& g = b.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < co; ++o) g[o] += self.grad[i * co + o];
    }
    if (w.requires_grad) {
      auto& g = w.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t k = 0; k < ci; ++k) g[o * ci + k] += self.grad[i * co + o] * x.value[i * ci + k];
    }
    if (x.requires_grad) {
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t k = 0; k < ci; ++k) g[i * ci + k] += self.grad[i * co + o] * w.value[o * ci + k];
    }
  }, "dense");
}

// ---------------------------------------------------------------------------

// Writes d(loss)/d(node) into the grad slot of every node on which loss
// depends and which requires a gradient. Gradients accumulate.
template <class T>
void backward(const Var<T>& loss) {
  if (loss->value.size() != 1)
    throw UsageError("backward requires a scalar loss, got shape " + to_string(loss->value.shape));
  if (!loss->requires_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

}  // namespace rforge::ad
