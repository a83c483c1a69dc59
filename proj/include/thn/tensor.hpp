#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace thn {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& dims) {
  std::int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

inline std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Dense row-major tensor. grad is allocated iff requires_grad.
template <class Real>
struct Tensor {
  Shape dims;
  std::vector<Real> v;
  std::vector<Real> g;
  bool requires_grad = false;

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  bool scalar() const { return v.size() == 1; }

  void zero_grad() { std::fill(g.begin(), g.end(), Real(0)); }
};

template <class Real>
using TensorPtr = std::shared_ptr<Tensor<Real>>;

template <class Real>
TensorPtr<Real> make_tensor(Shape dims, bool requires_grad = false) {
  for (int d : dims) require(d > 0, "tensor extents must be positive, got " + shape_str(dims));
  auto t = std::make_shared<Tensor<Real>>();
  t->dims = std::move(dims);
  t->v.assign(static_cast<std::size_t>(numel(t->dims)), Real(0));
  t->requires_grad = requires_grad;
  if (requires_grad) t->g.assign(t->v.size(), Real(0));
  return t;
}

template <class Real>
TensorPtr<Real> make_tensor(Shape dims, std::vector<Real> values, bool requires_grad = false) {
  auto t = make_tensor<Real>(std::move(dims), requires_grad);
  require(static_cast<std::int64_t>(values.size()) == t->size(),
          "value count does not match shape " + shape_str(t->dims));
  t->v = std::move(values);
  return t;
}

template <class Real>
void assert_finite(const Tensor<Real>& t, const std::string& what) {
  for (Real x : t.v)
    if (!std::isfinite(x)) throw std::runtime_error("non-finite value in " + what);
}

// Records forward ops; backward() replays their adjoint rules in reverse.
// A tape and its tensors belong to one worker at a time.
template <class Real>
class Tape {
 public:
  using T = TensorPtr<Real>;

  void clear() {
    ops_.clear();
    outputs_.clear();
  }
  std::size_t num_ops() const { return ops_.size(); }

  // ---- elementwise ----

  T relu(T x) {
    T out = result({x}, x->dims);
    for (std::int64_t i = 0; i < x->size(); ++i) out->v[i] = x->v[i] > Real(0) ? x->v[i] : Real(0);
    record([x, out] {
      if (!x->requires_grad) return;
      for (std::int64_t i = 0; i < x->size(); ++i)
        if (x->v[i] > Real(0)) x->g[i] += out->g[i];
    });
    return out;
  }

  T sigmoid(T x) {
    T out = result({x}, x->dims);
    for (std::int64_t i = 0; i < x->size(); ++i) out->v[i] = Real(1) / (Real(1) + std::exp(-x->v[i]));
    record([x, out] {
      if (!x->requires_grad) return;
      for (std::int64_t i = 0; i < x->size(); ++i)
        x->g[i] += out->g[i] * out->v[i] * (Real(1) - out->v[i]);
    });
    return out;
  }

  T add(T a, T b) {
    require(a->dims == b->dims, "add: shape mismatch " + shape_str(a->dims) + " vs " + shape_str(b->dims));
    T out = result({a, b}, a->dims);
    for (std::int64_t i = 0; i < a->size(); ++i) out->v[i] = a->v[i] + b->v[i];
    record([a, b, out] {
      if (a->requires_grad)
        for (std::int64_t i = 0; i < a->size(); ++i) a->g[i] += out->g[i];
      if (b->requires_grad)
        for (std::int64_t i = 0; i < b->size(); ++i) b->g[i] += out->g[i];
    });
    return out;
  }

  T sub(T a, T b) {
    require(a->dims == b->dims, "sub: shape mismatch");
    T out = result({a, b}, a->dims);
    for (std::int64_t i = 0; i < a->size(); ++i) out->v[i] = a->v[i] - b->v[i];
    record([a, b, out] {
      if (a->requires_grad)
        for (std::int64_t i = 0; i < a->size(); ++i) a->g[i] += out->g[i];
      if (b->requires_grad)
        for (std::int64_t i = 0; i < b->size(); ++i) b->g[i] -= out->g[i];
    });
    return out;
  }

  T mul(T a, T b) {
    require(a->dims == b->dims, "mul: shape mismatch");
    T out = result({a, b}, a->dims);
    for (std::int64_t i = 0; i < a->size(); ++i) out->v[i] = a->v[i] * b->v[i];
    record([a, b, out] {
      if (a->requires_grad)
        for (std::int64_t i = 0; i < a->size(); ++i) a->g[i] += out->g[i] * b->v[i];
      if (b->requires_grad)
        for (std::int64_t i = 0; i < b->size(); ++i) b->g[i] += out->g[i] * a->v[i];
    });
    return out;
  }

  T mul_scalar(T x, Real s) {
    T out = result({x}, x->dims);
    for (std::int64_t i = 0; i < x->size(); ++i) out->v[i] = x->v[i] * s;
    record([x, out, s] {
      if (!x->requires_grad) return;
      for (std::int64_t i = 0; i < x->size(); ++i) x->g[i] += out->g[i] * s;
    });
    return out;
  }

  T sum(T x) {
    T out = result({x}, Shape{1});
    out->v[0] = std::accumulate(x->v.begin(), x->v.end(), Real(0));
    record([x, out] {
      if (!x->requires_grad) return;
      for (std::int64_t i = 0; i < x->size(); ++i) x->g[i] += out->g[0];
    });
    return out;
  }

  // ---- structural ----

  T concat_channels(const std::vector<T>& parts) {
    require(!parts.empty(), "concat_channels: empty input list");
    for (const T& p : parts) require(p->dims.size() == 3, "concat_channels: expects [C,H,W] tensors");
    const int h = parts[0]->dims[1], w = parts[0]->dims[2];
    int c_total = 0;
    for (const T& p : parts) {
      require(p->dims[1] == h && p->dims[2] == w, "concat_channels: spatial shape mismatch");
      c_total += p->dims[0];
    }
    std::vector<T> inputs(parts.begin(), parts.end());
    T out = result(inputs, Shape{c_total, h, w});
    std::int64_t off = 0;
    for (const T& p : parts) {
      std::copy(p->v.begin(), p->v.end(), out->v.begin() + off);
      off += p->size();
    }
    record([inputs, out] {
      std::int64_t off = 0;
      for (const T& p : inputs) {
        if (p->requires_grad)
          for (std::int64_t i = 0; i < p->size(); ++i) p->g[i] += out->g[off + i];
        off += p->size();
      }
    });
    return out;
  }

  T batch_stack(const std::vector<T>& items) {
    require(!items.empty(), "batch_stack: empty input list");
    for (const T& t : items)
      require(t->dims == items[0]->dims, "batch_stack: element shape mismatch");
    Shape out_dims;
    out_dims.push_back(static_cast<int>(items.size()));
    out_dims.insert(out_dims.end(), items[0]->dims.begin(), items[0]->dims.end());
    std::vector<T> inputs(items.begin(), items.end());
    T out = result(inputs, out_dims);
    const std::int64_t stride = items[0]->size();
    for (std::size_t n = 0; n < items.size(); ++n)
      std::copy(items[n]->v.begin(), items[n]->v.end(), out->v.begin() + n * stride);
    record([inputs, out, stride] {
      for (std::size_t n = 0; n < inputs.size(); ++n) {
        if (!inputs[n]->requires_grad) continue;
        for (std::int64_t i = 0; i < stride; ++i) inputs[n]->g[i] += out->g[n * stride + i];
      }
    });
    return out;
  }

  std::vector<T> batch_split(T x) {
    require(x->dims.size() >= 2, "batch_split: needs a leading batch dim");
    const int n = x->dims[0];
    Shape inner(x->dims.begin() + 1, x->dims.end());
    const std::int64_t stride = numel(inner);
    std::vector<T> outs;
    for (int i = 0; i < n; ++i) {
      T out = result({x}, inner);
      std::copy(x->v.begin() + i * stride, x->v.begin() + (i + 1) * stride, out->v.begin());
      record([x, out, i, stride] {
        if (!x->requires_grad) return;
        for (std::int64_t k = 0; k < stride; ++k) x->g[i * stride + k] += out->g[k];
      });
      outs.push_back(out);
    }
    return outs;
  }

  T reshape(T x, Shape dims) {
    require(numel(dims) == x->size(), "reshape: element count mismatch");
    T out = result({x}, dims);
    out->v = x->v;
    record([x, out] {
      if (!x->requires_grad) return;
      for (std::int64_t i = 0; i < x->size(); ++i) x->g[i] += out->g[i];
    });
    return out;
  }

  // contiguous slice of a flat [N] tensor
  T slice(T x, int start, int len) {
    require(x->dims.size() == 1, "slice: input must be rank 1");
    require(start >= 0 && len > 0 && start + len <= x->dims[0], "slice: range out of bounds");
    T out = result({x}, Shape{len});
    std::copy(x->v.begin() + start, x->v.begin() + start + len, out->v.begin());
    record([x, out, start, len] {
      if (!x->requires_grad) return;
      for (int i = 0; i < len; ++i) x->g[start + i] += out->g[i];
    });
    return out;
  }

  // ---- spatial ----

  // Output index range whose source index x*stride + offset stays in [0, dim).
  static int valid_lo(int offset, int stride) {
    return offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  }
  static int valid_hi(int offset, int stride, int dim, int out) {
    if (dim - 1 - offset < 0) return 0;
    return std::min(out, (dim - 1 - offset) / stride + 1);
  }

  // input [C_in,H,W], kernel [C_out,C_in,k,k], bias [C_out]
  T conv2d(T input, T kernel, T bias, int stride = 1, int padding = 0) {
    require(input->dims.size() == 3, "conv2d: input must be [C,H,W]");
    require(kernel->dims.size() == 4 && kernel->dims[2] == kernel->dims[3],
            "conv2d: kernel must be [C_out,C_in,k,k]");
    require(bias->dims == Shape{kernel->dims[0]}, "conv2d: bias must be [C_out]");
    require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
    const int c_in = input->dims[0], h = input->dims[1], w = input->dims[2];
    const int c_out = kernel->dims[0], k = kernel->dims[2];
    require(kernel->dims[1] == c_in, "conv2d: channel mismatch, input C=" + std::to_string(c_in) +
                                         " kernel C_in=" + std::to_string(kernel->dims[1]));
    require(k <= h + 2 * padding && k <= w + 2 * padding, "conv2d: kernel larger than padded input");
    const int ho = (h + 2 * padding - k) / stride + 1;
    const int wo = (w + 2 * padding - k) / stride + 1;
    require(ho >= 1 && wo >= 1, "conv2d: degenerate output size");

    T out = result({input, kernel, bias}, Shape{c_out, ho, wo});
    const Real* in = input->v.data();
    const Real* ker = kernel->v.data();
    Real* o = out->v.data();
    for (int co = 0; co < c_out; ++co) {
      Real* oc = o + static_cast<std::int64_t>(co) * ho * wo;
      const Real bv = bias->v[co];
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(ho) * wo; ++i) oc[i] = bv;
      for (int ci = 0; ci < c_in; ++ci) {
        const Real* ic = in + static_cast<std::int64_t>(ci) * h * w;
        const Real* kc = ker + ((static_cast<std::int64_t>(co) * c_in + ci) * k) * k;
        for (int ky = 0; ky < k; ++ky) {
          const int y_lo = valid_lo(ky - padding, stride);
          const int y_hi = valid_hi(ky - padding, stride, h, ho);
          for (int kx = 0; kx < k; ++kx) {
            const Real kv = kc[ky * k + kx];
            if (kv == Real(0)) continue;
            const int x_lo = valid_lo(kx - padding, stride);
            const int x_hi = valid_hi(kx - padding, stride, w, wo);
            for (int y = y_lo; y < y_hi; ++y) {
              const Real* irow = ic + static_cast<std::int64_t>(y * stride + ky - padding) * w + (kx - padding);
              Real* orow = oc + static_cast<std::int64_t>(y) * wo;
              if (stride == 1) {
                for (int x = x_lo; x < x_hi; ++x) orow[x] += kv * irow[x];
              } else {
                for (int x = x_lo; x < x_hi; ++x) orow[x] += kv * irow[static_cast<std::int64_t>(x) * stride];
              }
            }
          }
        }
      }
    }
    record([input, kernel, bias, out, stride, padding] {
      const int c_in = input->dims[0], h = input->dims[1], w = input->dims[2];
      const int c_out = kernel->dims[0], k = kernel->dims[2];
      const int ho = out->dims[1], wo = out->dims[2];
      const Real* go = out->g.data();
      if (bias->requires_grad) {
        for (int co = 0; co < c_out; ++co) {
          const Real* gc = go + static_cast<std::int64_t>(co) * ho * wo;
          Real acc = 0;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(ho) * wo; ++i) acc += gc[i];
          bias->g[co] += acc;
        }
      }
      for (int co = 0; co < c_out; ++co) {
        const Real* gc = go + static_cast<std::int64_t>(co) * ho * wo;
        for (int ci = 0; ci < c_in; ++ci) {
          const Real* ic = input->v.data() + static_cast<std::int64_t>(ci) * h * w;
          Real* gic = input->requires_grad ? input->g.data() + static_cast<std::int64_t>(ci) * h * w : nullptr;
          const std::int64_t kbase = ((static_cast<std::int64_t>(co) * c_in + ci) * k) * k;
          for (int ky = 0; ky < k; ++ky) {
            const int y_lo = valid_lo(ky - padding, stride);
            const int y_hi = valid_hi(ky - padding, stride, h, ho);
            for (int kx = 0; kx < k; ++kx) {
              const Real kv = kernel->v[kbase + ky * k + kx];
              Real kacc = 0;
              const int x_lo = valid_lo(kx - padding, stride);
              const int x_hi = valid_hi(kx - padding, stride, w, wo);
              for (int y = y_lo; y < y_hi; ++y) {
                const std::int64_t srow = static_cast<std::int64_t>(y * stride + ky - padding) * w + (kx - padding);
                const Real* irow = ic + srow;
                Real* girow = gic ? gic + srow : nullptr;
                const Real* grow = gc + static_cast<std::int64_t>(y) * wo;
                if (stride == 1) {
                  for (int x = x_lo; x < x_hi; ++x) kacc += grow[x] * irow[x];
                  if (girow)
                    for (int x = x_lo; x < x_hi; ++x) girow[x] += grow[x] * kv;
                } else {
                  for (int x = x_lo; x < x_hi; ++x) {
                    const std::int64_t sx = static_cast<std::int64_t>(x) * stride;
                    kacc += grow[x] * irow[sx];
                    if (girow) girow[sx] += grow[x] * kv;
                  }
                }
              }
              if (kernel->requires_grad) kernel->g[kbase + ky * k + kx] += kacc;
            }
          }
        }
      }
    });
    return out;
  }

  // 2x2 max pooling, stride 2; even spatial extents required.
  T maxpool2(T x) {
    require(x->dims.size() == 3, "maxpool2: input must be [C,H,W]");
    const int c = x->dims[0], h = x->dims[1], w = x->dims[2];
    require(h % 2 == 0 && w % 2 == 0, "maxpool2: extents must be even, got " + shape_str(x->dims));
    T out = result({x}, Shape{c, h / 2, w / 2});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out->v.size());
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h / 2; ++y)
        for (int xx = 0; xx < w / 2; ++xx) {
          std::int64_t best = -1;
          Real bv = -std::numeric_limits<Real>::infinity();
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::int64_t idx = (static_cast<std::int64_t>(ci) * h + 2 * y + dy) * w + 2 * xx + dx;
              if (x->v[idx] > bv) { bv = x->v[idx]; best = idx; }
            }
          const std::int64_t oi = (static_cast<std::int64_t>(ci) * (h / 2) + y) * (w / 2) + xx;
          out->v[oi] = bv;
          (*argmax)[oi] = best;
        }
    record([x, out, argmax] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < out->v.size(); ++i) x->g[(*argmax)[i]] += out->g[i];
    });
    return out;
  }

  T upsample_nearest2(T x) {
    require(x->dims.size() == 3, "upsample_nearest2: input must be [C,H,W]");
    const int c = x->dims[0], h = x->dims[1], w = x->dims[2];
    T out = result({x}, Shape{c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          out->v[(static_cast<std::int64_t>(ci) * 2 * h + y) * 2 * w + xx] =
              x->v[(static_cast<std::int64_t>(ci) * h + y / 2) * w + xx / 2];
    record([x, out] {
      if (!x->requires_grad) return;
      const int c = x->dims[0], h = x->dims[1], w = x->dims[2];
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < 2 * h; ++y)
          for (int xx = 0; xx < 2 * w; ++xx)
            x->g[(static_cast<std::int64_t>(ci) * h + y / 2) * w + xx / 2] +=
                out->g[(static_cast<std::int64_t>(ci) * 2 * h + y) * 2 * w + xx];
    });
    return out;
  }

  // x [in], weight [out,in], bias [out] -> [out]
  T linear(T x, T weight, T bias) {
    require(x->dims.size() == 1 && weight->dims.size() == 2, "linear: x must be [in], weight [out,in]");
    const int n_in = x->dims[0], n_out = weight->dims[0];
    require(weight->dims[1] == n_in, "linear: weight/input size mismatch");
    require(bias->dims == Shape{n_out}, "linear: bias must be [out]");
    T out = result({x, weight, bias}, Shape{n_out});
    for (int o = 0; o < n_out; ++o) {
      Real acc = bias->v[o];
      const Real* wr = weight->v.data() + static_cast<std::int64_t>(o) * n_in;
      for (int i = 0; i < n_in; ++i) acc += wr[i] * x->v[i];
      out->v[o] = acc;
    }
    record([x, weight, bias, out] {
      const int n_in = x->dims[0], n_out = weight->dims[0];
      for (int o = 0; o < n_out; ++o) {
        const Real go = out->g[o];
        if (bias->requires_grad) bias->g[o] += go;
        const Real* wr = weight->v.data() + static_cast<std::int64_t>(o) * n_in;
        Real* gwr = weight->requires_grad ? weight->g.data() + static_cast<std::int64_t>(o) * n_in : nullptr;
        for (int i = 0; i < n_in; ++i) {
          if (gwr) gwr[i] += go * x->v[i];
          if (x->requires_grad) x->g[i] += go * wr[i];
        }
      }
    });
    return out;
  }

  // ---- attention / pose ops ----

  // Per-map softmax over the spatial domain, stabilized by max subtraction.
  T spatial_softmax(T maps) {
    require(maps->dims.size() == 3, "spatial_softmax: input must be [J,h,w]");
    assert_finite(*maps, "spatial_softmax input");
    const int j = maps->dims[0];
    const std::int64_t hw = static_cast<std::int64_t>(maps->dims[1]) * maps->dims[2];
    T out = result({maps}, maps->dims);
    for (int jj = 0; jj < j; ++jj) {
      const Real* m = maps->v.data() + jj * hw;
      Real* o = out->v.data() + jj * hw;
      const Real mx = *std::max_element(m, m + hw);
      Real z = 0;
      for (std::int64_t i = 0; i < hw; ++i) { o[i] = std::exp(m[i] - mx); z += o[i]; }
      for (std::int64_t i = 0; i < hw; ++i) o[i] /= z;
    }
    record([maps, out, j, hw] {
      if (!maps->requires_grad) return;
      for (int jj = 0; jj < j; ++jj) {
        const Real* o = out->v.data() + jj * hw;
        const Real* go = out->g.data() + jj * hw;
        Real* gm = maps->g.data() + jj * hw;
        Real dot = 0;
        for (std::int64_t i = 0; i < hw; ++i) dot += go[i] * o[i];
        for (std::int64_t i = 0; i < hw; ++i) gm[i] += o[i] * (go[i] - dot);
      }
    });
    return out;
  }

  // Expected (u,v) under each normalized map; 0-based pixel indices,
  // u along width, v along height. Output [J,2].
  T integrate_uv(T heatmaps) {
    require(heatmaps->dims.size() == 3, "integrate_uv: input must be [J,h,w]");
    const int j = heatmaps->dims[0], h = heatmaps->dims[1], w = heatmaps->dims[2];
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int jj = 0; jj < j; ++jj) {
      Real s = 0;
      for (std::int64_t i = 0; i < hw; ++i) s += heatmaps->v[jj * hw + i];
      require(std::abs(s - Real(1)) <= Real(1e-4),
              "integrate_uv: map " + std::to_string(jj) + " is not normalized (sum=" + std::to_string(double(s)) + ")");
    }
    T out = result({heatmaps}, Shape{j, 2});
    for (int jj = 0; jj < j; ++jj) {
      Real su = 0, sv = 0;
      const Real* m = heatmaps->v.data() + jj * hw;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          su += Real(x) * m[y * w + x];
          sv += Real(y) * m[y * w + x];
        }
      out->v[2 * jj] = su;
      out->v[2 * jj + 1] = sv;
    }
    record([heatmaps, out, j, h, w, hw] {
      if (!heatmaps->requires_grad) return;
      for (int jj = 0; jj < j; ++jj) {
        Real* gm = heatmaps->g.data() + jj * hw;
        const Real gu = out->g[2 * jj], gv = out->g[2 * jj + 1];
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) gm[y * w + x] += gu * Real(x) + gv * Real(y);
      }
    });
    return out;
  }

  // beta[j]*a_j + (1-beta[j])*b_j per joint map.
  T convex_combine(T a, T b, T beta) {
    require(a->dims == b->dims && a->dims.size() == 3, "convex_combine: maps must be matching [J,h,w]");
    require(beta->dims == Shape{a->dims[0]}, "convex_combine: beta must be [J]");
    const int j = a->dims[0];
    const std::int64_t hw = static_cast<std::int64_t>(a->dims[1]) * a->dims[2];
    T out = result({a, b, beta}, a->dims);
    for (int jj = 0; jj < j; ++jj) {
      const Real be = beta->v[jj];
      for (std::int64_t i = 0; i < hw; ++i)
        out->v[jj * hw + i] = be * a->v[jj * hw + i] + (Real(1) - be) * b->v[jj * hw + i];
    }
    record([a, b, beta, out, j, hw] {
      for (int jj = 0; jj < j; ++jj) {
        const Real be = beta->v[jj];
        Real dbeta = 0;
        for (std::int64_t i = 0; i < hw; ++i) {
          const Real go = out->g[jj * hw + i];
          if (a->requires_grad) a->g[jj * hw + i] += go * be;
          if (b->requires_grad) b->g[jj * hw + i] += go * (Real(1) - be);
          dbeta += go * (a->v[jj * hw + i] - b->v[jj * hw + i]);
        }
        if (beta->requires_grad) beta->g[jj] += dbeta;
      }
    });
    return out;
  }

  // F_j = sum_{x,y} att_j(x,y) * dmap(:,x,y); att [J,h,w], dmap [D,h,w] -> [J,D]
  T pool_features(T att, T dmap) {
    require(att->dims.size() == 3 && dmap->dims.size() == 3, "pool_features: inputs must be [J,h,w],[D,h,w]");
    require(att->dims[1] == dmap->dims[1] && att->dims[2] == dmap->dims[2],
            "pool_features: spatial shape mismatch");
    const int j = att->dims[0], d = dmap->dims[0];
    const std::int64_t hw = static_cast<std::int64_t>(att->dims[1]) * att->dims[2];
    T out = result({att, dmap}, Shape{j, d});
    for (int jj = 0; jj < j; ++jj)
      for (int dd = 0; dd < d; ++dd) {
        Real acc = 0;
        const Real* am = att->v.data() + jj * hw;
        const Real* dm = dmap->v.data() + dd * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += am[i] * dm[i];
        out->v[static_cast<std::int64_t>(jj) * d + dd] = acc;
      }
    record([att, dmap, out, j, d, hw] {
      for (int jj = 0; jj < j; ++jj)
        for (int dd = 0; dd < d; ++dd) {
          const Real go = out->g[static_cast<std::int64_t>(jj) * d + dd];
          if (go == Real(0)) continue;
          const Real* am = att->v.data() + jj * hw;
          const Real* dm = dmap->v.data() + dd * hw;
          if (att->requires_grad) {
            Real* ga = att->g.data() + jj * hw;
            for (std::int64_t i = 0; i < hw; ++i) ga[i] += go * dm[i];
          }
          if (dmap->requires_grad) {
            Real* gd = dmap->g.data() + dd * hw;
            for (std::int64_t i = 0; i < hw; ++i) gd[i] += go * am[i];
          }
        }
    });
    return out;
  }

  // Z_j = <F_j, W> + b with one (W, b) shared across joints.
  // features [J,D], weight [D], bias [1] -> [J]
  T joint_linear(T features, T weight, T bias) {
    require(features->dims.size() == 2, "joint_linear: features must be [J,D]");
    const int j = features->dims[0], d = features->dims[1];
    require(weight->dims == Shape{d}, "joint_linear: weight must be [D]");
    require(bias->dims == Shape{1}, "joint_linear: bias must be [1]");
    T out = result({features, weight, bias}, Shape{j});
    for (int jj = 0; jj < j; ++jj) {
      Real acc = bias->v[0];
      for (int dd = 0; dd < d; ++dd) acc += features->v[static_cast<std::int64_t>(jj) * d + dd] * weight->v[dd];
      out->v[jj] = acc;
    }
    record([features, weight, bias, out, j, d] {
      for (int jj = 0; jj < j; ++jj) {
        const Real go = out->g[jj];
        if (bias->requires_grad) bias->g[0] += go;
        for (int dd = 0; dd < d; ++dd) {
          if (weight->requires_grad) weight->g[dd] += go * features->v[static_cast<std::int64_t>(jj) * d + dd];
          if (features->requires_grad) features->g[static_cast<std::int64_t>(jj) * d + dd] += go * weight->v[dd];
        }
      }
    });
    return out;
  }

  // ---- losses ----

  // (1/2J) * sum_j |du_j| + |dv_j|; pred, gt [J,2]
  T loss_uv(T pred, T gt) {
    require(pred->dims == gt->dims && pred->dims.size() == 2 && pred->dims[1] == 2,
            "loss_uv: shapes must match [J,2]");
    const int j = pred->dims[0];
    T out = result({pred, gt}, Shape{1});
    Real acc = 0;
    for (std::int64_t i = 0; i < pred->size(); ++i) acc += std::abs(pred->v[i] - gt->v[i]);
    out->v[0] = acc / Real(2 * j);
    record([pred, gt, out, j] {
      const Real s = out->g[0] / Real(2 * j);
      for (std::int64_t i = 0; i < pred->size(); ++i) {
        const Real diff = pred->v[i] - gt->v[i];
        const Real sg = diff > Real(0) ? Real(1) : (diff < Real(0) ? Real(-1) : Real(0));
        if (pred->requires_grad) pred->g[i] += s * sg;
        if (gt->requires_grad) gt->g[i] -= s * sg;
      }
    });
    return out;
  }

  // (1/J) * sum_j |dz_j|; pred, gt [J]
  T loss_depth(T pred, T gt) {
    require(pred->dims == gt->dims && pred->dims.size() == 1, "loss_depth: shapes must match [J]");
    const int j = pred->dims[0];
    T out = result({pred, gt}, Shape{1});
    Real acc = 0;
    for (int i = 0; i < j; ++i) acc += std::abs(pred->v[i] - gt->v[i]);
    out->v[0] = acc / Real(j);
    record([pred, gt, out, j] {
      const Real s = out->g[0] / Real(j);
      for (int i = 0; i < j; ++i) {
        const Real diff = pred->v[i] - gt->v[i];
        const Real sg = diff > Real(0) ? Real(1) : (diff < Real(0) ? Real(-1) : Real(0));
        if (pred->requires_grad) pred->g[i] += s * sg;
        if (gt->requires_grad) gt->g[i] -= s * sg;
      }
    });
    return out;
  }

  T total_loss(T l_uv, T l_d, Real lambda) {
    return add(l_uv, mul_scalar(l_d, lambda));
  }

  // ---- backward ----

  // Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse order.
  // Calling twice without zeroing grads accumulates.
  void backward(T loss) {
    require(loss->scalar(), "backward: loss must be a scalar tensor, got " + shape_str(loss->dims));
    require(loss->requires_grad, "backward: loss does not require grad");
    // intermediate adjoints are per-pass; leaf grads accumulate across passes
    for (auto& out : outputs_) out->zero_grad();
    loss->g[0] = Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
  std::vector<T> outputs_;

  T result(const std::vector<T>& inputs, Shape dims) {
    bool rg = false;
    for (const T& t : inputs) rg = rg || t->requires_grad;
    T out = make_tensor<Real>(std::move(dims), rg);
    // backward rules read out->g unconditionally
    if (!rg) out->g.assign(out->v.size(), Real(0));
    outputs_.push_back(out);
    return out;
  }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
};

// Max over coordinates of |analytic - central difference| / max(1, |analytic|, |central|).
// f builds a scalar loss from (tape, point) and is re-invoked per probe.
template <class Real, class F>
Real grad_check(F&& f, TensorPtr<Real> point, Real step) {
  auto eval = [&](const std::vector<Real>& values) {
    auto p = make_tensor<Real>(point->dims, values, false);
    Tape<Real> tape;
    TensorPtr<Real> loss = f(tape, p);
    require(loss->scalar(), "grad_check: f must be scalar-valued");
    return loss->v[0];
  };
  auto p = make_tensor<Real>(point->dims, point->v, true);
  Tape<Real> tape;
  TensorPtr<Real> loss = f(tape, p);
  require(loss->scalar(), "grad_check: f must be scalar-valued");
  tape.backward(loss);

  Real worst = 0;
  std::vector<Real> probe = point->v;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const Real saved = probe[i];
    probe[i] = saved + step;
    const Real fp = eval(probe);
    probe[i] = saved - step;
    const Real fm = eval(probe);
    probe[i] = saved;
    const Real central = (fp - fm) / (2 * step);
    const Real analytic = p->g[i];
    const Real denom = std::max(Real(1), std::max(std::abs(analytic), std::abs(central)));
    worst = std::max(worst, std::abs(analytic - central) / denom);
  }
  return worst;
}

}  // namespace thn
