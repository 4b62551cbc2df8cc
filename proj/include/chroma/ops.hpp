#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "chroma/tensor.hpp"

namespace chroma {

enum class Padding { kSame, kValid };

namespace detail {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

template <typename T>
void check_rank(const Tensor<T>& t, std::int64_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

// Shared geometry for conv2d forward and both backward passes. Iterates every
// in-bounds (output position, kernel tap) pair in a fixed order.
struct ConvGeom {
  std::int64_t batch, cin, h, w;
  std::int64_t cout, k;
  std::int64_t stride, pad;
  std::int64_t ho, wo;
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel,
                       const Tensor<T>& bias, std::int64_t stride,
                       Padding padding) {
  check_rank(input, 4, "conv2d input");
  check_rank(kernel, 4, "conv2d kernel");
  check_rank(bias, 1, "conv2d bias");
  ConvGeom g;
  g.batch = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.k = kernel.dim(2);
  if (kernel.dim(3) != g.k) {
    throw ShapeError("conv2d kernel must be square, got " +
                     shape_str(kernel.shape()));
  }
  if (g.k % 2 == 0) {
    throw PreconditionError("conv2d kernel size must be odd, got " +
                            std::to_string(g.k));
  }
  if (kernel.dim(1) != g.cin) {
    throw ShapeError("conv2d channel axis mismatch: input has " +
                     std::to_string(g.cin) + " channels, kernel expects " +
                     std::to_string(kernel.dim(1)));
  }
  if (bias.dim(0) != g.cout) {
    throw ShapeError("conv2d bias axis mismatch: kernel emits " +
                     std::to_string(g.cout) + " channels, bias has " +
                     std::to_string(bias.dim(0)));
  }
  if (stride < 1) {
    throw PreconditionError("conv2d stride must be >= 1");
  }
  g.stride = stride;
  g.pad = padding == Padding::kSame ? (g.k - 1) / 2 : 0;
  g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw ShapeError("conv2d spatial axis too small: input " +
                     std::to_string(g.h) + "x" + std::to_string(g.w) +
                     " cannot fit kernel " + std::to_string(g.k));
  }
  return g;
}

}  // namespace detail

// 2-D cross-correlation with bias. Output spatial size follows the usual
// padding arithmetic; same padding with stride 1 preserves H and W.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, std::int64_t stride = 1,
                 Padding padding = Padding::kSame) {
  using detail::ceil_div;
  using detail::floor_div;
  const detail::ConvGeom g =
      detail::conv_geometry(input, kernel, bias, stride, padding);

  Tensor<T> out({g.batch, g.cout, g.ho, g.wo});
  {
    const T* in = input.data();
    const T* kw = kernel.data();
    const T* kb = bias.data();
    T* o = out.data();
    for (std::int64_t b = 0; b < g.batch; ++b) {
      for (std::int64_t co = 0; co < g.cout; ++co) {
        T* oplane = o + ((b * g.cout + co) * g.ho) * g.wo;
        std::fill(oplane, oplane + g.ho * g.wo, kb[co]);
        for (std::int64_t ci = 0; ci < g.cin; ++ci) {
          const T* iplane = in + ((b * g.cin + ci) * g.h) * g.w;
          const T* ktap = kw + ((co * g.cin + ci) * g.k) * g.k;
          for (std::int64_t ky = 0; ky < g.k; ++ky) {
            for (std::int64_t kx = 0; kx < g.k; ++kx) {
              const T wv = ktap[ky * g.k + kx];
              if (wv == T{0}) continue;
              const std::int64_t ylo =
                  std::max<std::int64_t>(0, ceil_div(g.pad - ky, g.stride));
              const std::int64_t yhi = std::min<std::int64_t>(
                  g.ho - 1, floor_div(g.h - 1 - ky + g.pad, g.stride));
              const std::int64_t xlo =
                  std::max<std::int64_t>(0, ceil_div(g.pad - kx, g.stride));
              const std::int64_t xhi = std::min<std::int64_t>(
                  g.wo - 1, floor_div(g.w - 1 - kx + g.pad, g.stride));
              for (std::int64_t y = ylo; y <= yhi; ++y) {
                const T* irow = iplane + (y * g.stride + ky - g.pad) * g.w;
                T* orow = oplane + y * g.wo;
                if (g.stride == 1) {
                  const T* ir = irow + kx - g.pad;
                  for (std::int64_t x = xlo; x <= xhi; ++x)
                    orow[x] += wv * ir[x];
                } else {
                  for (std::int64_t x = xlo; x <= xhi; ++x)
                    orow[x] += wv * irow[x * g.stride + kx - g.pad];
                }
              }
            }
          }
        }
      }
    }
  }

  if (detail::recording<T>({&input, &kernel, &bias})) {
    out.enable_grad();
    auto gin = input.grad_buffer();
    auto gk = kernel.grad_buffer();
    auto gb = bias.grad_buffer();
    auto gout = out.grad_buffer();
    auto in_data = input.data_buffer();
    auto k_data = kernel.data_buffer();
    Tape<T>::current()->record([g, gin, gk, gb, gout, in_data, k_data] {
      const T* go = gout->data();
      for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t co = 0; co < g.cout; ++co) {
          const T* goplane = go + ((b * g.cout + co) * g.ho) * g.wo;
          if (gb) {
            T acc{0};
            for (std::int64_t i = 0; i < g.ho * g.wo; ++i) acc += goplane[i];
            (*gb)[static_cast<std::size_t>(co)] += acc;
          }
          if (!gin && !gk) continue;
          for (std::int64_t ci = 0; ci < g.cin; ++ci) {
            const std::int64_t iplane_off = ((b * g.cin + ci) * g.h) * g.w;
            const T* iplane = in_data->data() + iplane_off;
            const std::int64_t ktap_off = ((co * g.cin + ci) * g.k) * g.k;
            for (std::int64_t ky = 0; ky < g.k; ++ky) {
              for (std::int64_t kx = 0; kx < g.k; ++kx) {
                const std::int64_t ylo = std::max<std::int64_t>(
                    0, detail::ceil_div(g.pad - ky, g.stride));
                const std::int64_t yhi = std::min<std::int64_t>(
                    g.ho - 1,
                    detail::floor_div(g.h - 1 - ky + g.pad, g.stride));
                const std::int64_t xlo = std::max<std::int64_t>(
                    0, detail::ceil_div(g.pad - kx, g.stride));
                const std::int64_t xhi = std::min<std::int64_t>(
                    g.wo - 1,
                    detail::floor_div(g.w - 1 - kx + g.pad, g.stride));
                const T wv = (*k_data)[static_cast<std::size_t>(
                    ktap_off + ky * g.k + kx)];
                T wacc{0};
                for (std::int64_t y = ylo; y <= yhi; ++y) {
                  const std::int64_t yin = y * g.stride + ky - g.pad;
                  const T* irow = iplane + yin * g.w;
                  const T* gorow = goplane + y * g.wo;
                  T* girow =
                      gin ? gin->data() + iplane_off + yin * g.w : nullptr;
                  if (g.stride == 1) {
                    const std::int64_t off = kx - g.pad;
                    if (gk) {
                      for (std::int64_t x = xlo; x <= xhi; ++x)
                        wacc += gorow[x] * irow[x + off];
                    }
                    if (girow) {
                      for (std::int64_t x = xlo; x <= xhi; ++x)
                        girow[x + off] += wv * gorow[x];
                    }
                  } else {
                    for (std::int64_t x = xlo; x <= xhi; ++x) {
                      const std::int64_t xin = x * g.stride + kx - g.pad;
                      if (gk) wacc += gorow[x] * irow[xin];
                      if (girow) girow[xin] += wv * gorow[x];
                    }
                  }
                }
                if (gk)
                  (*gk)[static_cast<std::size_t>(ktap_off + ky * g.k + kx)] +=
                      wacc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// 2x2 max pooling over disjoint windows. Gradient routes to the argmax; ties
// resolve to the first element in row-major window order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input) {
  detail::check_rank(input, 4, "maxpool2 input");
  const std::int64_t batch = input.dim(0), c = input.dim(1);
  const std::int64_t h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw PreconditionError("maxpool2 requires even spatial axes, got " +
                            std::to_string(h) + "x" + std::to_string(w));
  }
  const std::int64_t ho = h / 2, wo = w / 2;
  Tensor<T> out({batch, c, ho, wo});
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(out.size()));
  {
    const T* in = input.data();
    T* o = out.data();
    std::int64_t oi = 0;
    for (std::int64_t p = 0; p < batch * c; ++p) {
      const T* iplane = in + p * h * w;
      for (std::int64_t y = 0; y < ho; ++y) {
        for (std::int64_t x = 0; x < wo; ++x, ++oi) {
          const std::int64_t base = (2 * y) * w + 2 * x;
          std::int64_t best = base;
          T bv = iplane[base];
          const std::int64_t cand[3] = {base + 1, base + w, base + w + 1};
          for (std::int64_t idx : cand) {
            if (iplane[idx] > bv) {
              bv = iplane[idx];
              best = idx;
            }
          }
          o[oi] = bv;
          argmax[static_cast<std::size_t>(oi)] =
              static_cast<std::int32_t>(p * h * w + best);
        }
      }
    }
  }

  if (detail::recording<T>({&input})) {
    out.enable_grad();
    auto gin = input.grad_buffer();
    auto gout = out.grad_buffer();
    Tape<T>::current()->record([gin, gout, argmax = std::move(argmax)] {
      for (std::size_t i = 0; i < gout->size(); ++i) {
        (*gin)[static_cast<std::size_t>(argmax[i])] += (*gout)[i];
      }
    });
  }
  return out;
}

// Nearest-neighbor 2x upsampling; the adjoint sums each 2x2 block.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& input) {
  detail::check_rank(input, 4, "upsample2 input");
  const std::int64_t batch = input.dim(0), c = input.dim(1);
  const std::int64_t h = input.dim(2), w = input.dim(3);
  const std::int64_t ho = 2 * h, wo = 2 * w;
  Tensor<T> out({batch, c, ho, wo});
  {
    const T* in = input.data();
    T* o = out.data();
    for (std::int64_t p = 0; p < batch * c; ++p) {
      const T* iplane = in + p * h * w;
      T* oplane = o + p * ho * wo;
      for (std::int64_t y = 0; y < ho; ++y) {
        const T* irow = iplane + (y / 2) * w;
        T* orow = oplane + y * wo;
        for (std::int64_t x = 0; x < wo; ++x) orow[x] = irow[x / 2];
      }
    }
  }

  if (detail::recording<T>({&input})) {
    out.enable_grad();
    auto gin = input.grad_buffer();
    auto gout = out.grad_buffer();
    const std::int64_t planes = batch * c;
    Tape<T>::current()->record([gin, gout, planes, h, w, ho, wo] {
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* goplane = gout->data() + p * ho * wo;
        T* giplane = gin->data() + p * h * w;
        for (std::int64_t y = 0; y < ho; ++y) {
          const T* gorow = goplane + y * wo;
          T* girow = giplane + (y / 2) * w;
          for (std::int64_t x = 0; x < wo; ++x) girow[x / 2] += gorow[x];
        }
      }
    });
  }
  return out;
}

// Concatenation along the channel axis; batch and spatial axes must agree.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_rank(a, 4, "concat_channels lhs");
  detail::check_rank(b, 4, "concat_channels rhs");
  for (std::size_t axis : {std::size_t{0}, std::size_t{2}, std::size_t{3}}) {
    if (a.dim(axis) != b.dim(axis)) {
      static const char* names[] = {"batch", "channel", "height", "width"};
      throw ShapeError(std::string("concat_channels ") + names[axis] +
                       " axis mismatch: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }
  const std::int64_t batch = a.dim(0), c1 = a.dim(1), c2 = b.dim(1);
  const std::int64_t h = a.dim(2), w = a.dim(3), plane = h * w;
  Tensor<T> out({batch, c1 + c2, h, w});
  {
    const T* pa = a.data();
    const T* pb = b.data();
    T* o = out.data();
    for (std::int64_t bi = 0; bi < batch; ++bi) {
      std::copy(pa + bi * c1 * plane, pa + (bi + 1) * c1 * plane,
                o + bi * (c1 + c2) * plane);
      std::copy(pb + bi * c2 * plane, pb + (bi + 1) * c2 * plane,
                o + (bi * (c1 + c2) + c1) * plane);
    }
  }

  if (detail::recording<T>({&a, &b})) {
    out.enable_grad();
    auto ga = a.grad_buffer();
    auto gb = b.grad_buffer();
    auto gout = out.grad_buffer();
    Tape<T>::current()->record([ga, gb, gout, batch, c1, c2, plane] {
      const T* go = gout->data();
      for (std::int64_t bi = 0; bi < batch; ++bi) {
        if (ga) {
          T* dst = ga->data() + bi * c1 * plane;
          const T* src = go + bi * (c1 + c2) * plane;
          for (std::int64_t i = 0; i < c1 * plane; ++i) dst[i] += src[i];
        }
        if (gb) {
          T* dst = gb->data() + bi * c2 * plane;
          const T* src = go + (bi * (c1 + c2) + c1) * plane;
          for (std::int64_t i = 0; i < c2 * plane; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

// Per-row affine map: out = input * weights + bias.
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights,
                const Tensor<T>& bias) {
  detail::check_rank(input, 2, "dense input");
  detail::check_rank(weights, 2, "dense weights");
  detail::check_rank(bias, 1, "dense bias");
  const std::int64_t batch = input.dim(0), n = input.dim(1);
  const std::int64_t m = weights.dim(1);
  if (weights.dim(0) != n) {
    throw ShapeError("dense inner axis mismatch: input is [" +
                     std::to_string(batch) + "," + std::to_string(n) +
                     "], weights are " + shape_str(weights.shape()));
  }
  if (bias.dim(0) != m) {
    throw ShapeError("dense bias axis mismatch: weights emit " +
                     std::to_string(m) + ", bias has " +
                     std::to_string(bias.dim(0)));
  }
  Tensor<T> out({batch, m});
  {
    const T* in = input.data();
    const T* wt = weights.data();
    const T* bs = bias.data();
    T* o = out.data();
    for (std::int64_t b = 0; b < batch; ++b) {
      T* orow = o + b * m;
      std::copy(bs, bs + m, orow);
      const T* irow = in + b * n;
      for (std::int64_t i = 0; i < n; ++i) {
        const T v = irow[i];
        if (v == T{0}) continue;
        const T* wrow = wt + i * m;
        for (std::int64_t j = 0; j < m; ++j) orow[j] += v * wrow[j];
      }
    }
  }

  if (detail::recording<T>({&input, &weights, &bias})) {
    out.enable_grad();
    auto gin = input.grad_buffer();
    auto gw = weights.grad_buffer();
    auto gb = bias.grad_buffer();
    auto gout = out.grad_buffer();
    auto in_data = input.data_buffer();
    auto w_data = weights.data_buffer();
    Tape<T>::current()->record(
        [gin, gw, gb, gout, in_data, w_data, batch, n, m] {
          const T* go = gout->data();
          for (std::int64_t b = 0; b < batch; ++b) {
            const T* gorow = go + b * m;
            if (gb) {
              for (std::int64_t j = 0; j < m; ++j) (*gb)[j] += gorow[j];
            }
            for (std::int64_t i = 0; i < n; ++i) {
              const T* wrow = w_data->data() + i * m;
              if (gin) {
                T acc{0};
                for (std::int64_t j = 0; j < m; ++j) acc += gorow[j] * wrow[j];
                (*gin)[static_cast<std::size_t>(b * n + i)] += acc;
              }
              if (gw) {
                const T v = (*in_data)[static_cast<std::size_t>(b * n + i)];
                T* gwrow = gw->data() + i * m;
                for (std::int64_t j = 0; j < m; ++j) gwrow[j] += v * gorow[j];
              }
            }
          }
        });
  }
  return out;
}

// Elementwise max(x, 0); gradient passes iff the input was strictly positive.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* in = x.data();
  T* o = out.data();
  const std::size_t n = static_cast<std::size_t>(x.size());
  for (std::size_t i = 0; i < n; ++i) o[i] = in[i] > T{0} ? in[i] : T{0};

  if (detail::recording<T>({&x})) {
    out.enable_grad();
    auto gin = x.grad_buffer();
    auto gout = out.grad_buffer();
    auto in_data = x.data_buffer();
    Tape<T>::current()->record([gin, gout, in_data] {
      for (std::size_t i = 0; i < gout->size(); ++i) {
        if ((*in_data)[i] > T{0}) (*gin)[i] += (*gout)[i];
      }
    });
  }
  return out;
}

namespace detail {
template <typename T>
inline constexpr T sigmoid_floor =
    std::is_same_v<T, float> ? T(1e-7) : T(1e-15);
}

// Numerically stable logistic function with the output pinned strictly inside
// (0, 1) in either precision.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* in = x.data();
  T* o = out.data();
  const std::size_t n = static_cast<std::size_t>(x.size());
  const T lo = detail::sigmoid_floor<T>;
  const T hi = T{1} - lo;
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    if (in[i] >= T{0}) {
      v = T{1} / (T{1} + std::exp(-in[i]));
    } else {
      const T e = std::exp(in[i]);
      v = e / (T{1} + e);
    }
    o[i] = std::min(hi, std::max(lo, v));
  }

  if (detail::recording<T>({&x})) {
    out.enable_grad();
    auto gin = x.grad_buffer();
    auto gout = out.grad_buffer();
    auto out_data = out.data_buffer();
    Tape<T>::current()->record([gin, gout, out_data] {
      for (std::size_t i = 0; i < gout->size(); ++i) {
        const T s = (*out_data)[i];
        (*gin)[i] += (*gout)[i] * s * (T{1} - s);
      }
    });
  }
  return out;
}

// Elementwise sum of two same-shape tensors.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* o = out.data();
  const std::size_t n = static_cast<std::size_t>(a.size());
  for (std::size_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];

  if (detail::recording<T>({&a, &b})) {
    out.enable_grad();
    auto ga = a.grad_buffer();
    auto gb = b.grad_buffer();
    auto gout = out.grad_buffer();
    Tape<T>::current()->record([ga, gb, gout] {
      for (std::size_t i = 0; i < gout->size(); ++i) {
        if (ga) (*ga)[i] += (*gout)[i];
        if (gb) (*gb)[i] += (*gout)[i];
      }
    });
  }
  return out;
}

// Multiplication by a compile-time constant factor.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  const T* in = x.data();
  T* o = out.data();
  const std::size_t n = static_cast<std::size_t>(x.size());
  for (std::size_t i = 0; i < n; ++i) o[i] = factor * in[i];

  if (detail::recording<T>({&x})) {
    out.enable_grad();
    auto gin = x.grad_buffer();
    auto gout = out.grad_buffer();
    Tape<T>::current()->record([gin, gout, factor] {
      for (std::size_t i = 0; i < gout->size(); ++i)
        (*gin)[i] += factor * (*gout)[i];
    });
  }
  return out;
}

// Reduction of all elements to a scalar.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc{0};
  const T* in = x.data();
  const std::size_t n = static_cast<std::size_t>(x.size());
  for (std::size_t i = 0; i < n; ++i) acc += in[i];
  Tensor<T> out = Tensor<T>::scalar(acc);

  if (detail::recording<T>({&x})) {
    out.enable_grad();
    auto gin = x.grad_buffer();
    auto gout = out.grad_buffer();
    Tape<T>::current()->record([gin, gout] {
      const T g = (*gout)[0];
      for (std::size_t i = 0; i < gin->size(); ++i) (*gin)[i] += g;
    });
  }
  return out;
}

// Mean over examples of the per-example mean squared error, where axis 0
// indexes examples. Symmetric in its arguments.
template <typename T>
Tensor<T> l2_mean(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l2_mean shape mismatch: " + shape_str(pred.shape()) +
                     " vs " + shape_str(target.shape()));
  }
  if (pred.rank() < 1 || pred.dim(0) < 1) {
    throw PreconditionError("l2_mean requires a nonempty batch axis");
  }
  const std::int64_t batch = pred.dim(0);
  const std::int64_t per = pred.size() / batch;
  const T* p = pred.data();
  const T* t = target.data();
  T total{0};
  for (std::int64_t b = 0; b < batch; ++b) {
    T acc{0};
    const T* pr = p + b * per;
    const T* tr = t + b * per;
    for (std::int64_t i = 0; i < per; ++i) {
      const T d = pr[i] - tr[i];
      acc += d * d;
    }
    total += acc / static_cast<T>(per);
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(batch));

  if (detail::recording<T>({&pred, &target})) {
    out.enable_grad();
    auto gp = pred.grad_buffer();
    auto gt = target.grad_buffer();
    auto gout = out.grad_buffer();
    auto p_data = pred.data_buffer();
    auto t_data = target.data_buffer();
    const T norm = T{2} / (static_cast<T>(per) * static_cast<T>(batch));
    Tape<T>::current()->record([gp, gt, gout, p_data, t_data, norm] {
      const T g = (*gout)[0] * norm;
      for (std::size_t i = 0; i < p_data->size(); ++i) {
        const T d = (*p_data)[i] - (*t_data)[i];
        if (gp) (*gp)[i] += g * d;
        if (gt) (*gt)[i] -= g * d;
      }
    });
  }
  return out;
}

inline constexpr double kLogClamp = 1e-12;

// mean(-log(max(p, 1e-12))) over all elements.
template <typename T>
Tensor<T> mean_neg_log(const Tensor<T>& p) {
  const std::size_t n = static_cast<std::size_t>(p.size());
  if (n == 0) throw PreconditionError("mean_neg_log of empty tensor");
  const T eps = static_cast<T>(kLogClamp);
  const T* in = p.data();
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += -std::log(std::max(in[i], eps));
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));

  if (detail::recording<T>({&p})) {
    out.enable_grad();
    auto gin = p.grad_buffer();
    auto gout = out.grad_buffer();
    auto in_data = p.data_buffer();
    Tape<T>::current()->record([gin, gout, in_data, eps, n] {
      const T g = (*gout)[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T v = (*in_data)[i];
        if (v > eps) (*gin)[i] -= g / v;
      }
    });
  }
  return out;
}

// mean(-log(max(1 - p, 1e-12))) over all elements.
template <typename T>
Tensor<T> mean_neg_log_complement(const Tensor<T>& p) {
  const std::size_t n = static_cast<std::size_t>(p.size());
  if (n == 0) throw PreconditionError("mean_neg_log_complement of empty tensor");
  const T eps = static_cast<T>(kLogClamp);
  const T* in = p.data();
  T acc{0};
  for (std::size_t i = 0; i < n; ++i)
    acc += -std::log(std::max(T{1} - in[i], eps));
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));

  if (detail::recording<T>({&p})) {
    out.enable_grad();
    auto gin = p.grad_buffer();
    auto gout = out.grad_buffer();
    auto in_data = p.data_buffer();
    Tape<T>::current()->record([gin, gout, in_data, eps, n] {
      const T g = (*gout)[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T c = T{1} - (*in_data)[i];
        if (c > eps) (*gin)[i] += g / c;
      }
    });
  }
  return out;
}

// Replicates a [B,F] feature vector across an HxW grid; the adjoint sums the
// grid back into the vector. Used for bottleneck fusion of global features.
template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& features, std::int64_t h,
                            std::int64_t w) {
  detail::check_rank(features, 2, "broadcast_spatial features");
  const std::int64_t batch = features.dim(0), f = features.dim(1);
  Tensor<T> out({batch, f, h, w});
  {
    const T* in = features.data();
    T* o = out.data();
    for (std::int64_t p = 0; p < batch * f; ++p) {
      std::fill(o + p * h * w, o + (p + 1) * h * w, in[p]);
    }
  }

  if (detail::recording<T>({&features})) {
    out.enable_grad();
    auto gin = features.grad_buffer();
    auto gout = out.grad_buffer();
    const std::int64_t planes = batch * f, plane = h * w;
    Tape<T>::current()->record([gin, gout, planes, plane] {
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* src = gout->data() + p * plane;
        T acc{0};
        for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
        (*gin)[static_cast<std::size_t>(p)] += acc;
      }
    });
  }
  return out;
}

// Batch normalization over [B,C,H,W] with per-channel scale/shift. In
// training mode statistics come from the batch and the running buffers are
// updated in place; in inference mode the running buffers are used. Variance
// is biased in both modes.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, bool training,
                    T momentum = T(0.1), T eps = T(1e-5)) {
  detail::check_rank(x, 4, "batchnorm input");
  const std::int64_t batch = x.dim(0), c = x.dim(1);
  const std::int64_t h = x.dim(2), w = x.dim(3);
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw ShapeError("batchnorm channel axis mismatch: input has " +
                     std::to_string(c) + " channels");
  }
  const std::int64_t plane = h * w;
  const std::int64_t n = batch * plane;

  std::vector<T> mean(static_cast<std::size_t>(c));
  std::vector<T> inv_std(static_cast<std::size_t>(c));
  {
    const T* in = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T m{0}, v{0};
      if (training) {
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* pl = in + (b * c + ch) * plane;
          for (std::int64_t i = 0; i < plane; ++i) m += pl[i];
        }
        m /= static_cast<T>(n);
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* pl = in + (b * c + ch) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const T d = pl[i] - m;
            v += d * d;
          }
        }
        v /= static_cast<T>(n);
        running_mean.data()[ch] =
            (T{1} - momentum) * running_mean.data()[ch] + momentum * m;
        running_var.data()[ch] =
            (T{1} - momentum) * running_var.data()[ch] + momentum * v;
      } else {
        m = running_mean.data()[ch];
        v = running_var.data()[ch];
      }
      mean[static_cast<std::size_t>(ch)] = m;
      inv_std[static_cast<std::size_t>(ch)] = T{1} / std::sqrt(v + eps);
    }
  }

  Tensor<T> out(x.shape());
  {
    const T* in = x.data();
    const T* g = gamma.data();
    const T* bt = beta.data();
    T* o = out.data();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T m = mean[static_cast<std::size_t>(ch)];
        const T is = inv_std[static_cast<std::size_t>(ch)];
        const T gc = g[ch], bc = bt[ch];
        const T* pl = in + (b * c + ch) * plane;
        T* op = o + (b * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i)
          op[i] = gc * (pl[i] - m) * is + bc;
      }
    }
  }

  if (detail::recording<T>({&x, &gamma, &beta})) {
    out.enable_grad();
    auto gx = x.grad_buffer();
    auto gg = gamma.grad_buffer();
    auto gb = beta.grad_buffer();
    auto gout = out.grad_buffer();
    auto x_data = x.data_buffer();
    auto gamma_data = gamma.data_buffer();
    Tape<T>::current()->record([gx, gg, gb, gout, x_data, gamma_data,
                                mean = std::move(mean),
                                inv_std = std::move(inv_std), batch, c, plane,
                                n, training] {
      const T* in = x_data->data();
      const T* go = gout->data();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T m = mean[static_cast<std::size_t>(ch)];
        const T is = inv_std[static_cast<std::size_t>(ch)];
        const T gc = (*gamma_data)[static_cast<std::size_t>(ch)];
        T sum_dy{0}, sum_dy_xhat{0};
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* pl = in + (b * c + ch) * plane;
          const T* gp = go + (b * c + ch) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            sum_dy += gp[i];
            sum_dy_xhat += gp[i] * (pl[i] - m) * is;
          }
        }
        if (gb) (*gb)[static_cast<std::size_t>(ch)] += sum_dy;
        if (gg) (*gg)[static_cast<std::size_t>(ch)] += sum_dy_xhat;
        if (gx) {
          for (std::int64_t b = 0; b < batch; ++b) {
            const T* pl = in + (b * c + ch) * plane;
            const T* gp = go + (b * c + ch) * plane;
            T* gxp = gx->data() + (b * c + ch) * plane;
            if (training) {
              const T invn = T{1} / static_cast<T>(n);
              for (std::int64_t i = 0; i < plane; ++i) {
                const T xhat = (pl[i] - m) * is;
                gxp[i] += gc * is *
                          (gp[i] - invn * sum_dy - xhat * invn * sum_dy_xhat);
              }
            } else {
              for (std::int64_t i = 0; i < plane; ++i) gxp[i] += gc * is * gp[i];
            }
          }
        }
      }
    });
  }
  return out;
}

// Flatten [B, ...] to [B, N]; shares buffers, no tape node required.
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.rank() < 2) {
    throw ShapeError("flatten requires rank >= 2, got " +
                     shape_str(x.shape()));
  }
  return x.reshape({x.dim(0), x.size() / x.dim(0)});
}

}  // namespace chroma
