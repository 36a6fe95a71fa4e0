#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <type_traits>
#include <vector>

#include "gml/tensor.hpp"

#ifdef GML_WITH_OPENBLAS
#include <cblas.h>
#endif

// Raw forward/backward math for every primitive the motion blocks need.
// All functions are pure: they read their inputs and write fresh tensors or
// accumulate (+=) into caller-provided gradient buffers. Loop order is fixed,
// so identical inputs give bit-identical outputs; the BLAS build pins a single
// thread for the same reason.

namespace gml::ops {

namespace detail {

template <typename R>
inline void axpy(R* out, const R* in, R a, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) out[i] += a * in[i];
}

// Fixed-order blocked reduction. Eight independent accumulators let the
// compiler vectorize without reassociating the final sum.
template <typename R>
inline R dot(const R* a, const R* b, std::int64_t n) {
  R acc[8] = {};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  R tail = R(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename R>
inline R sum(const R* a, std::int64_t n) {
  R acc[8] = {};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k];
  R tail = R(0);
  for (; i < n; ++i) tail += a[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename R>
inline R abs_sum(const R* a, std::int64_t n) {
  R acc[8] = {};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) acc[k] += std::abs(a[i + k]);
  R tail = R(0);
  for (; i < n; ++i) tail += std::abs(a[i]);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// out[y][x] += k * in[y+di][x+dj] over the in-bounds overlap.
template <typename R>
inline void shifted_axpy_2d(R* out, const R* in, R k, std::int64_t h, std::int64_t w, int di, int dj) {
  const std::int64_t y0 = std::max<std::int64_t>(0, -di), y1 = std::min<std::int64_t>(h, h - di);
  const std::int64_t x0 = std::max<std::int64_t>(0, -dj), x1 = std::min<std::int64_t>(w, w - dj);
  for (std::int64_t y = y0; y < y1; ++y) {
    R* orow = out + y * w + x0;
    const R* irow = in + (y + di) * w + (x0 + dj);
    const std::int64_t n = x1 - x0;
    for (std::int64_t x = 0; x < n; ++x) orow[x] += k * irow[x];
  }
}

// sum over the overlap of a[y][x] * b[y+di][x+dj].
template <typename R>
inline R shifted_dot_2d(const R* a, const R* b, std::int64_t h, std::int64_t w, int di, int dj) {
  const std::int64_t y0 = std::max<std::int64_t>(0, -di), y1 = std::min<std::int64_t>(h, h - di);
  const std::int64_t x0 = std::max<std::int64_t>(0, -dj), x1 = std::min<std::int64_t>(w, w - dj);
  R acc = R(0);
  for (std::int64_t y = y0; y < y1; ++y)
    acc += dot(a + y * w + x0, b + (y + di) * w + (x0 + dj), x1 - x0);
  return acc;
}

#ifdef GML_WITH_OPENBLAS
template <typename R>
inline constexpr bool has_gemm = std::is_same_v<R, float> || std::is_same_v<R, double>;

inline void pin_blas_thread() {
  static const bool once = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)once;
}

// C(m x n) += A(m x k) * B(k x n), row-major, optional transposes on A/B.
inline void gemm_acc(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
                     const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float* c,
                     std::int64_t ldc) {
  pin_blas_thread();
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), 1.0f, c, static_cast<int>(ldc));
}

inline void gemm_acc(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
                     const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
                     double* c, std::int64_t ldc) {
  pin_blas_thread();
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), 1.0, c, static_cast<int>(ldc));
}
#else
template <typename R>
inline constexpr bool has_gemm = false;

template <typename R>
inline void gemm_acc(bool, bool, std::int64_t, std::int64_t, std::int64_t, const R*, std::int64_t,
                     const R*, std::int64_t, R*, std::int64_t) {}
#endif

}  // namespace detail

// ---------------------------------------------------------------------------
// 1x1x1 convolution: mixes channels pointwise.
//   out[b,co,t,h,w] = bias[co] + sum_ci w[co,ci] * x[b,ci,t,h,w]
// x: (B,Ci,T,H,W), w: (Co,Ci), bias: (Co)
// ---------------------------------------------------------------------------
template <typename R>
void check_conv_pointwise(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& bias) {
  require_feature_map(x, "conv_pointwise");
  require_rank(w, 2, "conv_pointwise weights");
  require_rank(bias, 1, "conv_pointwise bias");
  if (w.dim(1) != x.dim(1))
    throw DimError("conv_pointwise: weight C_in " + std::to_string(w.dim(1)) + " != input channels " +
                   std::to_string(x.dim(1)));
  if (bias.dim(0) != w.dim(0)) throw DimError("conv_pointwise: bias length != C_out");
}

template <typename R>
Tensor<R> conv_pointwise(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& bias) {
  check_conv_pointwise(x, w, bias);
  const std::int64_t B = x.dim(0), Ci = x.dim(1), Co = w.dim(0);
  const std::int64_t plane = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor<R> out({B, Co, x.dim(2), x.dim(3), x.dim(4)});
  for (std::int64_t b = 0; b < B; ++b) {
    const R* xb = x.data.data() + b * Ci * plane;
    R* ob = out.data.data() + b * Co * plane;
    for (std::int64_t co = 0; co < Co; ++co)
      std::fill_n(ob + co * plane, plane, bias.data[static_cast<std::size_t>(co)]);
    if constexpr (detail::has_gemm<R>) {
      detail::gemm_acc(false, false, Co, plane, Ci, w.data.data(), Ci, xb, plane, ob, plane);
    } else {
      for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t ci = 0; ci < Ci; ++ci)
          detail::axpy(ob + co * plane, xb + ci * plane, w.at2(co, ci), plane);
    }
  }
  return out;
}

template <typename R>
void conv_pointwise_backward(const Tensor<R>& g, const Tensor<R>& x, const Tensor<R>& w,
                             Tensor<R>* dx, Tensor<R>* dw, Tensor<R>* dbias) {
  const std::int64_t B = x.dim(0), Ci = x.dim(1), Co = w.dim(0);
  const std::int64_t plane = x.dim(2) * x.dim(3) * x.dim(4);
  for (std::int64_t b = 0; b < B; ++b) {
    const R* xb = x.data.data() + b * Ci * plane;
    const R* gb = g.data.data() + b * Co * plane;
    if (dx) {
      R* dxb = dx->data.data() + b * Ci * plane;
      if constexpr (detail::has_gemm<R>) {
        detail::gemm_acc(true, false, Ci, plane, Co, w.data.data(), Ci, gb, plane, dxb, plane);
      } else {
        for (std::int64_t ci = 0; ci < Ci; ++ci)
          for (std::int64_t co = 0; co < Co; ++co)
            detail::axpy(dxb + ci * plane, gb + co * plane, w.at2(co, ci), plane);
      }
    }
    if (dw) {
      if constexpr (detail::has_gemm<R>) {
        detail::gemm_acc(false, true, Co, Ci, plane, gb, plane, xb, plane, dw->data.data(), Ci);
      } else {
        for (std::int64_t co = 0; co < Co; ++co)
          for (std::int64_t ci = 0; ci < Ci; ++ci)
            dw->at2(co, ci) += detail::dot(gb + co * plane, xb + ci * plane, plane);
      }
    }
    if (dbias) {
      for (std::int64_t co = 0; co < Co; ++co)
        dbias->data[static_cast<std::size_t>(co)] += detail::sum(gb + co * plane, plane);
    }
  }
}

// ---------------------------------------------------------------------------
// Channel-wise 1x3x3 spatial convolution, zero-padded (same size).
//   out[b,c,t,h,w] = sum_{i,j in -1..1} k[c,i+1,j+1] * x[b,c,t,h+i,w+j]
// k: (C,3,3)
// ---------------------------------------------------------------------------
template <typename R>
void check_conv_spatial(const Tensor<R>& x, const Tensor<R>& k) {
  require_feature_map(x, "conv_channelwise_spatial");
  require_rank(k, 3, "conv_channelwise_spatial kernel");
  if (k.dim(0) != x.dim(1))
    throw DimError("conv_channelwise_spatial: kernel channels " + std::to_string(k.dim(0)) +
                   " != input channels " + std::to_string(x.dim(1)));
  if (k.dim(1) != 3 || k.dim(2) != 3) throw DimError("conv_channelwise_spatial: kernel must be (C,3,3)");
}

template <typename R>
Tensor<R> conv_channelwise_spatial(const Tensor<R>& x, const Tensor<R>& k) {
  check_conv_spatial(x, k);
  const std::int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  Tensor<R> out(x.shape);
  const std::int64_t hw = H * W;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < T; ++t) {
        const R* xp = x.data.data() + (((b * C + c) * T) + t) * hw;
        R* op = out.data.data() + (((b * C + c) * T) + t) * hw;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj)
            detail::shifted_axpy_2d(op, xp, k.at3(c, di + 1, dj + 1), H, W, di, dj);
      }
  return out;
}

template <typename R>
void conv_channelwise_spatial_backward(const Tensor<R>& g, const Tensor<R>& x, const Tensor<R>& k,
                                       Tensor<R>* dx, Tensor<R>* dk) {
  const std::int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::int64_t hw = H * W;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t off = (((b * C + c) * T) + t) * hw;
        const R* gp = g.data.data() + off;
        const R* xp = x.data.data() + off;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const R kv = k.at3(c, di + 1, dj + 1);
            // dx[u,v] += k * g[u-di, v-dj]
            if (dx) detail::shifted_axpy_2d(dx->data.data() + off, gp, kv, H, W, -di, -dj);
            if (dk) dk->at3(c, di + 1, dj + 1) += detail::shifted_dot_2d(gp, xp, H, W, di, dj);
          }
      }
}

// ---------------------------------------------------------------------------
// Channel-wise 3x1x1 temporal convolution (adjacent-frame fusion), zero-padded.
//   out[b,c,t,h,w] = sum_{d in -1..1} k[c,d+1] * x[b,c,t+d,h,w]
// k: (C,3)
// ---------------------------------------------------------------------------
template <typename R>
void check_conv_temporal(const Tensor<R>& x, const Tensor<R>& k) {
  require_feature_map(x, "conv_channelwise_temporal");
  require_rank(k, 2, "conv_channelwise_temporal kernel");
  if (k.dim(0) != x.dim(1))
    throw DimError("conv_channelwise_temporal: kernel channels " + std::to_string(k.dim(0)) +
                   " != input channels " + std::to_string(x.dim(1)));
  if (k.dim(1) != 3) throw DimError("conv_channelwise_temporal: kernel must be (C,3)");
}

template <typename R>
Tensor<R> conv_channelwise_temporal(const Tensor<R>& x, const Tensor<R>& k) {
  check_conv_temporal(x, k);
  const std::int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), hw = x.dim(3) * x.dim(4);
  Tensor<R> out(x.shape);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const R* xc = x.data.data() + (b * C + c) * T * hw;
      R* oc = out.data.data() + (b * C + c) * T * hw;
      for (int d = -1; d <= 1; ++d) {
        const R kv = k.at2(c, d + 1);
        const std::int64_t t0 = std::max<std::int64_t>(0, -d), t1 = std::min<std::int64_t>(T, T - d);
        for (std::int64_t t = t0; t < t1; ++t)
          detail::axpy(oc + t * hw, xc + (t + d) * hw, kv, hw);
      }
    }
  return out;
}

template <typename R>
void conv_channelwise_temporal_backward(const Tensor<R>& g, const Tensor<R>& x, const Tensor<R>& k,
                                        Tensor<R>* dx, Tensor<R>* dk) {
  const std::int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), hw = x.dim(3) * x.dim(4);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t off = (b * C + c) * T * hw;
      const R* gc = g.data.data() + off;
      const R* xc = x.data.data() + off;
      for (int d = -1; d <= 1; ++d) {
        const R kv = k.at2(c, d + 1);
        const std::int64_t t0 = std::max<std::int64_t>(0, -d), t1 = std::min<std::int64_t>(T, T - d);
        R acc = R(0);
        for (std::int64_t t = t0; t < t1; ++t) {
          if (dx) detail::axpy(dx->data.data() + off + (t + d) * hw, gc + t * hw, kv, hw);
          if (dk) acc += detail::dot(gc + t * hw, xc + (t + d) * hw, hw);
        }
        if (dk) dk->at2(c, d + 1) += acc;
      }
    }
}

// ---------------------------------------------------------------------------
// Frame-by-frame subtraction with the previous pre-modeled frame:
//   out[...,t,...] = cur[...,t,...] - pre[...,t-1,...]   (t >= 1)
//   out[...,0,...] = 0                                    (boundary)
// ---------------------------------------------------------------------------
template <typename R>
Tensor<R> shifted_subtract(const Tensor<R>& cur, const Tensor<R>& pre) {
  require_feature_map(cur, "shifted_subtract");
  if (!same_shape(cur, pre))
    throw DimError("shifted_subtract: shape mismatch " + shape_str(cur.shape) + " vs " +
                   shape_str(pre.shape));
  const std::int64_t B = cur.dim(0), C = cur.dim(1), T = cur.dim(2), hw = cur.dim(3) * cur.dim(4);
  Tensor<R> out(cur.shape);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const R* cc = cur.data.data() + bc * T * hw;
    const R* pc = pre.data.data() + bc * T * hw;
    R* oc = out.data.data() + bc * T * hw;
    // frame 0 stays zero
    for (std::int64_t t = 1; t < T; ++t)
      for (std::int64_t i = 0; i < hw; ++i) oc[t * hw + i] = cc[t * hw + i] - pc[(t - 1) * hw + i];
  }
  return out;
}

template <typename R>
void shifted_subtract_backward(const Tensor<R>& g, Tensor<R>* dcur, Tensor<R>* dpre) {
  const std::int64_t B = g.dim(0), C = g.dim(1), T = g.dim(2), hw = g.dim(3) * g.dim(4);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const R* gc = g.data.data() + bc * T * hw;
    for (std::int64_t t = 1; t < T; ++t) {
      if (dcur) detail::axpy(dcur->data.data() + bc * T * hw + t * hw, gc + t * hw, R(1), hw);
      if (dpre) detail::axpy(dpre->data.data() + bc * T * hw + (t - 1) * hw, gc + t * hw, R(-1), hw);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise add / ReLU.
// ---------------------------------------------------------------------------
template <typename R>
Tensor<R> add(const Tensor<R>& x, const Tensor<R>& y) {
  if (!same_shape(x, y))
    throw DimError("add: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor<R> out(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] + y.data[i];
  return out;
}

template <typename R>
Tensor<R> relu(const Tensor<R>& x) {
  Tensor<R> out(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] > R(0) ? x.data[i] : R(0);
  return out;
}

template <typename R>
void relu_backward(const Tensor<R>& g, const Tensor<R>& x, Tensor<R>* dx) {
  for (std::int64_t i = 0; i < x.numel(); ++i)
    if (x.data[i] > R(0)) dx->data[i] += g.data[i];
}

// ---------------------------------------------------------------------------
// 2x2 spatial mean pool, stride 2. Requires even H and W.
// ---------------------------------------------------------------------------
template <typename R>
Tensor<R> mean_pool_2x2(const Tensor<R>& x) {
  require_feature_map(x, "mean_pool_2x2");
  const std::int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  if (H % 2 != 0 || W % 2 != 0)
    throw DimError("mean_pool_2x2: H and W must be even, got " + shape_str(x.shape));
  Tensor<R> out({B, C, T, H / 2, W / 2});
  const std::int64_t ho = H / 2, wo = W / 2;
  for (std::int64_t p = 0; p < B * C * T; ++p) {
    const R* xp = x.data.data() + p * H * W;
    R* op = out.data.data() + p * ho * wo;
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t x2 = 0; x2 < wo; ++x2) {
        const R* r0 = xp + (2 * y) * W + 2 * x2;
        const R* r1 = r0 + W;
        op[y * wo + x2] = ((r0[0] + r0[1]) + (r1[0] + r1[1])) * R(0.25);
      }
  }
  return out;
}

template <typename R>
void mean_pool_2x2_backward(const Tensor<R>& g, const Shape& xshape, Tensor<R>* dx) {
  const std::int64_t H = xshape[3], W = xshape[4];
  const std::int64_t ho = H / 2, wo = W / 2;
  const std::int64_t planes = xshape[0] * xshape[1] * xshape[2];
  for (std::int64_t p = 0; p < planes; ++p) {
    const R* gp = g.data.data() + p * ho * wo;
    R* dp = dx->data.data() + p * H * W;
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t x2 = 0; x2 < wo; ++x2) {
        const R q = gp[y * wo + x2] * R(0.25);
        R* r0 = dp + (2 * y) * W + 2 * x2;
        R* r1 = r0 + W;
        r0[0] += q;
        r0[1] += q;
        r1[0] += q;
        r1[1] += q;
      }
  }
}

// ---------------------------------------------------------------------------
// Global average pool over (T,H,W): (B,C,T,H,W) -> (B,C).
// ---------------------------------------------------------------------------
template <typename R>
Tensor<R> global_avg_pool(const Tensor<R>& x) {
  require_feature_map(x, "global_avg_pool");
  const std::int64_t B = x.dim(0), C = x.dim(1);
  const std::int64_t plane = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor<R> out({B, C});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      out.at2(b, c) = detail::sum(x.data.data() + (b * C + c) * plane, plane) / static_cast<R>(plane);
  return out;
}

template <typename R>
void global_avg_pool_backward(const Tensor<R>& g, const Shape& xshape, Tensor<R>* dx) {
  const std::int64_t B = xshape[0], C = xshape[1];
  const std::int64_t plane = xshape[2] * xshape[3] * xshape[4];
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const R q = g.at2(b, c) / static_cast<R>(plane);
      R* dp = dx->data.data() + (b * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dp[i] += q;
    }
}

// ---------------------------------------------------------------------------
// Affine classifier layer: (B,Ci) x (Co,Ci) + (Co) -> (B,Co).
// ---------------------------------------------------------------------------
template <typename R>
Tensor<R> linear(const Tensor<R>& v, const Tensor<R>& w, const Tensor<R>& bias) {
  require_rank(v, 2, "linear input");
  require_rank(w, 2, "linear weights");
  require_rank(bias, 1, "linear bias");
  if (w.dim(1) != v.dim(1)) throw DimError("linear: weight C_in != input features");
  if (bias.dim(0) != w.dim(0)) throw DimError("linear: bias length != C_out");
  const std::int64_t B = v.dim(0), Ci = v.dim(1), Co = w.dim(0);
  Tensor<R> out({B, Co});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < Co; ++o)
      out.at2(b, o) = bias.data[static_cast<std::size_t>(o)] +
                      detail::dot(w.data.data() + o * Ci, v.data.data() + b * Ci, Ci);
  return out;
}

template <typename R>
void linear_backward(const Tensor<R>& g, const Tensor<R>& v, const Tensor<R>& w, Tensor<R>* dv,
                     Tensor<R>* dw, Tensor<R>* dbias) {
  const std::int64_t B = v.dim(0), Ci = v.dim(1), Co = w.dim(0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < Co; ++o) {
      const R go = g.at2(b, o);
      if (dv) detail::axpy(dv->data.data() + b * Ci, w.data.data() + o * Ci, go, Ci);
      if (dw) detail::axpy(dw->data.data() + o * Ci, v.data.data() + b * Ci, go, Ci);
      if (dbias) dbias->data[static_cast<std::size_t>(o)] += go;
    }
}

// ---------------------------------------------------------------------------
// Row-wise softmax, numerically stabilized by max subtraction.
// ---------------------------------------------------------------------------
template <typename R>
Tensor<R> softmax_rows(const Tensor<R>& logits) {
  require_rank(logits, 2, "softmax");
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  Tensor<R> p(logits.shape);
  for (std::int64_t b = 0; b < B; ++b) {
    R mx = logits.at2(b, 0);
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, logits.at2(b, k));
    R z = R(0);
    for (std::int64_t k = 0; k < K; ++k) {
      const R e = std::exp(logits.at2(b, k) - mx);
      p.at2(b, k) = e;
      z += e;
    }
    for (std::int64_t k = 0; k < K; ++k) p.at2(b, k) /= z;
  }
  return p;
}

template <typename R>
void check_labels(const Tensor<R>& logits, const std::vector<int>& labels) {
  if (static_cast<std::int64_t>(labels.size()) != logits.dim(0))
    throw DimError("labels length != batch size");
  for (int y : labels)
    if (y < 0 || y >= logits.dim(1))
      throw Error("label " + std::to_string(y) + " outside valid class range");
}

// Mean over the batch of -log softmax(logits)[label].
template <typename R>
R softmax_cross_entropy(const Tensor<R>& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  check_labels(logits, labels);
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  R acc = R(0);
  for (std::int64_t b = 0; b < B; ++b) {
    R mx = logits.at2(b, 0);
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, logits.at2(b, k));
    R z = R(0);
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(logits.at2(b, k) - mx);
    acc += std::log(z) - (logits.at2(b, labels[static_cast<std::size_t>(b)]) - mx);
  }
  return acc / static_cast<R>(B);
}

template <typename R>
void softmax_cross_entropy_backward(R g, const Tensor<R>& logits, const std::vector<int>& labels,
                                    Tensor<R>* dlogits) {
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  const Tensor<R> p = softmax_rows(logits);
  const R scale = g / static_cast<R>(B);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t k = 0; k < K; ++k) {
      const R ind = (k == labels[static_cast<std::size_t>(b)]) ? R(1) : R(0);
      dlogits->at2(b, k) += scale * (p.at2(b, k) - ind);
    }
}

// ---------------------------------------------------------------------------
// L1 norm of a whole tensor (sum of absolute values).
// ---------------------------------------------------------------------------
template <typename R>
R l1_norm(const Tensor<R>& x) {
  return detail::abs_sum(x.data.data(), x.numel());
}

template <typename R>
void l1_norm_backward(R g, const Tensor<R>& x, Tensor<R>* dx) {
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    if (x.data[i] > R(0))
      dx->data[i] += g;
    else if (x.data[i] < R(0))
      dx->data[i] -= g;
  }
}

// ---------------------------------------------------------------------------
// Per-sample weighted L1: sum_b mask[b] * ||x[b]||_1 over the leading dim.
// ---------------------------------------------------------------------------
template <typename R>
R masked_l1_sum(const Tensor<R>& x, const std::vector<R>& mask) {
  if (x.rank() < 1 || static_cast<std::int64_t>(mask.size()) != x.dim(0))
    throw DimError("masked_l1_sum: mask length != leading dim");
  const std::int64_t per = x.numel() / x.dim(0);
  R acc = R(0);
  for (std::int64_t b = 0; b < x.dim(0); ++b)
    acc += mask[static_cast<std::size_t>(b)] * detail::abs_sum(x.data.data() + b * per, per);
  return acc;
}

template <typename R>
void masked_l1_sum_backward(R g, const Tensor<R>& x, const std::vector<R>& mask, Tensor<R>* dx) {
  const std::int64_t per = x.numel() / x.dim(0);
  for (std::int64_t b = 0; b < x.dim(0); ++b) {
    const R q = g * mask[static_cast<std::size_t>(b)];
    if (q == R(0)) continue;
    const R* xp = x.data.data() + b * per;
    R* dp = dx->data.data() + b * per;
    for (std::int64_t i = 0; i < per; ++i) {
      if (xp[i] > R(0))
        dp[i] += q;
      else if (xp[i] < R(0))
        dp[i] -= q;
    }
  }
}

}  // namespace gml::ops
