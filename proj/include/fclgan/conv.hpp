#pragma once

// 2-D convolution and transposed convolution on NCHW tensors via im2col + GEMM.

#include <cblas.h>

#include <algorithm>
#include <string>
#include <type_traits>
#include <vector>

#include "fclgan/tensor.hpp"

namespace fclgan {

enum class PadMode { zero, reflect };

namespace detail {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    static_assert(std::is_same_v<T, double>, "gemm supports float and double");
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

/// Geometry of a forward convolution from an (in_h, in_w) plane to (out_h, out_w).
/// Index tables map (kernel offset, output position) to an input coordinate,
/// or -1 for a zero-padded tap.
struct ConvGeometry {
  int channels = 0, in_h = 0, in_w = 0, out_h = 0, out_w = 0, kernel = 0, stride = 1, pad = 0;
  std::vector<int> row_index;  // [kernel * out_h]
  std::vector<int> col_index;  // [kernel * out_w]
  // Per kernel column kj: output columns [lo, hi) read input column ox*stride - pad + kj
  // without padding; the rest go through col_index.
  std::vector<int> inner_lo, inner_hi;

  ConvGeometry(int c, int ih, int iw, int oh, int ow, int k, int s, int p, PadMode mode)
      : channels(c), in_h(ih), in_w(iw), out_h(oh), out_w(ow), kernel(k), stride(s), pad(p) {
    auto build = [&](int in, int out, std::vector<int>& table) {
      table.resize(static_cast<std::size_t>(k * out));
      for (int ki = 0; ki < k; ++ki)
        for (int o = 0; o < out; ++o) {
          int i = o * s - p + ki;
          if (i < 0 || i >= in) i = (mode == PadMode::reflect) ? reflect_index(i, in) : -1;
          table[static_cast<std::size_t>(ki * out + o)] = i;
        }
    };
    build(ih, oh, row_index);
    build(iw, ow, col_index);
    inner_lo.assign(static_cast<std::size_t>(k), 0);
    inner_hi.assign(static_cast<std::size_t>(k), 0);
    for (int kj = 0; kj < k; ++kj) {
      int lo = 0;
      while (lo < ow && lo * s - p + kj < 0) ++lo;
      int hi = lo;
      while (hi < ow && hi * s - p + kj < iw) ++hi;
      inner_lo[static_cast<std::size_t>(kj)] = lo;
      inner_hi[static_cast<std::size_t>(kj)] = hi;
    }
  }

  int patch_rows() const { return channels * kernel * kernel; }

  /// Output rows per GEMM block so the column buffer stays bounded.
  int block_rows() const {
    constexpr long budget = 1L << 22;
    long per_row = static_cast<long>(patch_rows()) * out_w;
    return static_cast<int>(std::clamp<long>(budget / std::max(1L, per_row), 1, out_h));
  }

  /// col[(c*k+ki)*k+kj][(oy-oy0)*out_w+ox] = in[c][iy][ix] for oy in [oy0, oy1).
  template <typename T>
  void im2col(const T* in, int oy0, int oy1, T* col) const {
    const int cols = (oy1 - oy0) * out_w;
    for (int c = 0; c < channels; ++c)
      for (int ki = 0; ki < kernel; ++ki)
        for (int kj = 0; kj < kernel; ++kj) {
          T* dst = col + static_cast<std::size_t>((c * kernel + ki) * kernel + kj) * cols;
          const int* ci = &col_index[static_cast<std::size_t>(kj * out_w)];
          const int lo = inner_lo[static_cast<std::size_t>(kj)];
          const int hi = inner_hi[static_cast<std::size_t>(kj)];
          const int off = kj - pad;
          for (int oy = oy0; oy < oy1; ++oy) {
            const int iy = row_index[static_cast<std::size_t>(ki * out_h + oy)];
            T* d = dst + (oy - oy0) * out_w;
            if (iy < 0) {
              std::fill(d, d + out_w, T(0));
              continue;
            }
            const T* src = in + (static_cast<std::size_t>(c) * in_h + iy) * in_w;
            for (int ox = 0; ox < lo; ++ox) d[ox] = ci[ox] < 0 ? T(0) : src[ci[ox]];
            if (stride == 1) {
              std::copy(src + lo + off, src + hi + off, d + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) d[ox] = src[ox * stride + off];
            }
            for (int ox = hi; ox < out_w; ++ox) d[ox] = ci[ox] < 0 ? T(0) : src[ci[ox]];
          }
        }
  }

  /// Adjoint of im2col: accumulates col entries back into the input plane.
  template <typename T>
  void col2im(const T* col, int oy0, int oy1, T* in) const {
    const int cols = (oy1 - oy0) * out_w;
    for (int c = 0; c < channels; ++c)
      for (int ki = 0; ki < kernel; ++ki)
        for (int kj = 0; kj < kernel; ++kj) {
          const T* src = col + static_cast<std::size_t>((c * kernel + ki) * kernel + kj) * cols;
          const int* ci = &col_index[static_cast<std::size_t>(kj * out_w)];
          const int lo = inner_lo[static_cast<std::size_t>(kj)];
          const int hi = inner_hi[static_cast<std::size_t>(kj)];
          const int off = kj - pad;
          for (int oy = oy0; oy < oy1; ++oy) {
            const int iy = row_index[static_cast<std::size_t>(ki * out_h + oy)];
            if (iy < 0) continue;
            const T* sv = src + (oy - oy0) * out_w;
            T* dst = in + (static_cast<std::size_t>(c) * in_h + iy) * in_w;
            for (int ox = 0; ox < lo; ++ox)
              if (ci[ox] >= 0) dst[ci[ox]] += sv[ox];
            if (stride == 1) {
              T* d = dst + off;
              for (int ox = lo; ox < hi; ++ox) d[ox] += sv[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox * stride + off] += sv[ox];
            }
            for (int ox = hi; ox < out_w; ++ox)
              if (ci[ox] >= 0) dst[ci[ox]] += sv[ox];
          }
        }
  }
};

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

}  // namespace detail

/// y = conv(x, w) + b with x:[N,Cin,H,W], w:[Cout,Cin,k,k], b:[Cout] (optional).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad, PadMode mode) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: incompatible input " + shape_str(x.shape()) + " and weight " +
                     shape_str(w.shape()));
  const int n = static_cast<int>(x.dim(0)), cin = static_cast<int>(x.dim(1));
  const int h = static_cast<int>(x.dim(2)), wd = static_cast<int>(x.dim(3));
  const int cout = static_cast<int>(w.dim(0)), k = static_cast<int>(w.dim(2));
  if (mode == PadMode::reflect && (pad >= h || pad >= wd))
    throw ShapeError("conv2d: reflect padding " + std::to_string(pad) + " exceeds input " +
                     shape_str(x.shape()));
  const int oh = detail::conv_out_size(h, k, stride, pad);
  const int ow = detail::conv_out_size(wd, k, stride, pad);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: input too small " + shape_str(x.shape()));

  auto geom = std::make_shared<detail::ConvGeometry>(cin, h, wd, oh, ow, k, stride, pad, mode);
  const int kr = geom->patch_rows();
  const int block = geom->block_rows();
  const std::size_t in_plane = static_cast<std::size_t>(cin) * h * wd;
  const std::size_t out_plane = static_cast<std::size_t>(cout) * oh * ow;

  const std::size_t col_size = static_cast<std::size_t>(kr) * block * ow;
  std::vector<T> scratch(col_size);

  std::vector<T> out(static_cast<std::size_t>(n) * out_plane);
  for (int img = 0; img < n; ++img) {
    const T* xin = x.values().data() + img * in_plane;
    T* y = out.data() + img * out_plane;
    T* col = scratch.data();
    for (int oy0 = 0; oy0 < oh; oy0 += block) {
      const int oy1 = std::min(oh, oy0 + block);
      const int cols = (oy1 - oy0) * ow;
      geom->im2col(xin, oy0, oy1, col);
      detail::gemm<T>(false, false, cout, cols, kr, T(1), w.values().data(), kr, col, cols,
                      T(0), y + oy0 * ow, oh * ow);
    }
    if (b.defined())
      for (int c = 0; c < cout; ++c) {
        T* plane = y + static_cast<std::size_t>(c) * oh * ow;
        const T bc = b.values()[static_cast<std::size_t>(c)];
        for (int i = 0; i < oh * ow; ++i) plane[i] += bc;
      }
  }

  auto xn = x.node_ptr(), wn = w.node_ptr(), bn = b.node_ptr();
  return detail::make_result<T>(
      {static_cast<std::size_t>(n), static_cast<std::size_t>(cout), static_cast<std::size_t>(oh),
       static_cast<std::size_t>(ow)},
      std::move(out), {x, w, b},
      [=](Node<T>& self) {
        std::vector<T> colbuf(wn->requires_grad ? col_size : 0);
        std::vector<T> dcol(xn->requires_grad ? col_size : 0);
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        for (int img = 0; img < n; ++img) {
          const T* gy = self.grad.data() + img * out_plane;
          for (int oy0 = 0; oy0 < oh; oy0 += block) {
            const int oy1 = std::min(oh, oy0 + block);
            const int cols = (oy1 - oy0) * ow;
            if (wn->requires_grad) {
              geom->im2col(xn->value.data() + img * in_plane, oy0, oy1, colbuf.data());
              detail::gemm<T>(false, true, cout, kr, cols, T(1), gy + oy0 * ow, oh * ow,
                              colbuf.data(), cols, T(1), wn->grad.data(), kr);
            }
            if (xn->requires_grad) {
              detail::gemm<T>(true, false, kr, cols, cout, T(1), wn->value.data(), kr,
                              gy + oy0 * ow, oh * ow, T(0), dcol.data(), cols);
              geom->col2im(dcol.data(), oy0, oy1, xn->grad.data() + img * in_plane);
            }
          }
          if (bn && bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (int c = 0; c < cout; ++c) {
              const T* plane = gy + static_cast<std::size_t>(c) * oh * ow;
              T s = 0;
              for (int i = 0; i < oh * ow; ++i) s += plane[i];
              gb[static_cast<std::size_t>(c)] += s;
            }
          }
        }
      });
}

/// Transposed convolution with zero padding; x:[N,Cin,H,W], w:[Cin,Cout,k,k].
/// Output size (H-1)*stride - 2*pad + k + output_pad.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad,
                        int output_pad) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(0) != x.dim(1) || w.dim(2) != w.dim(3))
    throw ShapeError("conv_transpose2d: incompatible input " + shape_str(x.shape()) +
                     " and weight " + shape_str(w.shape()));
  const int n = static_cast<int>(x.dim(0)), cin = static_cast<int>(x.dim(1));
  const int h = static_cast<int>(x.dim(2)), wd = static_cast<int>(x.dim(3));
  const int cout = static_cast<int>(w.dim(1)), k = static_cast<int>(w.dim(2));
  const int oh = (h - 1) * stride - 2 * pad + k + output_pad;
  const int ow = (wd - 1) * stride - 2 * pad + k + output_pad;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: input too small");

  // The adjoint forward convolution maps the (oh, ow) plane onto (h, w).
  auto geom = std::make_shared<detail::ConvGeometry>(cout, oh, ow, h, wd, k, stride, pad,
                                                     PadMode::zero);
  if (detail::conv_out_size(oh, k, stride, pad) != h || detail::conv_out_size(ow, k, stride, pad) != wd)
    throw ShapeError("conv_transpose2d: inconsistent output padding");
  const int kr = geom->patch_rows();
  const int block = geom->block_rows();
  const std::size_t in_plane = static_cast<std::size_t>(cin) * h * wd;
  const std::size_t out_plane = static_cast<std::size_t>(cout) * oh * ow;

  std::vector<T> out(static_cast<std::size_t>(n) * out_plane, T(0));
  std::vector<T> col(static_cast<std::size_t>(kr) * block * wd);
  for (int img = 0; img < n; ++img) {
    const T* xin = x.values().data() + img * in_plane;
    T* y = out.data() + img * out_plane;
    for (int r0 = 0; r0 < h; r0 += block) {
      const int r1 = std::min(h, r0 + block);
      const int cols = (r1 - r0) * wd;
      detail::gemm<T>(true, false, kr, cols, cin, T(1), w.values().data(), kr, xin + r0 * wd,
                      h * wd, T(0), col.data(), cols);
      geom->col2im(col.data(), r0, r1, y);
    }
    if (b.defined())
      for (int c = 0; c < cout; ++c) {
        T* plane = y + static_cast<std::size_t>(c) * oh * ow;
        const T bc = b.values()[static_cast<std::size_t>(c)];
        for (int i = 0; i < oh * ow; ++i) plane[i] += bc;
      }
  }

  auto xn = x.node_ptr(), wn = w.node_ptr(), bn = b.node_ptr();
  return detail::make_result<T>(
      {static_cast<std::size_t>(n), static_cast<std::size_t>(cout), static_cast<std::size_t>(oh),
       static_cast<std::size_t>(ow)},
      std::move(out), {x, w, b},
      [=](Node<T>& self) {
        std::vector<T> colbuf(static_cast<std::size_t>(kr) * block * wd);
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        for (int img = 0; img < n; ++img) {
          const T* gy = self.grad.data() + img * out_plane;
          for (int r0 = 0; r0 < h; r0 += block) {
            const int r1 = std::min(h, r0 + block);
            const int cols = (r1 - r0) * wd;
            geom->im2col(gy, r0, r1, colbuf.data());
            if (xn->requires_grad)
              detail::gemm<T>(false, false, cin, cols, kr, T(1), wn->value.data(), kr,
                              colbuf.data(), cols, T(1), xn->grad.data() + img * in_plane + r0 * wd,
                              h * wd);
            if (wn->requires_grad)
              detail::gemm<T>(false, true, cin, kr, cols, T(1),
                              xn->value.data() + img * in_plane + r0 * wd, h * wd, colbuf.data(),
                              cols, T(1), wn->grad.data(), kr);
          }
          if (bn && bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (int c = 0; c < cout; ++c) {
              const T* plane = gy + static_cast<std::size_t>(c) * oh * ow;
              T s = 0;
              for (int i = 0; i < oh * ow; ++i) s += plane[i];
              gb[static_cast<std::size_t>(c)] += s;
            }
          }
        }
      });
}

}  // namespace fclgan
