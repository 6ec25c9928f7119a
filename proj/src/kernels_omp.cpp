#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <Eigen/Core>

#include "elegant/kernels.hpp"

namespace elegant::inline ELEGANT_ABI::kernels {
namespace {

using RowMatrix = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// col[(c*K + ki)*K + kj][oh*Wo + ow] = img[c][oh*s - p + ki][ow*s - p + kj]
void im2col(const real* img, int channels, int h, int w, ConvGeometry g, int ho, int wo, real* col) {
  const int k = g.kernel;
  for (int c = 0; c < channels; ++c) {
    const real* plane = img + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        real* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          real* dst = row + static_cast<std::size_t>(oh) * wo;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, real(0));
            continue;
          }
          const real* src = plane + static_cast<std::size_t>(ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : real(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col; accumulates into img.
void col2im(const real* col, int channels, int h, int w, ConvGeometry g, int ho, int wo, real* img) {
  const int k = g.kernel;
  for (int c = 0; c < channels; ++c) {
    real* plane = img + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const real* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= h) continue;
          const real* src = row + static_cast<std::size_t>(oh) * wo;
          real* dst = plane + static_cast<std::size_t>(ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void check_conv_args(const Tensor& x, const Tensor& w, int in_axis, const char* what) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError(std::string(what) + ": expected rank-4 input and weight");
  if (x.dim(1) != w.dim(in_axis))
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(1)) +
                     " channels, weight expects " + std::to_string(w.dim(in_axis)));
  if (w.dim(2) != w.dim(3)) throw ShapeError(std::string(what) + ": non-square kernel");
}

// Splits [0, rows) evenly across the current team.
std::pair<int, int> thread_rows(int rows) {
#ifdef _OPENMP
  const int t = omp_get_thread_num(), nt = omp_get_num_threads();
#else
  const int t = 0, nt = 1;
#endif
  const int chunk = (rows + nt - 1) / nt;
  const int begin = std::min(rows, t * chunk);
  return {begin, std::min(rows, begin + chunk)};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, ConvGeometry g) {
  check_conv_args(x, w, 1, "conv2d");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), k = w.dim(2);
  g.kernel = k;
  const int ho = g.conv_out(h), wo = g.conv_out(wd);
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input " + shape_string(x.shape()) + " too small");
  const int ckk = ci * k * k, p = ho * wo;
  Tensor y({n, co, ho, wo});
  ConstMatMap wm(w.data(), co, ckk);
#pragma omp parallel
  {
    std::vector<real> col(static_cast<std::size_t>(ckk) * p);
#pragma omp for schedule(static)
    for (int s = 0; s < n; ++s) {
      im2col(x.data() + static_cast<std::size_t>(s) * ci * h * wd, ci, h, wd, g, ho, wo, col.data());
      MatMap ym(y.data() + static_cast<std::size_t>(s) * co * p, co, p);
      ym.noalias() = wm * ConstMatMap(col.data(), ckk, p);
      for (int c = 0; c < co; ++c) ym.row(c).array() += b[c];
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g, Tensor* dx,
                     Tensor& dw, Tensor& db) {
  check_conv_args(x, w, 1, "conv2d_backward");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), k = w.dim(2);
  g.kernel = k;
  const int ho = g.conv_out(h), wo = g.conv_out(wd);
  if (dy.shape() != Shape{n, co, ho, wo}) throw ShapeError("conv2d_backward: bad dy shape");
  const int ckk = ci * k * k, p = ho * wo;
  ConstMatMap wm(w.data(), co, ckk);

  if (dx) {
    *dx = Tensor(x.shape());
#pragma omp parallel
    {
      std::vector<real> col(static_cast<std::size_t>(ckk) * p);
#pragma omp for schedule(static)
      for (int s = 0; s < n; ++s) {
        MatMap cm(col.data(), ckk, p);
        cm.noalias() = wm.transpose() * ConstMatMap(dy.data() + static_cast<std::size_t>(s) * co * p, co, p);
        col2im(col.data(), ci, h, wd, g, ho, wo, dx->data() + static_cast<std::size_t>(s) * ci * h * wd);
      }
    }
  }

  MatMap dwm(dw.data(), co, ckk);
#pragma omp parallel
  {
    auto [r0, r1] = thread_rows(co);
    if (r1 > r0) {
      std::vector<real> col(static_cast<std::size_t>(ckk) * p);
      for (int s = 0; s < n; ++s) {
        im2col(x.data() + static_cast<std::size_t>(s) * ci * h * wd, ci, h, wd, g, ho, wo, col.data());
        ConstMatMap dym(dy.data() + static_cast<std::size_t>(s) * co * p, co, p);
        dwm.middleRows(r0, r1 - r0).noalias() +=
            dym.middleRows(r0, r1 - r0) * ConstMatMap(col.data(), ckk, p).transpose();
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int c = 0; c < co; ++c) {
    double acc = 0;
    for (int s = 0; s < n; ++s) {
      const real* row = dy.data() + (static_cast<std::size_t>(s) * co + c) * p;
      for (int q = 0; q < p; ++q) acc += row[q];
    }
    db[c] += static_cast<real>(acc);
  }
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, ConvGeometry g) {
  check_conv_args(x, w, 0, "conv_transpose2d");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(1), k = w.dim(2);
  g.kernel = k;
  const int ho = g.transpose_out(h), wo = g.transpose_out(wd);
  if (g.conv_out(ho) != h || g.conv_out(wo) != wd)
    throw ShapeError("conv_transpose2d: geometry is not invertible for " + shape_string(x.shape()));
  const int ckk = co * k * k, p = h * wd;
  Tensor y({n, co, ho, wo});
  ConstMatMap wm(w.data(), ci, ckk);
#pragma omp parallel
  {
    std::vector<real> col(static_cast<std::size_t>(ckk) * p);
#pragma omp for schedule(static)
    for (int s = 0; s < n; ++s) {
      MatMap cm(col.data(), ckk, p);
      cm.noalias() = wm.transpose() * ConstMatMap(x.data() + static_cast<std::size_t>(s) * ci * p, ci, p);
      real* ys = y.data() + static_cast<std::size_t>(s) * co * ho * wo;
      col2im(col.data(), co, ho, wo, g, h, wd, ys);
      for (int c = 0; c < co; ++c) {
        real* plane = ys + static_cast<std::size_t>(c) * ho * wo;
        for (int q = 0; q < ho * wo; ++q) plane[q] += b[c];
      }
    }
  }
  return y;
}

void conv_transpose2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g,
                               Tensor* dx, Tensor& dw, Tensor& db) {
  check_conv_args(x, w, 0, "conv_transpose2d_backward");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(1), k = w.dim(2);
  g.kernel = k;
  const int ho = g.transpose_out(h), wo = g.transpose_out(wd);
  if (dy.shape() != Shape{n, co, ho, wo}) throw ShapeError("conv_transpose2d_backward: bad dy shape");
  const int ckk = co * k * k, p = h * wd;
  ConstMatMap wm(w.data(), ci, ckk);

  if (dx) {
    *dx = Tensor(x.shape());
#pragma omp parallel
    {
      std::vector<real> col(static_cast<std::size_t>(ckk) * p);
#pragma omp for schedule(static)
      for (int s = 0; s < n; ++s) {
        im2col(dy.data() + static_cast<std::size_t>(s) * co * ho * wo, co, ho, wo, g, h, wd, col.data());
        MatMap(dx->data() + static_cast<std::size_t>(s) * ci * p, ci, p).noalias() =
            wm * ConstMatMap(col.data(), ckk, p);
      }
    }
  }

  MatMap dwm(dw.data(), ci, ckk);
#pragma omp parallel
  {
    auto [r0, r1] = thread_rows(ci);
    if (r1 > r0) {
      std::vector<real> col(static_cast<std::size_t>(ckk) * p);
      for (int s = 0; s < n; ++s) {
        im2col(dy.data() + static_cast<std::size_t>(s) * co * ho * wo, co, ho, wo, g, h, wd, col.data());
        ConstMatMap xm(x.data() + static_cast<std::size_t>(s) * ci * p, ci, p);
        dwm.middleRows(r0, r1 - r0).noalias() +=
            xm.middleRows(r0, r1 - r0) * ConstMatMap(col.data(), ckk, p).transpose();
      }
    }
  }

  const int q = ho * wo;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < co; ++c) {
    double acc = 0;
    for (int s = 0; s < n; ++s) {
      const real* plane = dy.data() + (static_cast<std::size_t>(s) * co + c) * q;
      for (int j = 0; j < q; ++j) acc += plane[j];
    }
    db[c] += static_cast<real>(acc);
  }
}

Tensor l2_normalize(const Tensor& x, const Tensor& alpha, const Tensor& beta, real eps) {
  if (x.rank() != 4) throw ShapeError("l2_normalize expects NCHW");
  const int n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  if (static_cast<int>(alpha.numel()) != c || static_cast<int>(beta.numel()) != c)
    throw ShapeError("l2_normalize: alpha/beta length must equal channel count " + std::to_string(c));
  Tensor y(x.shape());
#pragma omp parallel for schedule(static)
  for (int s = 0; s < n; ++s) {
    const real* xs = x.data() + static_cast<std::size_t>(s) * c * p;
    real* ys = y.data() + static_cast<std::size_t>(s) * c * p;
    std::vector<real> sq(static_cast<std::size_t>(p), real(0));
    for (int ch = 0; ch < c; ++ch)
      for (int q = 0; q < p; ++q) sq[q] += xs[ch * p + q] * xs[ch * p + q];
    for (int q = 0; q < p; ++q) sq[q] = real(1) / std::max(std::sqrt(sq[q]), eps);
    for (int ch = 0; ch < c; ++ch)
      for (int q = 0; q < p; ++q) ys[ch * p + q] = xs[ch * p + q] * sq[q] * alpha[ch] + beta[ch];
  }
  return y;
}

void l2_normalize_backward(const Tensor& x, const Tensor& alpha, const Tensor& dy, real eps, Tensor& dx,
                           Tensor& dalpha, Tensor& dbeta) {
  require_same_shape(x, dy, "l2_normalize_backward");
  const int n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
  dx = Tensor(x.shape());
  // Per-sample partial sums for alpha/beta, reduced in sample order.
  std::vector<double> part_a(static_cast<std::size_t>(n) * c), part_b(static_cast<std::size_t>(n) * c);
#pragma omp parallel for schedule(static)
  for (int s = 0; s < n; ++s) {
    const std::size_t off = static_cast<std::size_t>(s) * c * p;
    const real* xs = x.data() + off;
    const real* gs = dy.data() + off;
    real* ds = dx.data() + off;
    std::vector<real> norm(static_cast<std::size_t>(p), real(0)), dot(static_cast<std::size_t>(p), real(0));
    for (int ch = 0; ch < c; ++ch)
      for (int q = 0; q < p; ++q) norm[q] += xs[ch * p + q] * xs[ch * p + q];
    for (int q = 0; q < p; ++q) norm[q] = std::sqrt(norm[q]);
    for (int ch = 0; ch < c; ++ch) {
      double sa = 0, sb = 0;
      for (int q = 0; q < p; ++q) {
        const real inv = real(1) / std::max(norm[q], eps);
        const real u = xs[ch * p + q] * inv;
        const real g = gs[ch * p + q];
        sa += static_cast<double>(g) * u;
        sb += g;
        dot[q] += u * g * alpha[ch];
      }
      part_a[static_cast<std::size_t>(s) * c + ch] = sa;
      part_b[static_cast<std::size_t>(s) * c + ch] = sb;
    }
    for (int ch = 0; ch < c; ++ch) {
      for (int q = 0; q < p; ++q) {
        const real du = gs[ch * p + q] * alpha[ch];
        if (norm[q] > eps) {
          const real inv = real(1) / norm[q];
          ds[ch * p + q] = (du - xs[ch * p + q] * inv * dot[q]) * inv;
        } else {
          ds[ch * p + q] = du / eps;
        }
      }
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    double sa = 0, sb = 0;
    for (int s = 0; s < n; ++s) {
      sa += part_a[static_cast<std::size_t>(s) * c + ch];
      sb += part_b[static_cast<std::size_t>(s) * c + ch];
    }
    dalpha[ch] += static_cast<real>(sa);
    dbeta[ch] += static_cast<real>(sb);
  }
}

Tensor leaky_relu(const Tensor& x, real slope) {
  Tensor y(x.shape());
  const std::size_t m = x.numel();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) y[i] = x[i] > 0 ? x[i] : slope * x[i];
  return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, real slope) {
  require_same_shape(x, dy, "leaky_relu_backward");
  Tensor dx(x.shape());
  const std::size_t m = x.numel();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) dx[i] = x[i] > 0 ? dy[i] : slope * dy[i];
  return dx;
}

Tensor scaled_tanh(const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t m = x.numel();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) y[i] = real(2) * std::tanh(x[i]);
  return y;
}

Tensor scaled_tanh_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "scaled_tanh_backward");
  Tensor dx(y.shape());
  const std::size_t m = y.numel();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    const real t = y[i] / real(2);
    dx[i] = dy[i] * real(2) * (real(1) - t * t);
  }
  return dx;
}

Tensor avg_pool2(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2)
    throw ShapeError("avg_pool2 needs NCHW with even spatial size, got " + shape_string(x.shape()));
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({x.dim(0), x.dim(1), h / 2, w / 2});
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < nc; ++plane) {
    const real* src = x.data() + static_cast<std::size_t>(plane) * h * w;
    real* dst = y.data() + static_cast<std::size_t>(plane) * (h / 2) * (w / 2);
    for (int i = 0; i < h / 2; ++i)
      for (int j = 0; j < w / 2; ++j)
        dst[i * (w / 2) + j] = (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] +
                                src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]) *
                               real(0.25);
  }
  return y;
}

Tensor avg_pool2_backward(const Tensor& dy) {
  const int nc = dy.dim(0) * dy.dim(1), h = dy.dim(2) * 2, w = dy.dim(3) * 2;
  Tensor dx({dy.dim(0), dy.dim(1), h, w});
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < nc; ++plane) {
    const real* src = dy.data() + static_cast<std::size_t>(plane) * (h / 2) * (w / 2);
    real* dst = dx.data() + static_cast<std::size_t>(plane) * h * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) dst[i * w + j] = src[(i / 2) * (w / 2) + j / 2] * real(0.25);
  }
  return dx;
}

}  // namespace elegant::kernels
