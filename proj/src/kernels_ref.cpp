// Serial reference kernels. Direct loops straight from the definitions; slow
// on purpose and only used to check the parallel kernels.

#include <cmath>
#include <vector>

#include "elegant/kernels.hpp"

namespace elegant::inline ELEGANT_ABI::kernels::ref {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, ConvGeometry g) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), k = w.dim(2);
  const int ho = (h + 2 * g.pad - k) / g.stride + 1, wo = (wd + 2 * g.pad - k) / g.stride + 1;
  Tensor y({n, co, ho, wo});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          double acc = b[o];
          for (int c = 0; c < ci; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int ih = oh * g.stride - g.pad + ki, iw = ow * g.stride - g.pad + kj;
                if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                acc += static_cast<double>(x.at(s, c, ih, iw)) * w.at(o, c, ki, kj);
              }
          y.at(s, o, oh, ow) = static_cast<real>(acc);
        }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g, Tensor* dx,
                     Tensor& dw, Tensor& db) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), k = w.dim(2);
  const int ho = dy.dim(2), wo = dy.dim(3);
  std::vector<double> gx(x.numel(), 0.0), gw(w.numel(), 0.0), gb(static_cast<std::size_t>(co), 0.0);
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          const double gy = dy.at(s, o, oh, ow);
          gb[o] += gy;
          for (int c = 0; c < ci; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int ih = oh * g.stride - g.pad + ki, iw = ow * g.stride - g.pad + kj;
                if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                gw[((static_cast<std::size_t>(o) * ci + c) * k + ki) * k + kj] += gy * x.at(s, c, ih, iw);
                gx[((static_cast<std::size_t>(s) * ci + c) * h + ih) * wd + iw] += gy * w.at(o, c, ki, kj);
              }
        }
  if (dx) {
    *dx = Tensor(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) (*dx)[i] = static_cast<real>(gx[i]);
  }
  for (std::size_t i = 0; i < gw.size(); ++i) dw[i] += static_cast<real>(gw[i]);
  for (int o = 0; o < co; ++o) db[o] += static_cast<real>(gb[o]);
}

// y[s,o,ih*stride - pad + ki, ...] += x[s,c,ih,iw] * w[c,o,ki,kj]
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, ConvGeometry g) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(1), k = w.dim(2);
  const int ho = (h - 1) * g.stride - 2 * g.pad + k, wo = (wd - 1) * g.stride - 2 * g.pad + k;
  std::vector<double> acc(static_cast<std::size_t>(n) * co * ho * wo, 0.0);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < ci; ++c)
      for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < wd; ++iw)
          for (int o = 0; o < co; ++o)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int oh = ih * g.stride - g.pad + ki, ow = iw * g.stride - g.pad + kj;
                if (oh < 0 || oh >= ho || ow < 0 || ow >= wo) continue;
                acc[((static_cast<std::size_t>(s) * co + o) * ho + oh) * wo + ow] +=
                    static_cast<double>(x.at(s, c, ih, iw)) * w.at(c, o, ki, kj);
              }
  Tensor y({n, co, ho, wo});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int q = 0; q < ho * wo; ++q) {
        const std::size_t i = (static_cast<std::size_t>(s) * co + o) * ho * wo + q;
        y[i] = static_cast<real>(acc[i] + b[o]);
      }
  return y;
}

void conv_transpose2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g,
                               Tensor* dx, Tensor& dw, Tensor& db) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(1), k = w.dim(2);
  const int ho = dy.dim(2), wo = dy.dim(3);
  std::vector<double> gx(x.numel(), 0.0), gw(w.numel(), 0.0), gb(static_cast<std::size_t>(co), 0.0);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < ci; ++c)
      for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < wd; ++iw)
          for (int o = 0; o < co; ++o)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int oh = ih * g.stride - g.pad + ki, ow = iw * g.stride - g.pad + kj;
                if (oh < 0 || oh >= ho || ow < 0 || ow >= wo) continue;
                const double gy = dy.at(s, o, oh, ow);
                gx[((static_cast<std::size_t>(s) * ci + c) * h + ih) * wd + iw] += gy * w.at(c, o, ki, kj);
                gw[((static_cast<std::size_t>(c) * co + o) * k + ki) * k + kj] += gy * x.at(s, c, ih, iw);
              }
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) gb[o] += dy.at(s, o, oh, ow);
  if (dx) {
    *dx = Tensor(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) (*dx)[i] = static_cast<real>(gx[i]);
  }
  for (std::size_t i = 0; i < gw.size(); ++i) dw[i] += static_cast<real>(gw[i]);
  for (int o = 0; o < co; ++o) db[o] += static_cast<real>(gb[o]);
}

Tensor l2_normalize(const Tensor& x, const Tensor& alpha, const Tensor& beta, real eps) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y(x.shape());
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double sq = 0;
        for (int ch = 0; ch < c; ++ch) sq += static_cast<double>(x.at(s, ch, i, j)) * x.at(s, ch, i, j);
        const double denom = std::max(std::sqrt(sq), static_cast<double>(eps));
        for (int ch = 0; ch < c; ++ch)
          y.at(s, ch, i, j) = static_cast<real>(x.at(s, ch, i, j) / denom * alpha[ch] + beta[ch]);
      }
  return y;
}

void l2_normalize_backward(const Tensor& x, const Tensor& alpha, const Tensor& dy, real eps, Tensor& dx,
                           Tensor& dalpha, Tensor& dbeta) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  dx = Tensor(x.shape());
  std::vector<double> ga(static_cast<std::size_t>(c), 0.0), gb(static_cast<std::size_t>(c), 0.0);
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double sq = 0;
        for (int ch = 0; ch < c; ++ch) sq += static_cast<double>(x.at(s, ch, i, j)) * x.at(s, ch, i, j);
        const double norm = std::sqrt(sq);
        const bool guarded = norm <= eps;
        const double denom = guarded ? static_cast<double>(eps) : norm;
        // Jacobian of x/|x|: (I - u u^T)/|x|; of x/eps: I/eps.
        double dot = 0;
        for (int ch = 0; ch < c; ++ch) {
          const double u = x.at(s, ch, i, j) / denom;
          const double g = dy.at(s, ch, i, j);
          ga[ch] += g * u;
          gb[ch] += g;
          dot += u * g * alpha[ch];
        }
        for (int ch = 0; ch < c; ++ch) {
          const double du = static_cast<double>(dy.at(s, ch, i, j)) * alpha[ch];
          const double u = x.at(s, ch, i, j) / denom;
          dx.at(s, ch, i, j) = static_cast<real>(guarded ? du / denom : (du - u * dot) / denom);
        }
      }
  for (int ch = 0; ch < c; ++ch) {
    dalpha[ch] += static_cast<real>(ga[ch]);
    dbeta[ch] += static_cast<real>(gb[ch]);
  }
}

Tensor avg_pool2(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
  Tensor y({n, c, h, w});
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          double acc = 0;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) acc += x.at(s, ch, 2 * i + di, 2 * j + dj);
          y.at(s, ch, i, j) = static_cast<real>(acc / 4);
        }
  return y;
}

Tensor avg_pool2_backward(const Tensor& dy) {
  const int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  Tensor dx({n, c, 2 * h, 2 * w});
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j) dx.at(s, ch, i, j) = dy.at(s, ch, i / 2, j / 2) / 4;
  return dx;
}

}  // namespace elegant::kernels::ref
