#pragma once

// Numeric kernels for NCHW feature maps.
//
// Two implementations share one interface:
//   elegant::kernels       OpenMP-parallel, im2col + GEMM. Used by the networks.
//   elegant::kernels::ref  naive serial loops with double accumulators. Kept
//                          as the oracle for kernel tests and the benchmark.
//
// Parallel kernels partition work by output element only (images, weight
// rows, channels), so results do not depend on the thread count.
//
// Backward functions accumulate into dw/db (+=) and overwrite dx. Passing a
// null dx skips the input gradient.

#include "elegant/tensor.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

struct ConvGeometry {
  int kernel = 4;
  int stride = 2;
  int pad = 1;

  int conv_out(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  int transpose_out(int in) const { return (in - 1) * stride - 2 * pad + kernel; }
};

namespace kernels {

// x:[N,Ci,H,W]  w:[Co,Ci,K,K]  b:[Co]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, ConvGeometry g);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g, Tensor* dx,
                     Tensor& dw, Tensor& db);

// x:[N,Ci,H,W]  w:[Ci,Co,K,K]  b:[Co]; the adjoint of conv2d in x.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, ConvGeometry g);
void conv_transpose2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g,
                               Tensor* dx, Tensor& dw, Tensor& db);

// Per spatial location: y_c = x_c / max(|x|_2, eps) * alpha_c + beta_c, the
// norm taken across channels.
Tensor l2_normalize(const Tensor& x, const Tensor& alpha, const Tensor& beta, real eps);
void l2_normalize_backward(const Tensor& x, const Tensor& alpha, const Tensor& dy, real eps, Tensor& dx,
                           Tensor& dalpha, Tensor& dbeta);

Tensor leaky_relu(const Tensor& x, real slope);
// Gradient given the pre-activation x.
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy, real slope);

// y = 2 tanh(x), range (-2, 2).
Tensor scaled_tanh(const Tensor& x);
// Gradient given the output y.
Tensor scaled_tanh_backward(const Tensor& y, const Tensor& dy);

// 2x2 average pooling, stride 2.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& dy);

namespace ref {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, ConvGeometry g);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g, Tensor* dx,
                     Tensor& dw, Tensor& db);
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, ConvGeometry g);
void conv_transpose2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, ConvGeometry g,
                               Tensor* dx, Tensor& dw, Tensor& db);
Tensor l2_normalize(const Tensor& x, const Tensor& alpha, const Tensor& beta, real eps);
void l2_normalize_backward(const Tensor& x, const Tensor& alpha, const Tensor& dy, real eps, Tensor& dx,
                           Tensor& dalpha, Tensor& dbeta);
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& dy);

}  // namespace ref
}  // namespace kernels
}  // namespace ELEGANT_ABI
}  // namespace elegant
