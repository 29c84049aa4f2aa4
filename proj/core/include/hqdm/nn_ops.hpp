#pragma once

#include <cstddef>

#include "hqdm/tensor.hpp"

namespace hqdm {

/// NCHW convolution geometry; the kernel is square (L x L).
struct ConvGeometry {
  std::size_t batch = 1, in_ch = 1, in_h = 1, in_w = 1;
  std::size_t out_ch = 1, kernel = 1, stride = 1, padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
  std::size_t patch() const { return in_ch * kernel * kernel; }

  /// Validates x [B x C_in x h x w] against w [C_out x C_in x L x L].
  static ConvGeometry infer(const Shape& x, const Shape& w, std::size_t stride, std::size_t padding);
};

/// Lowers one batch item to a [C_in*L*L x h'*w'] column matrix (zero padding).
template <class T>
BasicTensor<T> im2col(const BasicTensor<T>& x, const ConvGeometry& g, std::size_t batch_index);

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding);

struct Conv2dGrads {
  Tensor dx;
  Tensor dw;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding,
                            const Tensor& dy);

/// Integer GEMM with int64 accumulation; overflow throws OverflowError.
IntTensor matmul_int(const IntTensor& a, const IntTensor& b);
/// Integer convolution via im2col + matmul_int.
IntTensor conv2d_int(const IntTensor& x, const IntTensor& w, std::size_t stride, std::size_t padding);

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& dy);

/// Nearest-neighbour 2x upsampling over the last two axes.
Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& dy);

}  // namespace hqdm
