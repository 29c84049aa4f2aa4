#include "hqdm/nn_ops.hpp"

#include <cmath>
#include <string>

namespace hqdm {

ConvGeometry ConvGeometry::infer(const Shape& x, const Shape& w, std::size_t stride, std::size_t padding) {
  if (x.size() != 4 || w.size() != 4) {
    throw ValidationError("conv2d expects NCHW input and [C_out x C_in x L x L] kernel, got " + shape_str(x) +
                          " and " + shape_str(w));
  }
  if (w[2] != w[3]) throw ValidationError("conv2d kernel must be square, got " + shape_str(w));
  if (x[1] != w[1]) {
    throw ValidationError("conv2d channel mismatch: input " + shape_str(x) + " kernel " + shape_str(w));
  }
  if (stride == 0) throw ValidationError("conv2d stride must be positive");
  ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], stride, padding};
  if (g.in_h + 2 * padding < g.kernel || g.in_w + 2 * padding < g.kernel) {
    throw ValidationError("conv2d kernel larger than padded input");
  }
  return g;
}

template <class T>
BasicTensor<T> im2col(const BasicTensor<T>& x, const ConvGeometry& g, std::size_t n) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), L = g.kernel;
  BasicTensor<T> cols({g.patch(), oh * ow});
  const T* px = x.data().data() + n * g.in_ch * g.in_h * g.in_w;
  T* pc = cols.data().data();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ky = 0; ky < L; ++ky) {
      for (std::size_t kx = 0; kx < L; ++kx) {
        T* row = pc + ((c * L + ky) * L + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                                ix < static_cast<std::ptrdiff_t>(g.in_w);
            row[oy * ow + ox] = inside ? px[(c * g.in_h + iy) * g.in_w + ix] : T{};
          }
        }
      }
    }
  }
  return cols;
}

template Tensor im2col(const Tensor&, const ConvGeometry&, std::size_t);
template IntTensor im2col(const IntTensor&, const ConvGeometry&, std::size_t);

namespace {

// Scatter-add of a column matrix back onto one batch item of dx.
void col2im_add(const Tensor& cols, const ConvGeometry& g, std::size_t n, Tensor& dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), L = g.kernel;
  double* px = dx.data().data() + n * g.in_ch * g.in_h * g.in_w;
  const double* pc = cols.data().data();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ky = 0; ky < L; ++ky) {
      for (std::size_t kx = 0; kx < L; ++kx) {
        const double* row = pc + ((c * L + ky) * L + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            px[(c * g.in_h + iy) * g.in_w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = ConvGeometry::infer(x.shape(), w.shape(), stride, padding);
  const std::size_t plane = g.out_h() * g.out_w();
  const Tensor wf = reshape(w, {g.out_ch, g.patch()});
  Tensor y({g.batch, g.out_ch, g.out_h(), g.out_w()});
  for (std::size_t n = 0; n < g.batch; ++n) {
    const Tensor yn = matmul(wf, im2col(x, g, n));
    std::copy(yn.data().begin(), yn.data().end(), y.data().begin() + static_cast<std::ptrdiff_t>(n * g.out_ch * plane));
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding,
                            const Tensor& dy) {
  const ConvGeometry g = ConvGeometry::infer(x.shape(), w.shape(), stride, padding);
  const Shape expect{g.batch, g.out_ch, g.out_h(), g.out_w()};
  if (dy.shape() != expect) {
    throw ValidationError("conv2d_backward: upstream " + shape_str(dy.shape()) + " != " + shape_str(expect));
  }
  const std::size_t plane = g.out_h() * g.out_w();
  const Tensor wf = reshape(w, {g.out_ch, g.patch()});
  Tensor dwf({g.out_ch, g.patch()});
  Tensor dx(x.shape());
  for (std::size_t n = 0; n < g.batch; ++n) {
    const Tensor cols = im2col(x, g, n);
    const auto first = dy.data().begin() + static_cast<std::ptrdiff_t>(n * g.out_ch * plane);
    const Tensor dyn({g.out_ch, plane}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(g.out_ch * plane)));
    axpy(dwf, 1.0, matmul_nt(dyn, cols));
    col2im_add(matmul_tn(wf, dyn), g, n, dx);
  }
  return Conv2dGrads{std::move(dx), reshape(dwf, w.shape())};
}

IntTensor matmul_int(const IntTensor& a, const IntTensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ValidationError("matmul_int: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  IntTensor c({m, n});
  const std::int64_t* pa = a.data().data();
  const std::int64_t* pb = b.data().data();
  std::int64_t* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    std::int64_t* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const std::int64_t av = pa[i * k + p];
      if (av == 0) continue;
      const std::int64_t* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        std::int64_t prod = 0;
        if (__builtin_mul_overflow(av, brow[j], &prod) || __builtin_add_overflow(crow[j], prod, &crow[j])) {
          throw OverflowError("integer GEMM accumulator overflowed int64");
        }
      }
    }
  }
  return c;
}

IntTensor conv2d_int(const IntTensor& x, const IntTensor& w, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = ConvGeometry::infer(x.shape(), w.shape(), stride, padding);
  const std::size_t plane = g.out_h() * g.out_w();
  const IntTensor wf = reshape(w, {g.out_ch, g.patch()});
  IntTensor y({g.batch, g.out_ch, g.out_h(), g.out_w()});
  for (std::size_t n = 0; n < g.batch; ++n) {
    const IntTensor yn = matmul_int(wf, im2col(x, g, n));
    std::copy(yn.data().begin(), yn.data().end(), y.data().begin() + static_cast<std::ptrdiff_t>(n * g.out_ch * plane));
  }
  return y;
}

Tensor silu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / (1.0 + std::exp(-x[i]));
  return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& dy) {
  if (x.shape() != dy.shape()) throw ValidationError("silu_backward: shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-x[i]));
    dx[i] = dy[i] * sig * (1.0 + x[i] * (1.0 - sig));
  }
  return dx;
}

Tensor upsample2x(const Tensor& x) {
  if (x.rank() < 2) throw ValidationError("upsample2x needs rank >= 2");
  Shape s = x.shape();
  const std::size_t h = s[s.size() - 2], w = s.back();
  const std::size_t planes = x.size() / (h * w);
  s[s.size() - 2] = 2 * h;
  s.back() = 2 * w;
  Tensor y(s);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j) y[(p * 2 * h + i) * 2 * w + j] = x[(p * h + i / 2) * w + j / 2];
  return y;
}

Tensor upsample2x_backward(const Tensor& dy) {
  Shape s = dy.shape();
  const std::size_t h2 = s[s.size() - 2], w2 = s.back();
  if (h2 % 2 != 0 || w2 % 2 != 0) throw ValidationError("upsample2x_backward: odd spatial size");
  const std::size_t h = h2 / 2, w = w2 / 2, planes = dy.size() / (h2 * w2);
  s[s.size() - 2] = h;
  s.back() = w;
  Tensor dx(s);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j) dx[(p * h + i / 2) * w + j / 2] += dy[(p * h2 + i) * w2 + j];
  return dx;
}

}  // namespace hqdm
