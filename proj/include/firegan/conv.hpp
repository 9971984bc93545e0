#pragma once

// Dense 2D convolution kernels (im2col + GEMM). The transposed convolution
// is expressed through the adjoint pair conv_backward_input / conv_backward_weight.

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <vector>

#include "firegan/tensor.hpp"

namespace firegan::conv {

struct Geometry {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t out_c = 0, out_h = 0, out_w = 0;
  std::size_t kernel = 1, stride = 1, pad = 0;

  std::size_t col_rows() const { return in_c * kernel * kernel; }
  std::size_t out_pixels() const { return out_h * out_w; }
  std::size_t in_pixels() const { return in_h * in_w; }
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t pad) {
  if (in + 2 * pad < kernel)
    throw ShapeError("convolution kernel larger than padded input");
  return (in + 2 * pad - kernel) / stride + 1;
}

inline Geometry make_geometry(std::size_t in_c, std::size_t in_h, std::size_t in_w,
                              std::size_t out_c, std::size_t kernel, std::size_t stride,
                              std::size_t pad) {
  Geometry g;
  g.in_c = in_c;
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_c = out_c;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.out_h = conv_out_extent(in_h, kernel, stride, pad);
  g.out_w = conv_out_extent(in_w, kernel, stride, pad);
  return g;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

namespace detail {

// Output pixels processed per GEMM; bounds the im2col buffer to ~2M elements.
inline std::size_t chunk_pixels(const Geometry& g) {
  const std::size_t budget = std::size_t{1} << 21;
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(g.col_rows(), 1), 1,
                                 std::max<std::size_t>(g.out_pixels(), 1));
}

// col is (col_rows x count), row-major, covering output pixels [p0, p0 + count).
template <typename T>
void im2col(const T* image, const Geometry& g, std::size_t p0, std::size_t count, T* col) {
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(g.in_h);
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(g.in_w);
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const T* plane = image + c * g.in_pixels();
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * count;
        std::size_t oy = p0 / g.out_w;
        std::size_t ox = p0 % g.out_w;
        for (std::size_t j = 0; j < count; ++j) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          row[j] = (y >= 0 && y < ih && x >= 0 && x < iw) ? plane[y * iw + x] : T{0};
          if (++ox == g.out_w) {
            ox = 0;
            ++oy;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const Geometry& g, std::size_t p0, std::size_t count, T* image) {
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(g.in_h);
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(g.in_w);
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    T* plane = image + c * g.in_pixels();
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * count;
        std::size_t oy = p0 / g.out_w;
        std::size_t ox = p0 % g.out_w;
        for (std::size_t j = 0; j < count; ++j) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          if (y >= 0 && y < ih && x >= 0 && x < iw) plane[y * iw + x] += row[j];
          if (++ox == g.out_w) {
            ox = 0;
            ++oy;
          }
        }
      }
    }
  }
}

}  // namespace detail

// y[n] = W * im2col(x[n]); weight is (out_c, in_c, k, k).
template <typename T>
void forward(const T* x, std::size_t batch, const Geometry& g, const T* weight, T* y) {
  const std::size_t K = g.col_rows();
  const std::size_t P = g.out_pixels();
  const std::size_t chunk = detail::chunk_pixels(g);
  std::vector<T> col(K * chunk);
  ConstMap<T> wmat(weight, static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(K));
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xn = x + n * g.in_c * g.in_pixels();
    T* yn = y + n * g.out_c * P;
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const std::size_t count = std::min(chunk, P - p0);
      detail::im2col(xn, g, p0, count, col.data());
      ConstMap<T> cmat(col.data(), static_cast<Eigen::Index>(K),
                       static_cast<Eigen::Index>(count));
      StridedMap<T> out(yn + p0, static_cast<Eigen::Index>(g.out_c),
                        static_cast<Eigen::Index>(count),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
      out.noalias() = wmat * cmat;
    }
  }
}

// dx += adjoint of forward applied to dy.
template <typename T>
void backward_input(const T* dy, std::size_t batch, const Geometry& g, const T* weight, T* dx) {
  const std::size_t K = g.col_rows();
  const std::size_t P = g.out_pixels();
  const std::size_t chunk = detail::chunk_pixels(g);
  std::vector<T> col(K * chunk);
  ConstMap<T> wmat(weight, static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(K));
  for (std::size_t n = 0; n < batch; ++n) {
    const T* dyn = dy + n * g.out_c * P;
    T* dxn = dx + n * g.in_c * g.in_pixels();
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const std::size_t count = std::min(chunk, P - p0);
      ConstStridedMap<T> gout(dyn + p0, static_cast<Eigen::Index>(g.out_c),
                              static_cast<Eigen::Index>(count),
                              Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
      Map<T> cmat(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(count));
      cmat.noalias() = wmat.transpose() * gout;
      detail::col2im_add(col.data(), g, p0, count, dxn);
    }
  }
}

// dweight += sum_n dy[n] * im2col(x[n])^T.
template <typename T>
void backward_weight(const T* x, const T* dy, std::size_t batch, const Geometry& g, T* dweight) {
  const std::size_t K = g.col_rows();
  const std::size_t P = g.out_pixels();
  const std::size_t chunk = detail::chunk_pixels(g);
  std::vector<T> col(K * chunk);
  Map<T> dw(dweight, static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(K));
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xn = x + n * g.in_c * g.in_pixels();
    const T* dyn = dy + n * g.out_c * P;
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const std::size_t count = std::min(chunk, P - p0);
      detail::im2col(xn, g, p0, count, col.data());
      ConstMap<T> cmat(col.data(), static_cast<Eigen::Index>(K),
                       static_cast<Eigen::Index>(count));
      ConstStridedMap<T> gout(dyn + p0, static_cast<Eigen::Index>(g.out_c),
                              static_cast<Eigen::Index>(count),
                              Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
      dw.noalias() += gout * cmat.transpose();
    }
  }
}

}  // namespace firegan::conv
