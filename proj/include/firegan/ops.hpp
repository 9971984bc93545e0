#pragma once

// Differentiable operations on Var<T>.

#include <array>
#include <cmath>
#include <optional>

#include "firegan/autograd.hpp"
#include "firegan/conv.hpp"

namespace firegan::ops {

namespace detail {

template <typename T>
void accumulate(const Var<T>& v, const Tensor<T>& g) {
  if (v.requires_grad()) v.node()->accumulate(g);
}

template <typename T, typename F>
Var<T> unary(const Var<T>& a, F&& f, std::function<Tensor<T>(const Tensor<T>&)> grad_fn) {
  Tensor<T> out(a.shape());
  const auto& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Var<T>::make(std::move(out), {a}, [a, grad_fn](const Tensor<T>& g) {
    if (a.requires_grad()) detail::accumulate(a, grad_fn(g));
  });
}

inline void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + " expects NCHW, got " + shape_str(s));
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  return Var<T>::make(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    detail::accumulate(a, g);
    detail::accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    detail::accumulate(a, g);
    if (b.requires_grad()) {
      Tensor<T> neg = g;
      for (auto& v : neg.values()) v = -v;
      detail::accumulate(b, neg);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T k) {
  return detail::unary<T>(a, [k](T v) { return v * k; }, [k](const Tensor<T>& g) {
    Tensor<T> r = g;
    for (auto& v : r.values()) v *= k;
    return r;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T k) {
  return detail::unary<T>(a, [k](T v) { return v + k; }, [](const Tensor<T>& g) { return g; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return detail::unary<T>(a, [](T v) { return v * v; }, [a](const Tensor<T>& g) {
    Tensor<T> r = g;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] *= T{2} * a.value()[i];
    return r;
  });
}

// sqrt(a + eps), eps keeps the derivative bounded at zero.
template <typename T>
Var<T> sqrt_eps(const Var<T>& a, T eps) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.value()[i] + eps);
  Tensor<T> root = out;
  return Var<T>::make(std::move(out), {a}, [a, root](const Tensor<T>& g) {
    Tensor<T> r = g;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] /= T{2} * root[i];
    detail::accumulate(a, r);
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return detail::unary<T>(a, [slope](T v) { return v > T{0} ? v : slope * v; },
                          [a, slope](const Tensor<T>& g) {
                            Tensor<T> r = g;
                            for (std::size_t i = 0; i < r.size(); ++i)
                              if (!(a.value()[i] > T{0})) r[i] *= slope;
                            return r;
                          });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return leaky_relu(a, T{0});
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.value()[i]);
  Tensor<T> y = out;
  return Var<T>::make(std::move(out), {a}, [a, y](const Tensor<T>& g) {
    Tensor<T> r = g;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] *= T{1} - y[i] * y[i];
    detail::accumulate(a, r);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s{0};
  for (T v : a.value().values()) s += v;
  return Var<T>::make(Tensor<T>::scalar(s), {a}, [a](const Tensor<T>& g) {
    detail::accumulate(a, Tensor<T>(a.shape(), g[0]));
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.value().size());
  return scale(sum(a), T{1} / n);
}

// (N, ...) -> (N): arithmetic mean over everything but the batch axis.
template <typename T>
Var<T> per_sample_mean(const Var<T>& a) {
  const std::size_t n = a.shape().at(0);
  const std::size_t per = a.value().size() / n;
  Tensor<T> out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    T s{0};
    for (std::size_t j = 0; j < per; ++j) s += a.value()[i * per + j];
    out[i] = s / static_cast<T>(per);
  }
  return Var<T>::make(std::move(out), {a}, [a, n, per](const Tensor<T>& g) {
    Tensor<T> r(a.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < per; ++j) r[i * per + j] = g[i] / static_cast<T>(per);
    detail::accumulate(a, r);
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  detail::require_rank4(a.shape(), "concat_channels");
  detail::require_rank4(b.shape(), "concat_channels");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w())
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t N = av.n(), ca = av.c(), cb = bv.c(), hw = av.h() * av.w();
  Tensor<T> out(Shape{N, ca + cb, av.h(), av.w()});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(av.data() + n * ca * hw, ca * hw, out.data() + n * (ca + cb) * hw);
    std::copy_n(bv.data() + n * cb * hw, cb * hw, out.data() + (n * (ca + cb) + ca) * hw);
  }
  return Var<T>::make(std::move(out), {a, b}, [a, b, N, ca, cb, hw](const Tensor<T>& g) {
    if (a.requires_grad()) {
      Tensor<T> ga(a.shape());
      for (std::size_t n = 0; n < N; ++n)
        std::copy_n(g.data() + n * (ca + cb) * hw, ca * hw, ga.data() + n * ca * hw);
      detail::accumulate(a, ga);
    }
    if (b.requires_grad()) {
      Tensor<T> gb(b.shape());
      for (std::size_t n = 0; n < N; ++n)
        std::copy_n(g.data() + (n * (ca + cb) + ca) * hw, cb * hw, gb.data() + n * cb * hw);
      detail::accumulate(b, gb);
    }
  });
}

template <typename T>
Var<T> concat_batch(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
    throw ShapeError("concat_batch: " + shape_str(sa) + " vs " + shape_str(sb));
  Shape so = sa;
  so[0] += sb[0];
  Tensor<T> out(so);
  std::copy(a.value().values().begin(), a.value().values().end(), out.data());
  std::copy(b.value().values().begin(), b.value().values().end(), out.data() + a.value().size());
  const std::size_t split = a.value().size();
  return Var<T>::make(std::move(out), {a, b}, [a, b, split](const Tensor<T>& g) {
    if (a.requires_grad())
      detail::accumulate(a, Tensor<T>(a.shape(), std::vector<T>(g.data(), g.data() + split)));
    if (b.requires_grad())
      detail::accumulate(b, Tensor<T>(b.shape(), std::vector<T>(g.data() + split,
                                                                g.data() + g.size())));
  });
}

template <typename T>
Var<T> slice_batch(const Var<T>& a, std::size_t start, std::size_t count) {
  const Shape& s = a.shape();
  if (start + count > s.at(0)) throw ShapeError("slice_batch out of range");
  const std::size_t per = a.value().size() / s[0];
  Shape so = s;
  so[0] = count;
  Tensor<T> out(so, std::vector<T>(a.value().data() + start * per,
                                   a.value().data() + (start + count) * per));
  return Var<T>::make(std::move(out), {a}, [a, start, per](const Tensor<T>& g) {
    Tensor<T> r(a.shape());
    std::copy(g.values().begin(), g.values().end(), r.data() + start * per);
    detail::accumulate(a, r);
  });
}

// 2D convolution. x: (N, Cin, H, W); weight: (Cout, Cin, k, k); bias: (Cout) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad) {
  detail::require_rank4(x.shape(), "conv2d");
  const auto& xv = x.value();
  const auto& wv = weight.value();
  if (wv.rank() != 4 || wv.dim(1) != xv.c() || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " +
                     shape_str(xv.shape()));
  const auto g = conv::make_geometry(xv.c(), xv.h(), xv.w(), wv.dim(0), wv.dim(2), stride, pad);
  const std::size_t N = xv.n();
  Tensor<T> out(Shape{N, g.out_c, g.out_h, g.out_w});
  conv::forward(xv.data(), N, g, wv.data(), out.data());
  const bool has_bias = bias.defined();
  if (has_bias) {
    const std::size_t P = g.out_pixels();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < g.out_c; ++c) {
        T* plane = out.data() + (n * g.out_c + c) * P;
        const T b = bias.value()[c];
        for (std::size_t p = 0; p < P; ++p) plane[p] += b;
      }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Var<T>::make(std::move(out), std::move(inputs), [x, weight, bias, g, N, has_bias](
                                                             const Tensor<T>& gy) {
    if (x.requires_grad())
      conv::backward_input(gy.data(), N, g, weight.value().data(),
                           x.node()->grad_buffer().data());
    if (weight.requires_grad())
      conv::backward_weight(x.value().data(), gy.data(), N, g,
                            weight.node()->grad_buffer().data());
    if (has_bias && bias.requires_grad()) {
      T* gb = bias.node()->grad_buffer().data();
      const std::size_t P = g.out_pixels();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < g.out_c; ++c) {
          const T* plane = gy.data() + (n * g.out_c + c) * P;
          T s{0};
          for (std::size_t p = 0; p < P; ++p) s += plane[p];
          gb[c] += s;
        }
    }
  });
}

// Transposed convolution, the adjoint of conv2d. weight: (Cin, Cout, k, k).
// Output extent is (in - 1) * stride - 2 * pad + k.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        std::size_t stride, std::size_t pad) {
  detail::require_rank4(x.shape(), "conv_transpose2d");
  const auto& xv = x.value();
  const auto& wv = weight.value();
  if (wv.rank() != 4 || wv.dim(0) != xv.c() || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv_transpose2d: weight " + shape_str(wv.shape()) +
                     " incompatible with input " + shape_str(xv.shape()));
  const std::size_t k = wv.dim(2);
  if ((xv.h() - 1) * stride + k < 2 * pad + 1 || (xv.w() - 1) * stride + k < 2 * pad + 1)
    throw ShapeError("conv_transpose2d: padding too large");
  const std::size_t oh = (xv.h() - 1) * stride + k - 2 * pad;
  const std::size_t ow = (xv.w() - 1) * stride + k - 2 * pad;
  // Geometry of the equivalent forward convolution (oh x ow -> h x w).
  conv::Geometry g;
  g.in_c = wv.dim(1);
  g.in_h = oh;
  g.in_w = ow;
  g.out_c = wv.dim(0);
  g.out_h = xv.h();
  g.out_w = xv.w();
  g.kernel = k;
  g.stride = stride;
  g.pad = pad;
  if (conv::conv_out_extent(oh, k, stride, pad) != xv.h() ||
      conv::conv_out_extent(ow, k, stride, pad) != xv.w())
    throw ShapeError("conv_transpose2d: inconsistent geometry");
  const std::size_t N = xv.n();
  Tensor<T> out(Shape{N, g.in_c, oh, ow});
  conv::backward_input(xv.data(), N, g, wv.data(), out.data());
  const bool has_bias = bias.defined();
  if (has_bias) {
    const std::size_t P = oh * ow;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < g.in_c; ++c) {
        T* plane = out.data() + (n * g.in_c + c) * P;
        const T b = bias.value()[c];
        for (std::size_t p = 0; p < P; ++p) plane[p] += b;
      }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Var<T>::make(std::move(out), std::move(inputs), [x, weight, bias, g, N, has_bias](
                                                             const Tensor<T>& gy) {
    if (x.requires_grad()) {
      Tensor<T> tmp(x.shape());
      conv::forward(gy.data(), N, g, weight.value().data(), tmp.data());
      detail::accumulate(x, tmp);
    }
    if (weight.requires_grad())
      conv::backward_weight(gy.data(), x.value().data(), N, g,
                            weight.node()->grad_buffer().data());
    if (has_bias && bias.requires_grad()) {
      T* gb = bias.node()->grad_buffer().data();
      const std::size_t P = g.in_pixels();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < g.in_c; ++c) {
          const T* plane = gy.data() + (n * g.in_c + c) * P;
          T s{0};
          for (std::size_t p = 0; p < P; ++p) s += plane[p];
          gb[c] += s;
        }
    }
  });
}

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

// Per-channel feature normalization. With use_batch_stats the batch moments
// are used (and, if update_running, folded into the running estimates);
// otherwise the running estimates are applied as constants.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, bool use_batch_stats, bool update_running) {
  detail::require_rank4(x.shape(), "batch_norm");
  const auto& xv = x.value();
  const std::size_t N = xv.n(), C = xv.c(), P = xv.h() * xv.w();
  const std::size_t count = N * P;
  std::vector<T> mean(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (use_batch_stats) {
      T s{0};
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(count);
      T ss{0};
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const T var = ss / static_cast<T>(count);
      mean[c] = mu;
      inv_std[c] = T{1} / std::sqrt(var + state.eps);
      if (update_running) {
        const T unbiased = count > 1 ? ss / static_cast<T>(count - 1) : var;
        state.running_mean[c] = (T{1} - state.momentum) * state.running_mean[c] +
                                state.momentum * mu;
        state.running_var[c] = (T{1} - state.momentum) * state.running_var[c] +
                               state.momentum * unbiased;
      }
    } else {
      mean[c] = state.running_mean[c];
      inv_std[c] = T{1} / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * P;
      const T gm = gamma.value()[c], bt = beta.value()[c];
      for (std::size_t i = 0; i < P; ++i) {
        const T h = (xv[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gm * h + bt;
      }
    }
  return Var<T>::make(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, N, C, P, count,
       use_batch_stats](const Tensor<T>& g) {
        std::vector<T> sum_g(C, T{0}), sum_gx(C, T{0});
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              sum_g[c] += g[off + i];
              sum_gx[c] += g[off + i] * xhat[off + i];
            }
          }
        if (gamma.requires_grad()) {
          Tensor<T>& gg = gamma.node()->grad_buffer();
          for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
        }
        if (beta.requires_grad()) {
          Tensor<T>& gb = beta.node()->grad_buffer();
          for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
        }
        if (!x.requires_grad()) return;
        Tensor<T>& gx = x.node()->grad_buffer();
        const T m = static_cast<T>(count);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * P;
            const T k = gamma.value()[c] * inv_std[c];
            for (std::size_t i = 0; i < P; ++i) {
              if (use_batch_stats) {
                gx[off + i] += k * (g[off + i] - sum_g[c] / m - xhat[off + i] * sum_gx[c] / m);
              } else {
                gx[off + i] += k * g[off + i];
              }
            }
          }
      });
}

// 3x3 fixed stencil applied independently per channel with edge replication,
// so constant images map to zero for any zero-sum stencil.
template <typename T>
Var<T> stencil3x3(const Var<T>& x, const std::array<T, 9>& k) {
  detail::require_rank4(x.shape(), "stencil3x3");
  const auto& xv = x.value();
  const std::size_t N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
  auto clampi = [](std::ptrdiff_t v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(hi) - 1));
  };
  Tensor<T> out(xv.shape());
  for (std::size_t p = 0; p < N * C; ++p) {
    const T* src = xv.data() + p * H * W;
    T* dst = out.data() + p * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        T s{0};
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const T kv = k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)];
            if (kv == T{0}) continue;
            s += kv * src[clampi(static_cast<std::ptrdiff_t>(y) + dy, H) * W +
                          clampi(static_cast<std::ptrdiff_t>(xx) + dx, W)];
          }
        dst[y * W + xx] = s;
      }
  }
  return Var<T>::make(std::move(out), {x}, [x, k, N, C, H, W, clampi](const Tensor<T>& g) {
    Tensor<T>& gx = x.node()->grad_buffer();
    for (std::size_t p = 0; p < N * C; ++p) {
      const T* gsrc = g.data() + p * H * W;
      T* gdst = gx.data() + p * H * W;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const T gv = gsrc[y * W + xx];
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const T kv = k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)];
              if (kv == T{0}) continue;
              gdst[clampi(static_cast<std::ptrdiff_t>(y) + dy, H) * W +
                   clampi(static_cast<std::ptrdiff_t>(xx) + dx, W)] += kv * gv;
            }
        }
    }
  });
}

// Power iteration on W viewed as (rows x cols). u (rows) is updated in place.
// Returns (sigma, v) with sigma = u^T W v.
template <typename T>
std::pair<T, std::vector<T>> power_iteration(const Tensor<T>& weight, std::size_t rows,
                                             Tensor<T>& u, std::size_t iterations) {
  const std::size_t cols = weight.size() / rows;
  conv::ConstMap<T> W(weight.data(), static_cast<Eigen::Index>(rows),
                      static_cast<Eigen::Index>(cols));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> uvec(u.data(), static_cast<Eigen::Index>(rows));
  Eigen::Matrix<T, Eigen::Dynamic, 1> v = W.transpose() * uvec;
  const T tiny = T(1e-12);
  v /= std::max(v.norm(), tiny);
  for (std::size_t it = 0; it < iterations; ++it) {
    Eigen::Matrix<T, Eigen::Dynamic, 1> wu = W * v;
    uvec = wu / std::max(wu.norm(), tiny);
    v = W.transpose() * uvec;
    v /= std::max(v.norm(), tiny);
  }
  const T sigma = uvec.dot(W * v);
  return {sigma, std::vector<T>(v.data(), v.data() + v.size())};
}

// W / sigma(W), sigma estimated by power iteration from the persisted left
// singular vector u. The singular vectors are treated as constants in the
// backward pass: dL/dW = G / sigma - <G, W> / sigma^2 * u v^T.
template <typename T>
Var<T> spectral_normalize(const Var<T>& weight, Tensor<T>& u, std::size_t iterations,
                          bool update_u) {
  const std::size_t rows = weight.shape().at(0);
  Tensor<T> u_work = u;
  auto [sigma, v] = power_iteration(weight.value(), rows, u_work, iterations);
  if (update_u) u = u_work;
  if (!(sigma > T{0}) || !std::isfinite(sigma))
    throw NumericError("spectral normalization: non-positive singular value estimate");
  Tensor<T> out = weight.value();
  for (auto& val : out.values()) val /= sigma;
  return Var<T>::make(std::move(out), {weight}, [weight, sigma, uu = u_work, v, rows](
                                                    const Tensor<T>& g) {
    const auto& W = weight.value();
    const std::size_t cols = W.size() / rows;
    T inner{0};
    for (std::size_t i = 0; i < W.size(); ++i) inner += g[i] * W[i];
    Tensor<T> r(W.shape());
    const T a = T{1} / sigma;
    const T b = inner / (sigma * sigma);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        r[i * cols + j] = g[i * cols + j] * a - b * uu[i] * v[j];
    detail::accumulate(weight, r);
  });
}

}  // namespace firegan::ops
