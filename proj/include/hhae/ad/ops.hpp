#pragma once

// Differentiable tensor operations. Layout conventions:
//   * sequences are (channels, length); graph features are (channels, joints, length);
//   * "channel" ops broadcast a per-channel vector over every trailing axis;
//   * pooling / upsampling ops act on the last axis.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "hhae/ad/tensor.hpp"

namespace hhae::ad {

namespace detail {

template <class T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T, class F, class DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < xv.size(); ++i) y.data[i] = f(xv[i]);
  return make_result<T>(std::move(y), {x}, [x, df](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto gx = x.grad();
    const auto& xv = x.value().data;
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += out.grad[i] * df(xv[i], out.value.data[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "add");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += b.value().data[i];
  return make_result<T>(std::move(y), {a, b}, [a, b](Node<T>& out) {
    if (a.requires_grad()) {
      auto g = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "sub");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] -= b.value().data[i];
  return make_result<T>(std::move(y), {a, b}, [a, b](Node<T>& out) {
    if (a.requires_grad()) {
      auto g = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "mul");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= b.value().data[i];
  return make_result<T>(std::move(y), {a, b}, [a, b](Node<T>& out) {
    if (a.requires_grad()) {
      auto g = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * b.value().data[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * a.value().data[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T k) {
  return detail::unary<T>(x, [k](T v) { return v * k; }, [k](T, T) { return k; });
}

template <class T>
Var<T> add_const(const Var<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> silu(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> exp(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// Same value, no gradient path back to `x`.
template <class T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size()) throw ShapeMismatch("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> y(std::move(shape), x.value().data);
  return make_result<T>(std::move(y), {x}, [x](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

/// Rows [begin, end) of the leading axis.
template <class T>
Var<T> slice0(const Var<T>& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.dim(0)) throw ShapeMismatch("slice0 out of range on " + shape_str(x.shape()));
  const std::size_t inner = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = end - begin;
  Tensor<T> y(s);
  std::copy(x.value().data.begin() + begin * inner, x.value().data.begin() + end * inner, y.data.begin());
  return make_result<T>(std::move(y), {x}, [x, begin, inner](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t i = 0; i < out.grad.size(); ++i) g[begin * inner + i] += out.grad[i];
  });
}

/// Concatenation along the leading axis.
template <class T>
Var<T> concat0(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeMismatch("concat0 of nothing");
  Shape s = xs[0].shape();
  std::size_t rows = 0;
  for (const auto& x : xs) {
    Shape t = x.shape();
    t[0] = s[0];
    if (t != s) throw ShapeMismatch("concat0 trailing shapes differ");
    rows += x.dim(0);
  }
  s[0] = rows;
  Tensor<T> y(s);
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.value().data.begin(), x.value().data.end(), y.data.begin() + off);
    off += x.size();
  }
  return make_result<T>(std::move(y), xs, [xs](Node<T>& out) {
    std::size_t off = 0;
    for (const auto& x : xs) {
      if (x.requires_grad()) {
        auto g = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[off + i];
      }
      off += x.size();
    }
  });
}

/// Swaps the two leading axes of a rank-3 tensor.
template <class T>
Var<T> permute01(const Var<T>& x) {
  if (x.shape().size() != 3) throw ShapeMismatch("permute01 needs rank 3");
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
  Tensor<T> y({B, A, C});
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) y.at(b, a, c) = x.value().at(a, b, c);
  return make_result<T>(std::move(y), {x}, [x, A, B, C](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) g[(a * B + b) * C + c] += out.grad[(b * A + a) * C + c];
  });
}

/// Column `t` of a (rows, cols) matrix as a vector.
template <class T>
Var<T> column(const Var<T>& x, std::size_t t) {
  const std::size_t R = x.dim(0), C = x.dim(1);
  if (t >= C) throw ShapeMismatch("column index out of range");
  Tensor<T> y({R});
  for (std::size_t r = 0; r < R; ++r) y.data[r] = x.value().data[r * C + t];
  return make_result<T>(std::move(y), {x}, [x, t, R, C](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t r = 0; r < R; ++r) g[r * C + t] += out.grad[r];
  });
}

/// Stacks equal-length vectors as the columns of a (rows, n) matrix.
template <class T>
Var<T> stack_columns(const std::vector<Var<T>>& cols) {
  if (cols.empty()) throw ShapeMismatch("stack_columns of nothing");
  const std::size_t R = cols[0].size(), C = cols.size();
  Tensor<T> y({R, C});
  for (std::size_t c = 0; c < C; ++c) {
    if (cols[c].size() != R) throw ShapeMismatch("stack_columns length mismatch");
    for (std::size_t r = 0; r < R; ++r) y.data[r * C + c] = cols[c].value().data[r];
  }
  return make_result<T>(std::move(y), cols, [cols, R, C](Node<T>& out) {
    for (std::size_t c = 0; c < C; ++c) {
      if (!cols[c].requires_grad()) continue;
      auto g = cols[c].grad();
      for (std::size_t r = 0; r < R; ++r) g[r] += out.grad[r * C + c];
    }
  });
}

/// y = x + b[c] broadcast over all trailing axes of x (leading axis = channel).
template <class T>
Var<T> add_channel(const Var<T>& x, const Var<T>& b) {
  const std::size_t C = x.dim(0), inner = x.size() / C;
  if (b.size() != C) throw ShapeMismatch("add_channel: bias " + shape_str(b.shape()) + " vs " + shape_str(x.shape()));
  Tensor<T> y = x.value();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < inner; ++i) y.data[c * inner + i] += b.value().data[c];
  return make_result<T>(std::move(y), {x, b}, [x, b, C, inner](Node<T>& out) {
    if (x.requires_grad()) {
      auto g = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t c = 0; c < C; ++c) {
        T s = 0;
        for (std::size_t i = 0; i < inner; ++i) s += out.grad[c * inner + i];
        g[c] += s;
      }
    }
  });
}

/// y = x * s[c] broadcast over all trailing axes of x.
template <class T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& s) {
  const std::size_t C = x.dim(0), inner = x.size() / C;
  if (s.size() != C) throw ShapeMismatch("mul_channel: scale " + shape_str(s.shape()) + " vs " + shape_str(x.shape()));
  Tensor<T> y = x.value();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < inner; ++i) y.data[c * inner + i] *= s.value().data[c];
  return make_result<T>(std::move(y), {x, s}, [x, s, C, inner](Node<T>& out) {
    if (x.requires_grad()) {
      auto g = x.grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < inner; ++i) g[c * inner + i] += out.grad[c * inner + i] * s.value().data[c];
    }
    if (s.requires_grad()) {
      auto g = s.grad();
      for (std::size_t c = 0; c < C; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < inner; ++i) acc += out.grad[c * inner + i] * x.value().data[c * inner + i];
        g[c] += acc;
      }
    }
  });
}

/// Dense layer on a vector: y = W x + b, W is (out, in). `b` may be undefined.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
  const std::size_t O = W.dim(0), I = W.dim(1);
  if (x.size() != I) throw ShapeMismatch("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(W.shape()));
  Tensor<T> y({O});
  const T* w = W.value().data.data();
  const T* xv = x.value().data.data();
  for (std::size_t o = 0; o < O; ++o) {
    T s = b.defined() ? b.value().data[o] : T(0);
    for (std::size_t i = 0; i < I; ++i) s += w[o * I + i] * xv[i];
    y.data[o] = s;
  }
  auto bw = [x, W, b, O, I](Node<T>& out) {
    const T* gy = out.grad.data();
    if (x.requires_grad()) {
      auto g = x.grad();
      const T* w = W.value().data.data();
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < I; ++i) g[i] += w[o * I + i] * gy[o];
    }
    if (W.requires_grad()) {
      auto g = W.grad();
      const T* xv = x.value().data.data();
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < I; ++i) g[o * I + i] += gy[o] * xv[i];
    }
    if (b.defined() && b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t o = 0; o < O; ++o) g[o] += gy[o];
    }
  };
  if (b.defined()) return make_result<T>(std::move(y), {x, W, b}, bw);
  return make_result<T>(std::move(y), {x, W}, bw);
}

/// 1-D convolution, stride 1. x (Cin, L), W (Cout, Cin, K), b (Cout) or undefined.
/// Output length L + 2*pad - K + 1.
template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& W, const Var<T>& b, std::size_t pad) {
  if (x.shape().size() != 2 || W.shape().size() != 3 || W.dim(1) != x.dim(0))
    throw ShapeMismatch("conv1d: input " + shape_str(x.shape()) + " vs weight " + shape_str(W.shape()));
  const std::size_t Cin = x.dim(0), L = x.dim(1), Cout = W.dim(0), K = W.dim(2);
  if (L + 2 * pad < K) throw ShapeMismatch("conv1d: sequence shorter than kernel");
  const std::size_t Lo = L + 2 * pad - K + 1;
  Tensor<T> y({Cout, Lo});
  const T* xv = x.value().data.data();
  const T* w = W.value().data.data();
  for (std::size_t o = 0; o < Cout; ++o) {
    T* yo = y.data.data() + o * Lo;
    if (b.defined()) std::fill(yo, yo + Lo, b.value().data[o]);
    for (std::size_t i = 0; i < Cin; ++i) {
      const T* xi = xv + i * L;
      for (std::size_t k = 0; k < K; ++k) {
        const T wk = w[(o * Cin + i) * K + k];
        // input index = l + k - pad must lie in [0, L)
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
        const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
        const std::size_t hi = std::min<std::ptrdiff_t>(Lo, static_cast<std::ptrdiff_t>(L) - shift);
        for (std::size_t l = lo; l < hi; ++l) yo[l] += wk * xi[l + shift];
      }
    }
  }
  auto bw = [x, W, b, Cin, L, Cout, K, Lo, pad](Node<T>& out) {
    const T* gy = out.grad.data();
    const T* xv = x.value().data.data();
    const T* w = W.value().data.data();
    std::span<T> gx, gw;
    if (x.requires_grad()) gx = x.grad();
    if (W.requires_grad()) gw = W.grad();
    for (std::size_t o = 0; o < Cout; ++o) {
      const T* go = gy + o * Lo;
      for (std::size_t i = 0; i < Cin; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
          const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t hi = std::min<std::ptrdiff_t>(Lo, static_cast<std::ptrdiff_t>(L) - shift);
          if (!gx.empty()) {
            const T wk = w[(o * Cin + i) * K + k];
            T* gxi = gx.data() + i * L;
            for (std::size_t l = lo; l < hi; ++l) gxi[l + shift] += wk * go[l];
          }
          if (!gw.empty()) {
            const T* xi = xv + i * L;
            T s = 0;
            for (std::size_t l = lo; l < hi; ++l) s += go[l] * xi[l + shift];
            gw[(o * Cin + i) * K + k] += s;
          }
        }
      }
    }
    if (b.defined() && b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t o = 0; o < Cout; ++o) {
        T s = 0;
        for (std::size_t l = 0; l < Lo; ++l) s += gy[o * Lo + l];
        gb[o] += s;
      }
    }
  };
  if (b.defined()) return make_result<T>(std::move(y), {x, W, b}, bw);
  return make_result<T>(std::move(y), {x, W}, bw);
}

/// Transposed 1-D convolution, stride 1, no padding. x (Cin, L), W (Cin, Cout, K).
/// Output length L + K - 1: y[o, l + k] += x[i, l] * W[i, o, k].
template <class T>
Var<T> conv_transpose1d(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
  if (x.shape().size() != 2 || W.shape().size() != 3 || W.dim(0) != x.dim(0))
    throw ShapeMismatch("conv_transpose1d: input " + shape_str(x.shape()) + " vs weight " + shape_str(W.shape()));
  const std::size_t Cin = x.dim(0), L = x.dim(1), Cout = W.dim(1), K = W.dim(2);
  const std::size_t Lo = L + K - 1;
  Tensor<T> y({Cout, Lo});
  const T* xv = x.value().data.data();
  const T* w = W.value().data.data();
  for (std::size_t o = 0; o < Cout; ++o) {
    T* yo = y.data.data() + o * Lo;
    if (b.defined()) std::fill(yo, yo + Lo, b.value().data[o]);
    for (std::size_t i = 0; i < Cin; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const T wk = w[(i * Cout + o) * K + k];
        for (std::size_t l = 0; l < L; ++l) yo[l + k] += wk * xv[i * L + l];
      }
  }
  auto bw = [x, W, b, Cin, L, Cout, K, Lo](Node<T>& out) {
    const T* gy = out.grad.data();
    const T* xv = x.value().data.data();
    const T* w = W.value().data.data();
    std::span<T> gx, gw;
    if (x.requires_grad()) gx = x.grad();
    if (W.requires_grad()) gw = W.grad();
    for (std::size_t o = 0; o < Cout; ++o)
      for (std::size_t i = 0; i < Cin; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          const T* go = gy + o * Lo + k;
          if (!gx.empty()) {
            const T wk = w[(i * Cout + o) * K + k];
            for (std::size_t l = 0; l < L; ++l) gx[i * L + l] += wk * go[l];
          }
          if (!gw.empty()) {
            T s = 0;
            for (std::size_t l = 0; l < L; ++l) s += go[l] * xv[i * L + l];
            gw[(i * Cout + o) * K + k] += s;
          }
        }
    if (b.defined() && b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t o = 0; o < Cout; ++o) {
        T s = 0;
        for (std::size_t l = 0; l < Lo; ++l) s += gy[o * Lo + l];
        gb[o] += s;
      }
    }
  };
  if (b.defined()) return make_result<T>(std::move(y), {x, W, b}, bw);
  return make_result<T>(std::move(y), {x, W}, bw);
}

/// Right-multiplies axis `axis` of x by M: y[.., m, ..] = sum_i x[.., i, ..] * M[i, m].
template <class T>
Var<T> contract(const Var<T>& x, std::size_t axis, const Var<T>& M) {
  const Shape& xs = x.shape();
  if (axis >= xs.size() || M.shape().size() != 2 || M.dim(0) != xs[axis])
    throw ShapeMismatch("contract: axis " + std::to_string(axis) + " of " + shape_str(xs) + " vs " +
                        shape_str(M.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= xs[a];
  for (std::size_t a = axis + 1; a < xs.size(); ++a) inner *= xs[a];
  const std::size_t I = M.dim(0), Mo = M.dim(1);
  Shape ys = xs;
  ys[axis] = Mo;
  Tensor<T> y(ys);
  const T* xv = x.value().data.data();
  const T* mv = M.value().data.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < I; ++i) {
      const T* xi = xv + (o * I + i) * inner;
      for (std::size_t m = 0; m < Mo; ++m) {
        const T c = mv[i * Mo + m];
        T* ym = y.data.data() + (o * Mo + m) * inner;
        for (std::size_t n = 0; n < inner; ++n) ym[n] += xi[n] * c;
      }
    }
  return make_result<T>(std::move(y), {x, M}, [x, M, outer, inner, I, Mo](Node<T>& out) {
    const T* gy = out.grad.data();
    const T* xv = x.value().data.data();
    const T* mv = M.value().data.data();
    std::span<T> gx, gm;
    if (x.requires_grad()) gx = x.grad();
    if (M.requires_grad()) gm = M.grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < I; ++i)
        for (std::size_t m = 0; m < Mo; ++m) {
          const T* gym = gy + (o * Mo + m) * inner;
          const std::size_t xoff = (o * I + i) * inner;
          if (!gx.empty()) {
            const T c = mv[i * Mo + m];
            for (std::size_t n = 0; n < inner; ++n) gx[xoff + n] += gym[n] * c;
          }
          if (!gm.empty()) {
            T s = 0;
            for (std::size_t n = 0; n < inner; ++n) s += gym[n] * xv[xoff + n];
            gm[i * Mo + m] += s;
          }
        }
  });
}

namespace detail {

// Normalizes `groups` disjoint index sets; member j of group g lives at
// index(g, j). Affine parameters are indexed by channel(g, j).
template <class T, class Index, class Channel>
Var<T> normalize_groups(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t groups,
                        std::size_t members, Index index, Channel channel, T eps) {
  Tensor<T> y(x.shape());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(groups);
  const auto& xv = x.value().data;
  for (std::size_t g = 0; g < groups; ++g) {
    T mean = 0;
    for (std::size_t j = 0; j < members; ++j) mean += xv[index(g, j)];
    mean /= static_cast<T>(members);
    T var = 0;
    for (std::size_t j = 0; j < members; ++j) {
      const T d = xv[index(g, j)] - mean;
      var += d * d;
    }
    var /= static_cast<T>(members);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[g] = is;
    for (std::size_t j = 0; j < members; ++j) {
      const std::size_t k = index(g, j);
      xhat[k] = (xv[k] - mean) * is;
      const std::size_t c = channel(g, j);
      y.data[k] = xhat[k] * gamma.value().data[c] + beta.value().data[c];
    }
  }
  return make_result<T>(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, groups, members, index, channel, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node<T>& out) {
        const auto& gy = out.grad;
        if (gamma.requires_grad() || beta.requires_grad()) {
          auto gg = gamma.requires_grad() ? gamma.grad() : std::span<T>();
          auto gb = beta.requires_grad() ? beta.grad() : std::span<T>();
          for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t j = 0; j < members; ++j) {
              const std::size_t k = index(g, j), c = channel(g, j);
              if (!gg.empty()) gg[c] += gy[k] * xhat[k];
              if (!gb.empty()) gb[c] += gy[k];
            }
        }
        if (!x.requires_grad()) return;
        auto gx = x.grad();
        const auto& gm = gamma.value().data;
        for (std::size_t g = 0; g < groups; ++g) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < members; ++j) {
            const std::size_t k = index(g, j);
            const T d = gy[k] * gm[channel(g, j)];
            mean_d += d;
            mean_dx += d * xhat[k];
          }
          mean_d /= static_cast<T>(members);
          mean_dx /= static_cast<T>(members);
          for (std::size_t j = 0; j < members; ++j) {
            const std::size_t k = index(g, j);
            const T d = gy[k] * gm[channel(g, j)];
            gx[k] += inv_std[g] * (d - mean_d - xhat[k] * mean_dx);
          }
        }
      });
}

}  // namespace detail

/// Group normalization of a (C, L) sequence; statistics per group over (C/G) x L.
template <class T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t groups, T eps = T(1e-5)) {
  const std::size_t C = x.dim(0), L = x.size() / C;
  if (groups == 0 || C % groups != 0 || gamma.size() != C || beta.size() != C)
    throw ShapeMismatch("group_norm: " + std::to_string(C) + " channels, " + std::to_string(groups) + " groups");
  const std::size_t per = C / groups;
  return detail::normalize_groups<T>(
      x, gamma, beta, groups, per * L, [per, L](std::size_t g, std::size_t j) { return g * per * L + j; },
      [per, L](std::size_t g, std::size_t j) { return g * per + j / L; }, eps);
}

/// Layer normalization over the leading (channel) axis, independently at every
/// trailing position.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const std::size_t C = x.dim(0), P = x.size() / C;
  if (gamma.size() != C || beta.size() != C) throw ShapeMismatch("layer_norm: affine size vs " + shape_str(x.shape()));
  return detail::normalize_groups<T>(
      x, gamma, beta, P, C, [P](std::size_t p, std::size_t c) { return c * P + p; },
      [](std::size_t, std::size_t c) { return c; }, eps);
}

/// Average pooling with kernel 2, stride 2 along the last axis.
template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  const std::size_t L = x.shape().back();
  if (L % 2 != 0) throw ShapeMismatch("avg_pool2 needs even length, got " + shape_str(x.shape()));
  const std::size_t outer = x.size() / L, Lo = L / 2;
  Shape s = x.shape();
  s.back() = Lo;
  Tensor<T> y(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < Lo; ++l)
      y.data[o * Lo + l] = T(0.5) * (x.value().data[o * L + 2 * l] + x.value().data[o * L + 2 * l + 1]);
  return make_result<T>(std::move(y), {x}, [x, outer, L, Lo](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < Lo; ++l) {
        const T d = T(0.5) * out.grad[o * Lo + l];
        g[o * L + 2 * l] += d;
        g[o * L + 2 * l + 1] += d;
      }
  });
}

/// Nearest-neighbour x2 upsampling along the last axis.
template <class T>
Var<T> upsample2(const Var<T>& x) {
  const std::size_t L = x.shape().back(), outer = x.size() / L;
  Shape s = x.shape();
  s.back() = 2 * L;
  Tensor<T> y(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < 2 * L; ++l) y.data[o * 2 * L + l] = x.value().data[o * L + l / 2];
  return make_result<T>(std::move(y), {x}, [x, outer, L](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < 2 * L; ++l) g[o * L + l / 2] += out.grad[o * 2 * L + l];
  });
}

/// Window [floor(i*L/M), ceil((i+1)*L/M)) of adaptive average pooling.
inline std::pair<std::size_t, std::size_t> adaptive_window(std::size_t i, std::size_t L, std::size_t M) {
  return {(i * L) / M, ((i + 1) * L + M - 1) / M};
}

/// Adaptive average pooling of the last axis to length M.
template <class T>
Var<T> adaptive_avg_pool(const Var<T>& x, std::size_t M) {
  const std::size_t L = x.shape().back(), outer = x.size() / L;
  if (M == 0) throw ShapeMismatch("adaptive_avg_pool to length 0");
  Shape s = x.shape();
  s.back() = M;
  Tensor<T> y(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < M; ++i) {
      auto [a, b] = adaptive_window(i, L, M);
      T acc = 0;
      for (std::size_t l = a; l < b; ++l) acc += x.value().data[o * L + l];
      y.data[o * M + i] = acc / static_cast<T>(b - a);
    }
  return make_result<T>(std::move(y), {x}, [x, outer, L, M](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < M; ++i) {
        auto [a, b] = adaptive_window(i, L, M);
        const T d = out.grad[o * M + i] / static_cast<T>(b - a);
        for (std::size_t l = a; l < b; ++l) g[o * L + l] += d;
      }
  });
}

/// Inverted dropout: kept entries are scaled by 1/(1-p); identity when not training.
template <class T, class Rng>
Var<T> dropout(const Var<T>& x, T p, Rng& rng, bool training) {
  if (!training || p <= T(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const T k = T(1) / (T(1) - p);
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = keep(rng) ? k : T(0);
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= mask[i];
  return make_result<T>(std::move(y), {x}, [x, mask = std::move(mask)](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * mask[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return make_result<T>(Tensor<T>({1}, std::vector<T>{s}), {x}, [x](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (auto& v : g) v += out.grad[0];
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Sum of squared entries, as a scalar.
template <class T>
Var<T> sum_squares(const Var<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v * v;
  return make_result<T>(Tensor<T>({1}, std::vector<T>{s}), {x}, [x](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    const auto& xv = x.value().data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * xv[i] * out.grad[0];
  });
}

/// Scales every column of a (rows, cols) matrix to unit Euclidean norm. Columns
/// with norm below `min_norm` are replaced by the previous column's direction
/// (or `fallback` for a leading run of degenerate columns) and carry no gradient.
/// `degenerate` is set when any replacement happened.
template <class T>
Var<T> normalize_columns(const Var<T>& x, T min_norm, const std::vector<T>& fallback, bool* degenerate = nullptr) {
  const std::size_t R = x.dim(0), C = x.dim(1);
  if (fallback.size() != R) throw ShapeMismatch("normalize_columns fallback size");
  Tensor<T> y(x.shape());
  std::vector<T> norms(C);
  std::vector<char> bad(C, 0);
  const auto& xv = x.value().data;
  bool any_bad = false;
  for (std::size_t c = 0; c < C; ++c) {
    T n2 = 0;
    for (std::size_t r = 0; r < R; ++r) n2 += xv[r * C + c] * xv[r * C + c];
    norms[c] = std::sqrt(n2);
    if (norms[c] < min_norm) {
      bad[c] = 1;
      any_bad = true;
      for (std::size_t r = 0; r < R; ++r) y.data[r * C + c] = c == 0 ? fallback[r] : y.data[r * C + c - 1];
    } else {
      for (std::size_t r = 0; r < R; ++r) y.data[r * C + c] = xv[r * C + c] / norms[c];
    }
  }
  if (degenerate) *degenerate = any_bad;
  return make_result<T>(std::move(y), {x}, [x, R, C, norms = std::move(norms), bad = std::move(bad)](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t c = 0; c < C; ++c) {
      if (bad[c]) continue;
      // d(x/|x|) = (I - y y^T) / |x|
      T dot = 0;
      for (std::size_t r = 0; r < R; ++r) dot += out.grad[r * C + c] * out.value.data[r * C + c];
      for (std::size_t r = 0; r < R; ++r)
        g[r * C + c] += (out.grad[r * C + c] - out.value.data[r * C + c] * dot) / norms[c];
    }
  });
}

}  // namespace hhae::ad

namespace hhae::ad {

/// Rows of the leading axis in the given order.
template <class T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::size_t> rows) {
  const std::size_t inner = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = rows.size();
  Tensor<T> y(s);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.dim(0)) throw ShapeMismatch("gather_rows index out of range");
    std::copy_n(x.value().data.begin() + rows[r] * inner, inner, y.data.begin() + r * inner);
  }
  return make_result<T>(std::move(y), {x}, [x, rows = std::move(rows), inner](Node<T>& out) {
    if (!x.requires_grad()) return;
    auto g = x.grad();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t i = 0; i < inner; ++i) g[rows[r] * inner + i] += out.grad[r * inner + i];
  });
}

}  // namespace hhae::ad
