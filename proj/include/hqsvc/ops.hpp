#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hqsvc/common.hpp"
#include "hqsvc/tensor.hpp"

namespace hqsvc {

namespace detail {

// C[m,n] (+)= opA(A) * opB(B) with k the contraction length. A is stored
// row-major as [m,k] (or [k,m] when transposed), B as [k,n] (or [n,k]).
template <typename S>
void gemm(const S* A, const S* B, S* C, int m, int n, int k, bool ta,
          bool tb, bool accumulate) {
  if (!accumulate) std::fill(C, C + static_cast<std::size_t>(m) * n, S(0));
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      const S* a = A + static_cast<std::size_t>(i) * k;
      S* c = C + static_cast<std::size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const S av = a[p];
        if (av == S(0)) continue;
        const S* b = B + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) c[j] += av * b[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      const S* a = A + static_cast<std::size_t>(i) * k;
      S* c = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const S* b = B + static_cast<std::size_t>(j) * k;
        S acc = S(0);
        for (int p = 0; p < k; ++p) acc += a[p] * b[p];
        c[j] += acc;
      }
    }
  } else if (ta && !tb) {
    for (int p = 0; p < k; ++p) {
      const S* a = A + static_cast<std::size_t>(p) * m;
      const S* b = B + static_cast<std::size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        const S av = a[i];
        if (av == S(0)) continue;
        S* c = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) c[j] += av * b[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        S acc = S(0);
        for (int p = 0; p < k; ++p)
          acc += A[static_cast<std::size_t>(p) * m + i] *
                 B[static_cast<std::size_t>(j) * k + p];
        C[static_cast<std::size_t>(i) * n + j] += acc;
      }
  }
}

}  // namespace detail

template <typename S>
Tensor<S> add(Tensor<S> a, Tensor<S> b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto out = Tensor<S>::make_op(
      a.rows(), a.cols(), {a, b}, [](TensorNode<S>& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          if (pa.requires_grad) pa.grad[i] += o.grad[i];
          if (pb.requires_grad) pb.grad[i] += o.grad[i];
        }
      });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.value()[i] = a.value()[i] + b.value()[i];
  return out;
}

template <typename S>
Tensor<S> sub(Tensor<S> a, Tensor<S> b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  auto out = Tensor<S>::make_op(
      a.rows(), a.cols(), {a, b}, [](TensorNode<S>& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          if (pa.requires_grad) pa.grad[i] += o.grad[i];
          if (pb.requires_grad) pb.grad[i] -= o.grad[i];
        }
      });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.value()[i] = a.value()[i] - b.value()[i];
  return out;
}

template <typename S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  auto out = Tensor<S>::make_op(
      a.rows(), a.cols(), {a, b}, [](TensorNode<S>& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          if (pa.requires_grad) pa.grad[i] += o.grad[i] * pb.value[i];
          if (pb.requires_grad) pb.grad[i] += o.grad[i] * pa.value[i];
        }
      });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.value()[i] = a.value()[i] * b.value()[i];
  return out;
}

template <typename S>
Tensor<S> scale(Tensor<S> a, S s) {
  auto out = Tensor<S>::make_op(
      a.rows(), a.cols(), {a}, [s](TensorNode<S>& o) {
        auto& pa = *o.parents[0];
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          pa.grad[i] += o.grad[i] * s;
      });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.value()[i] = a.value()[i] * s;
  return out;
}

template <typename S>
Tensor<S> add_scalar(Tensor<S> a, S s) {
  auto out = Tensor<S>::make_op(
      a.rows(), a.cols(), {a}, [](TensorNode<S>& o) {
        auto& pa = *o.parents[0];
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          pa.grad[i] += o.grad[i];
      });
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.value()[i] = a.value()[i] + s;
  return out;
}

// Broadcast add of a [1, C] row vector onto every row.
template <typename S>
Tensor<S> add_bias(Tensor<S> x, Tensor<S> b) {
  check(b.rows() == 1 && b.cols() == x.cols(), "add_bias: bad bias shape");
  const int rows = x.rows(), cols = x.cols();
  auto out = Tensor<S>::make_op(
      rows, cols, {x, b}, [rows, cols](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        auto& pb = *o.parents[1];
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) {
            const S g = o.grad[static_cast<std::size_t>(r) * cols + c];
            if (px.requires_grad)
              px.grad[static_cast<std::size_t>(r) * cols + c] += g;
            if (pb.requires_grad) pb.grad[c] += g;
          }
      });
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.value()[static_cast<std::size_t>(r) * cols + c] =
          x.value()[static_cast<std::size_t>(r) * cols + c] + b.value()[c];
  return out;
}

template <typename S>
Tensor<S> broadcast_rows(Tensor<S> x, int rows) {
  check(x.rows() == 1, "broadcast_rows: input must be [1, C]");
  const int cols = x.cols();
  auto out = Tensor<S>::make_op(
      rows, cols, {x}, [rows, cols](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            px.grad[c] += o.grad[static_cast<std::size_t>(r) * cols + c];
      });
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.value()[static_cast<std::size_t>(r) * cols + c] = x.value()[c];
  return out;
}

template <typename S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b, bool ta = false, bool tb = false) {
  const int m = ta ? a.cols() : a.rows();
  const int k = ta ? a.rows() : a.cols();
  const int kb = tb ? b.cols() : b.rows();
  const int n = tb ? b.rows() : b.cols();
  check(k == kb, "matmul: inner dimension mismatch");
  auto out = Tensor<S>::make_op(
      m, n, {a, b}, [m, n, k, ta, tb](TensorNode<S>& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        // dA = G B^T and dB = A^T G, rearranged per transpose flags.
        if (pa.requires_grad) {
          if (!ta)
            detail::gemm(o.grad.data(), pb.value.data(), pa.grad.data(), m, k,
                         n, false, !tb, true);
          else
            detail::gemm(pb.value.data(), o.grad.data(), pa.grad.data(), k, m,
                         n, tb, true, true);
        }
        if (pb.requires_grad) {
          if (!tb)
            detail::gemm(pa.value.data(), o.grad.data(), pb.grad.data(), k, n,
                         m, !ta, false, true);
          else
            detail::gemm(o.grad.data(), pa.value.data(), pb.grad.data(), n, k,
                         m, true, ta, true);
        }
      });
  detail::gemm(a.value().data(), b.value().data(), out.value().data(), m, n,
               k, ta, tb, false);
  return out;
}

// Same-length 1-D convolution over rows (time). x is [T, Cin], w is
// [Cout, kernel*Cin] with tap-major layout, bias optional [1, Cout].
template <typename S>
Tensor<S> conv1d(Tensor<S> x, Tensor<S> w, Tensor<S> b, int kernel,
                 int dilation = 1) {
  const int T = x.rows(), cin = x.cols();
  const int cout = w.rows();
  check(w.cols() == kernel * cin, "conv1d: weight shape mismatch");
  const bool has_bias = b.defined();
  if (has_bias)
    check(b.rows() == 1 && b.cols() == cout, "conv1d: bad bias shape");
  const int pad = ((kernel - 1) * dilation) / 2;

  std::vector<Tensor<S>> inputs = {x, w};
  if (has_bias) inputs.push_back(b);
  auto out = Tensor<S>::make_op(
      T, cout, std::move(inputs),
      [T, cin, cout, kernel, dilation, pad, has_bias](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        auto& pw = *o.parents[1];
        for (int t = 0; t < T; ++t) {
          const S* g = o.grad.data() + static_cast<std::size_t>(t) * cout;
          for (int j = 0; j < kernel; ++j) {
            const int src = t + j * dilation - pad;
            if (src < 0 || src >= T) continue;
            const S* xr = px.value.data() + static_cast<std::size_t>(src) * cin;
            for (int oc = 0; oc < cout; ++oc) {
              const S go = g[oc];
              if (go == S(0)) continue;
              const S* wr = pw.value.data() +
                            static_cast<std::size_t>(oc) * (kernel * cin) +
                            static_cast<std::size_t>(j) * cin;
              if (px.requires_grad) {
                S* xg = px.grad.data() + static_cast<std::size_t>(src) * cin;
                for (int ic = 0; ic < cin; ++ic) xg[ic] += go * wr[ic];
              }
              if (pw.requires_grad) {
                S* wg = pw.grad.data() +
                        static_cast<std::size_t>(oc) * (kernel * cin) +
                        static_cast<std::size_t>(j) * cin;
                for (int ic = 0; ic < cin; ++ic) wg[ic] += go * xr[ic];
              }
            }
          }
          if (has_bias && o.parents[2]->requires_grad) {
            S* bg = o.parents[2]->grad.data();
            for (int oc = 0; oc < cout; ++oc) bg[oc] += g[oc];
          }
        }
      });

  for (int t = 0; t < T; ++t) {
    S* y = out.value().data() + static_cast<std::size_t>(t) * cout;
    if (has_bias)
      for (int oc = 0; oc < cout; ++oc) y[oc] = b.value()[oc];
    for (int j = 0; j < kernel; ++j) {
      const int src = t + j * dilation - pad;
      if (src < 0 || src >= T) continue;
      const S* xr = x.value().data() + static_cast<std::size_t>(src) * cin;
      for (int oc = 0; oc < cout; ++oc) {
        const S* wr = w.value().data() +
                      static_cast<std::size_t>(oc) * (kernel * cin) +
                      static_cast<std::size_t>(j) * cin;
        S acc = S(0);
        for (int ic = 0; ic < cin; ++ic) acc += wr[ic] * xr[ic];
        y[oc] += acc;
      }
    }
  }
  return out;
}

// Per-channel temporal convolution; w is [C, kernel].
template <typename S>
Tensor<S> depthwise_conv1d(Tensor<S> x, Tensor<S> w, int kernel,
                           int dilation = 1) {
  const int T = x.rows(), C = x.cols();
  check(w.rows() == C && w.cols() == kernel,
        "depthwise_conv1d: weight shape mismatch");
  const int pad = ((kernel - 1) * dilation) / 2;
  auto out = Tensor<S>::make_op(
      T, C, {x, w}, [T, C, kernel, dilation, pad](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        auto& pw = *o.parents[1];
        for (int t = 0; t < T; ++t)
          for (int j = 0; j < kernel; ++j) {
            const int src = t + j * dilation - pad;
            if (src < 0 || src >= T) continue;
            for (int c = 0; c < C; ++c) {
              const S g = o.grad[static_cast<std::size_t>(t) * C + c];
              if (px.requires_grad)
                px.grad[static_cast<std::size_t>(src) * C + c] +=
                    g * pw.value[static_cast<std::size_t>(c) * kernel + j];
              if (pw.requires_grad)
                pw.grad[static_cast<std::size_t>(c) * kernel + j] +=
                    g * px.value[static_cast<std::size_t>(src) * C + c];
            }
          }
      });
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      S acc = S(0);
      for (int j = 0; j < kernel; ++j) {
        const int src = t + j * dilation - pad;
        if (src < 0 || src >= T) continue;
        acc += w.value()[static_cast<std::size_t>(c) * kernel + j] *
               x.value()[static_cast<std::size_t>(src) * C + c];
      }
      out.value()[static_cast<std::size_t>(t) * C + c] = acc;
    }
  return out;
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const auto& p : parts) {
    check(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  auto out = Tensor<S>::make_op(
      rows, cols, parts, [rows, cols](TensorNode<S>& o) {
        int base = 0;
        for (auto& p : o.parents) {
          if (p->requires_grad)
            for (int r = 0; r < rows; ++r)
              for (int c = 0; c < p->cols; ++c)
                p->grad[static_cast<std::size_t>(r) * p->cols + c] +=
                    o.grad[static_cast<std::size_t>(r) * cols + base + c];
          base += p->cols;
        }
      });
  int base = 0;
  for (const auto& p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p.cols(); ++c)
        out.value()[static_cast<std::size_t>(r) * cols + base + c] =
            p.value()[static_cast<std::size_t>(r) * p.cols() + c];
    base += p.cols();
  }
  return out;
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  const int cols = parts[0].cols();
  int rows = 0;
  for (const auto& p : parts) {
    check(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  auto out = Tensor<S>::make_op(
      rows, cols, parts, [cols](TensorNode<S>& o) {
        std::size_t base = 0;
        for (auto& p : o.parents) {
          const std::size_t n = p->numel();
          if (p->requires_grad)
            for (std::size_t i = 0; i < n; ++i) p->grad[i] += o.grad[base + i];
          base += n;
        }
      });
  std::size_t base = 0;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), out.value().begin() + base);
    base += p.numel();
  }
  return out;
}

template <typename S>
Tensor<S> slice_cols(Tensor<S> x, int c0, int c1) {
  check(0 <= c0 && c0 < c1 && c1 <= x.cols(), "slice_cols: bad range");
  const int rows = x.rows(), cols = x.cols(), w = c1 - c0;
  auto out = Tensor<S>::make_op(
      rows, w, {x}, [rows, cols, c0, w](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < w; ++c)
            px.grad[static_cast<std::size_t>(r) * cols + c0 + c] +=
                o.grad[static_cast<std::size_t>(r) * w + c];
      });
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < w; ++c)
      out.value()[static_cast<std::size_t>(r) * w + c] =
          x.value()[static_cast<std::size_t>(r) * cols + c0 + c];
  return out;
}

template <typename S>
Tensor<S> slice_rows(Tensor<S> x, int r0, int r1) {
  check(0 <= r0 && r0 < r1 && r1 <= x.rows(), "slice_rows: bad range");
  const int cols = x.cols(), h = r1 - r0;
  auto out = Tensor<S>::make_op(
      h, cols, {x}, [r0, h, cols](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        const std::size_t base = static_cast<std::size_t>(r0) * cols;
        for (std::size_t i = 0; i < static_cast<std::size_t>(h) * cols; ++i)
          px.grad[base + i] += o.grad[i];
      });
  const std::size_t base = static_cast<std::size_t>(r0) * cols;
  std::copy(x.value().begin() + base,
            x.value().begin() + base + static_cast<std::size_t>(h) * cols,
            out.value().begin());
  return out;
}

template <typename S>
Tensor<S> mean_all(Tensor<S> x) {
  const std::size_t n = x.numel();
  auto out = Tensor<S>::make_op(1, 1, {x}, [n](TensorNode<S>& o) {
    auto& px = *o.parents[0];
    const S g = o.grad[0] / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) px.grad[i] += g;
  });
  S acc = S(0);
  for (std::size_t i = 0; i < n; ++i) acc += x.value()[i];
  out.value()[0] = acc / static_cast<S>(n);
  return out;
}

template <typename S>
Tensor<S> sum_all(Tensor<S> x) {
  const std::size_t n = x.numel();
  auto out = Tensor<S>::make_op(1, 1, {x}, [n](TensorNode<S>& o) {
    auto& px = *o.parents[0];
    for (std::size_t i = 0; i < n; ++i) px.grad[i] += o.grad[0];
  });
  S acc = S(0);
  for (std::size_t i = 0; i < n; ++i) acc += x.value()[i];
  out.value()[0] = acc;
  return out;
}

template <typename S>
Tensor<S> mean_rows(Tensor<S> x) {
  const int rows = x.rows(), cols = x.cols();
  auto out = Tensor<S>::make_op(
      1, cols, {x}, [rows, cols](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            px.grad[static_cast<std::size_t>(r) * cols + c] +=
                o.grad[c] / static_cast<S>(rows);
      });
  for (int c = 0; c < cols; ++c) {
    S acc = S(0);
    for (int r = 0; r < rows; ++r)
      acc += x.value()[static_cast<std::size_t>(r) * cols + c];
    out.value()[c] = acc / static_cast<S>(rows);
  }
  return out;
}

template <typename S>
Tensor<S> mse(Tensor<S> a, Tensor<S> b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mse: shape mismatch");
  const std::size_t n = a.numel();
  auto out = Tensor<S>::make_op(1, 1, {a, b}, [n](TensorNode<S>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    const S g = o.grad[0] * S(2) / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const S d = pa.value[i] - pb.value[i];
      if (pa.requires_grad) pa.grad[i] += g * d;
      if (pb.requires_grad) pb.grad[i] -= g * d;
    }
  });
  S acc = S(0);
  for (std::size_t i = 0; i < n; ++i) {
    const S d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  out.value()[0] = acc / static_cast<S>(n);
  return out;
}

template <typename S>
Tensor<S> l1(Tensor<S> a, Tensor<S> b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "l1: shape mismatch");
  const std::size_t n = a.numel();
  auto out = Tensor<S>::make_op(1, 1, {a, b}, [n](TensorNode<S>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    const S g = o.grad[0] / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const S d = pa.value[i] - pb.value[i];
      const S s = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
      if (pa.requires_grad) pa.grad[i] += g * s;
      if (pb.requires_grad) pb.grad[i] -= g * s;
    }
  });
  S acc = S(0);
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  out.value()[0] = acc / static_cast<S>(n);
  return out;
}

namespace detail {

// y = f(x); backward uses df(x, y) so activations can reuse either side.
template <typename S, typename F, typename DF>
Tensor<S> unary_op(Tensor<S> x, F f, DF df) {
  auto out = Tensor<S>::make_op(
      x.rows(), x.cols(), {x}, [df](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          px.grad[i] += o.grad[i] * df(px.value[i], o.value[i]);
      });
  for (std::size_t i = 0; i < out.numel(); ++i) out.value()[i] = f(x.value()[i]);
  return out;
}

template <typename S>
S sigmoid_val(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                   : std::exp(x) / (S(1) + std::exp(x));
}

}  // namespace detail

template <typename S>
Tensor<S> relu(Tensor<S> x) {
  return detail::unary_op(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> sigmoid(Tensor<S> x) {
  return detail::unary_op(
      x, [](S v) { return detail::sigmoid_val(v); },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> tanh_op(Tensor<S> x) {
  return detail::unary_op(
      x, [](S v) { return std::tanh(v); },
      [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> silu(Tensor<S> x) {
  return detail::unary_op(
      x, [](S v) { return v * detail::sigmoid_val(v); },
      [](S v, S) {
        const S s = detail::sigmoid_val(v);
        return s * (S(1) + v * (S(1) - s));
      });
}

template <typename S>
Tensor<S> softplus(Tensor<S> x) {
  return detail::unary_op(
      x,
      [](S v) {
        if (v > S(30)) return v;
        if (v < S(-30)) return std::exp(v);
        return std::log1p(std::exp(v));
      },
      [](S v, S) { return detail::sigmoid_val(v); });
}

template <typename S>
Tensor<S> exp_op(Tensor<S> x) {
  return detail::unary_op(
      x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

// y = log(max(x, floor)); flat (zero gradient) below the floor.
template <typename S>
Tensor<S> log_floor(Tensor<S> x, S floor_val) {
  return detail::unary_op(
      x,
      [floor_val](S v) { return std::log(std::max(v, floor_val)); },
      [floor_val](S v, S) { return v > floor_val ? S(1) / v : S(0); });
}

template <typename S>
Tensor<S> layer_norm(Tensor<S> x, Tensor<S> gamma, Tensor<S> beta,
                     S eps = S(1e-5)) {
  const int rows = x.rows(), cols = x.cols();
  check(gamma.rows() == 1 && gamma.cols() == cols, "layer_norm: bad gamma");
  check(beta.rows() == 1 && beta.cols() == cols, "layer_norm: bad beta");

  auto xhat = std::make_shared<std::vector<S>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<S>>(rows);
  auto out = Tensor<S>::make_op(
      rows, cols, {x, gamma, beta},
      [rows, cols, xhat, inv_sigma](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        auto& pg = *o.parents[1];
        auto& pb = *o.parents[2];
        for (int r = 0; r < rows; ++r) {
          const S* xh = xhat->data() + static_cast<std::size_t>(r) * cols;
          const S* g = o.grad.data() + static_cast<std::size_t>(r) * cols;
          S gh_mean = S(0), ghx_mean = S(0);
          for (int c = 0; c < cols; ++c) {
            const S gh = g[c] * pg.value[c];
            gh_mean += gh;
            ghx_mean += gh * xh[c];
            if (pg.requires_grad) pg.grad[c] += g[c] * xh[c];
            if (pb.requires_grad) pb.grad[c] += g[c];
          }
          gh_mean /= static_cast<S>(cols);
          ghx_mean /= static_cast<S>(cols);
          if (px.requires_grad) {
            S* xg = px.grad.data() + static_cast<std::size_t>(r) * cols;
            const S is = (*inv_sigma)[r];
            for (int c = 0; c < cols; ++c) {
              const S gh = g[c] * pg.value[c];
              xg[c] += is * (gh - gh_mean - xh[c] * ghx_mean);
            }
          }
        }
      });

  for (int r = 0; r < rows; ++r) {
    const S* xr = x.value().data() + static_cast<std::size_t>(r) * cols;
    S mean = S(0);
    for (int c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<S>(cols);
    S var = S(0);
    for (int c = 0; c < cols; ++c) {
      const S d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<S>(cols);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = is;
    S* xh = xhat->data() + static_cast<std::size_t>(r) * cols;
    S* y = out.value().data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      xh[c] = (xr[c] - mean) * is;
      y[c] = xh[c] * gamma.value()[c] + beta.value()[c];
    }
  }
  return out;
}

template <typename S>
Tensor<S> softmax_rows(Tensor<S> x) {
  const int rows = x.rows(), cols = x.cols();
  auto out = Tensor<S>::make_op(
      rows, cols, {x}, [rows, cols](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        for (int r = 0; r < rows; ++r) {
          const S* y = o.value.data() + static_cast<std::size_t>(r) * cols;
          const S* g = o.grad.data() + static_cast<std::size_t>(r) * cols;
          S dot = S(0);
          for (int c = 0; c < cols; ++c) dot += g[c] * y[c];
          S* xg = px.grad.data() + static_cast<std::size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) xg[c] += y[c] * (g[c] - dot);
        }
      });
  for (int r = 0; r < rows; ++r) {
    const S* xr = x.value().data() + static_cast<std::size_t>(r) * cols;
    S* y = out.value().data() + static_cast<std::size_t>(r) * cols;
    S mx = xr[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    S sum = S(0);
    for (int c = 0; c < cols; ++c) {
      y[c] = std::exp(xr[c] - mx);
      sum += y[c];
    }
    for (int c = 0; c < cols; ++c) y[c] /= sum;
  }
  return out;
}

// Multi-head scaled dot-product attention over [T, C] with C = heads * dh.
// Composed from primitive ops so every path reuses their gradients.
template <typename S>
Tensor<S> scaled_dot_attention(Tensor<S> q, Tensor<S> k, Tensor<S> v,
                               int n_heads) {
  const int C = q.cols();
  check(C % n_heads == 0, "scaled_dot_attention: C must divide by heads");
  check(k.cols() == C && v.cols() == C && k.rows() == v.rows(),
        "scaled_dot_attention: shape mismatch");
  const int dh = C / n_heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
  std::vector<Tensor<S>> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    auto qh = slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = slice_cols(v, h * dh, (h + 1) * dh);
    auto attn = softmax_rows(scale(matmul(qh, kh, false, true), inv_sqrt));
    heads.push_back(matmul(attn, vh));
  }
  return concat_cols(heads);
}

// Gated linear unit over column halves: a * sigmoid(b).
template <typename S>
Tensor<S> glu_cols(Tensor<S> x) {
  check(x.cols() % 2 == 0, "glu_cols: odd column count");
  const int half = x.cols() / 2;
  return mul(slice_cols(x, 0, half), sigmoid(slice_cols(x, half, x.cols())));
}

// Row-wise scaling: y[r, c] = x[r, c] * v[r] with v a [R, 1] column.
template <typename S>
Tensor<S> mul_colvec(Tensor<S> x, Tensor<S> v) {
  check(v.rows() == x.rows() && v.cols() == 1, "mul_colvec: bad scale shape");
  const int rows = x.rows(), cols = x.cols();
  auto out = Tensor<S>::make_op(
      rows, cols, {x, v}, [rows, cols](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        auto& pv = *o.parents[1];
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) {
            const S g = o.grad[static_cast<std::size_t>(r) * cols + c];
            if (px.requires_grad)
              px.grad[static_cast<std::size_t>(r) * cols + c] +=
                  g * pv.value[r];
            if (pv.requires_grad)
              pv.grad[r] += g * px.value[static_cast<std::size_t>(r) * cols + c];
          }
      });
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.value()[static_cast<std::size_t>(r) * cols + c] =
          x.value()[static_cast<std::size_t>(r) * cols + c] * v.value()[r];
  return out;
}

// Linear interpolation of rows onto a new length, endpoints preserved.
template <typename S>
Tensor<S> upsample_linear(Tensor<S> x, int out_rows) {
  const int rows = x.rows(), cols = x.cols();
  check(rows >= 1 && out_rows >= 1, "upsample_linear: bad sizes");
  auto out = Tensor<S>::make_op(
      out_rows, cols, {x}, [rows, cols, out_rows](TensorNode<S>& o) {
        auto& px = *o.parents[0];
        for (int t = 0; t < out_rows; ++t) {
          const double pos =
              out_rows == 1
                  ? 0.0
                  : static_cast<double>(t) * (rows - 1) / (out_rows - 1);
          const int i0 = std::min(static_cast<int>(pos), rows - 1);
          const int i1 = std::min(i0 + 1, rows - 1);
          const S w1 = static_cast<S>(pos - i0);
          const S w0 = S(1) - w1;
          for (int c = 0; c < cols; ++c) {
            const S g = o.grad[static_cast<std::size_t>(t) * cols + c];
            px.grad[static_cast<std::size_t>(i0) * cols + c] += w0 * g;
            px.grad[static_cast<std::size_t>(i1) * cols + c] += w1 * g;
          }
        }
      });
  for (int t = 0; t < out_rows; ++t) {
    const double pos =
        out_rows == 1 ? 0.0
                      : static_cast<double>(t) * (rows - 1) / (out_rows - 1);
    const int i0 = std::min(static_cast<int>(pos), rows - 1);
    const int i1 = std::min(i0 + 1, rows - 1);
    const S w1 = static_cast<S>(pos - i0);
    const S w0 = S(1) - w1;
    for (int c = 0; c < cols; ++c)
      out.value()[static_cast<std::size_t>(t) * cols + c] =
          w0 * x.value()[static_cast<std::size_t>(i0) * cols + c] +
          w1 * x.value()[static_cast<std::size_t>(i1) * cols + c];
  }
  return out;
}

}  // namespace hqsvc
