#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/core/rng.hpp"
#include "mmt/numerics/kernels.hpp"
#include "mmt/numerics/tape.hpp"

// Differentiable operations over Tape values. Each op computes its output
// eagerly and records a pullback that accumulates into its inputs' gradients.

namespace mmt::num {

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::shape, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <class T>
bool any_grad(std::initializer_list<Var<T>> vs) {
  for (auto v : vs) {
    if (v.tape->requires_grad(v)) return true;
  }
  return false;
}

inline Shape with_last(Shape s, size_t last) {
  s.back() = last;
  return s;
}

}  // namespace detail

/// a[..., k] x b[k, n] -> [..., n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.dim(0)) detail::shape_error("matmul", av.shape(), bv.shape());
  const size_t m = av.rows(), k = av.cols(), n = bv.dim(1);
  Tensor<T> out(detail::with_last(av.shape(), n));
  kernels::gemm_nn(m, n, k, av.data(), bv.data(), out.data(), false);
  const bool rg = detail::any_grad({a, b});
  return tape.push(std::move(out), [a, b, m, n, k](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) kernels::gemm_nt(m, k, n, g.data(), t.value(b).data(), t.grad(a).data(), true);
    if (t.requires_grad(b)) kernels::gemm_tn(k, n, m, t.value(a).data(), g.data(), t.grad(b).data(), true);
  }, rg);
}

/// a[..., k] x b[n, k]^T -> [..., n]
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.dim(1)) detail::shape_error("matmul_nt", av.shape(), bv.shape());
  const size_t m = av.rows(), k = av.cols(), n = bv.dim(0);
  Tensor<T> out(detail::with_last(av.shape(), n));
  kernels::gemm_nt(m, n, k, av.data(), bv.data(), out.data(), false);
  const bool rg = detail::any_grad({a, b});
  return tape.push(std::move(out), [a, b, m, n, k](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) kernels::gemm_nn(m, k, n, g.data(), t.value(b).data(), t.grad(a).data(), true);
    if (t.requires_grad(b)) kernels::gemm_tn(n, k, m, g.data(), t.value(a).data(), t.grad(b).data(), true);
  }, rg);
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) detail::shape_error("add", av.shape(), bv.shape());
  Tensor<T> out = av;
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.push(std::move(out), [a, b](Tape<T>& t, const Tensor<T>& g) {
    for (auto v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      auto& gv = t.grad(v);
      for (size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  }, detail::any_grad({a, b}));
}

/// x[..., n] + bias[n]
template <class T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.rank() != 1 || bv.dim(0) != xv.cols()) detail::shape_error("add_bias", xv.shape(), bv.shape());
  Tensor<T> out = xv;
  const size_t n = xv.cols();
  for (size_t r = 0; r < xv.rows(); ++r) {
    for (size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  }
  return tape.push(std::move(out), [x, bias, n](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(x)) {
      auto& gx = t.grad(x);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(bias)) {
      auto& gb = t.grad(bias);
      const size_t rows = g.size() / n;
      for (size_t r = 0; r < rows; ++r) {
        for (size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
    }
  }, detail::any_grad({x, bias}));
}

/// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) detail::shape_error("mul", av.shape(), bv.shape());
  Tensor<T> out = av;
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.push(std::move(out), [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      auto& ga = t.grad(a);
      const auto& bv = t.value(b);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad(b);
      const auto& av = t.value(a);
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  }, detail::any_grad({a, b}));
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= s;
  return tape.push(std::move(out), [a, s](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  }, detail::any_grad({a}));
}

/// Sum of all elements -> [1]
template <class T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = *a.tape;
  T s = T(0);
  for (T v : a.value().vec()) s += v;
  return tape.push(Tensor<T>::scalar(s), [a](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (auto& v : ga.vec()) v += g[0];
  }, detail::any_grad({a}));
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return tape.push(std::move(out), [a](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  }, detail::any_grad({a}));
}

/// 2-D transpose.
template <class T>
Var<T> transpose(Var<T> a) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  if (av.rank() != 2) fail(ErrorKind::shape, "transpose: expected rank 2, got " + shape_str(av.shape()));
  const size_t r = av.dim(0), c = av.dim(1);
  Tensor<T> out(Shape{c, r});
  for (size_t i = 0; i < r; ++i) {
    for (size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  }
  return tape.push(std::move(out), [a, r, c](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (size_t i = 0; i < r; ++i) {
      for (size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    }
  }, detail::any_grad({a}));
}

/// Concatenation along `axis`; all other dimensions must agree.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, size_t axis) {
  if (parts.empty()) fail(ErrorKind::shape, "concat: no inputs");
  Tape<T>& tape = *parts[0].tape;
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) fail(ErrorKind::shape, "concat: axis out of range for " + shape_str(shape));
  size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != shape.size()) detail::shape_error("concat", shape, s);
    for (size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != shape[d]) detail::shape_error("concat", shape, s);
    }
    total += s[axis];
    rg = rg || tape.requires_grad(p);
  }
  size_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  shape[axis] = total;
  Tensor<T> out(shape);
  std::vector<size_t> widths;
  size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    const size_t w = v.dim(axis) * inner;
    for (size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * w, w, out.data() + o * total * inner + offset);
    }
    offset += w;
    widths.push_back(w);
  }
  return tape.push(std::move(out), [parts, widths, outer, total, inner](Tape<T>& t, const Tensor<T>& g) {
    size_t off = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
      const size_t w = widths[i];
      if (t.requires_grad(parts[i])) {
        auto& gp = t.grad(parts[i]);
        for (size_t o = 0; o < outer; ++o) {
          for (size_t j = 0; j < w; ++j) gp[o * w + j] += g[o * total * inner + off + j];
        }
      }
      off += w;
    }
  }, rg);
}

/// Rows of table[V, d] selected by ids -> [ids.size(), d]
template <class T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
  Tape<T>& tape = *table.tape;
  const auto& tv = table.value();
  if (tv.rank() != 2) fail(ErrorKind::shape, "embedding: table must be rank 2, got " + shape_str(tv.shape()));
  const size_t d = tv.dim(1), vocab = tv.dim(0);
  if (ids.empty()) fail(ErrorKind::shape, "embedding: empty id list");
  Tensor<T> out(Shape{ids.size(), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<size_t>(ids[i]) >= vocab) {
      fail(ErrorKind::range, "embedding: id " + std::to_string(ids[i]) + " outside table of " +
                                 std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data() + static_cast<size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return tape.push(std::move(out), [table, ids, d](Tape<T>& t, const Tensor<T>& g) {
    auto& gt = t.grad(table);
    for (size_t i = 0; i < ids.size(); ++i) {
      T* row = gt.data() + static_cast<size_t>(ids[i]) * d;
      for (size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
    }
  }, detail::any_grad({table}));
}

/// Softmax along `axis`.
template <class T>
Var<T> softmax(Var<T> a, size_t axis) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  if (axis >= av.rank()) fail(ErrorKind::shape, "softmax: axis out of range for " + shape_str(av.shape()));
  size_t outer = 1, inner = 1;
  const size_t len = av.dim(axis);
  for (size_t d = 0; d < axis; ++d) outer *= av.dim(d);
  for (size_t d = axis + 1; d < av.rank(); ++d) inner *= av.dim(d);
  Tensor<T> out = av;
  std::vector<T> buf(len);
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * len * inner + in;
      for (size_t j = 0; j < len; ++j) buf[j] = out[base + j * inner];
      kernels::softmax_row(buf.data(), len);
      for (size_t j = 0; j < len; ++j) out[base + j * inner] = buf[j];
    }
  }
  return tape.push(std::move(out), [a, outer, inner, len](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = t.value(a);
    auto& ga = t.grad(a);
    std::vector<T> p(len);
    for (size_t o = 0; o < outer; ++o) {
      for (size_t in = 0; in < inner; ++in) {
        const size_t base = o * len * inner + in;
        for (size_t j = 0; j < len; ++j) p[j] = av[base + j * inner];
        kernels::softmax_row(p.data(), len);
        T dotp = T(0);
        for (size_t j = 0; j < len; ++j) dotp += g[base + j * inner] * p[j];
        for (size_t j = 0; j < len; ++j) {
          const size_t idx = base + j * inner;
          ga[idx] += p[j] * (g[idx] - dotp);
        }
      }
    }
  }, detail::any_grad({a}));
}

/// Layer normalization over the last axis with affine gain/bias.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  Tape<T>& tape = *x.tape;
  const auto& xv = x.value();
  const size_t d = xv.cols(), rows = xv.rows();
  if (gain.value().size() != d || bias.value().size() != d) {
    detail::shape_error("layer_norm", xv.shape(), gain.value().shape());
  }
  Tensor<T> out(xv.shape());
  std::vector<T> inv(rows);
  for (size_t r = 0; r < rows; ++r) {
    inv[r] = kernels::layer_norm_row(xv.data() + r * d, gain.value().data(), bias.value().data(),
                                     out.data() + r * d, d, eps);
  }
  return tape.push(std::move(out), [x, gain, bias, inv, d, rows](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(x);
    const auto& gv = t.value(gain);
    std::vector<T> xhat(d), gh(d);
    Tensor<T>* gx = t.requires_grad(x) ? &t.grad(x) : nullptr;
    Tensor<T>* gg = t.requires_grad(gain) ? &t.grad(gain) : nullptr;
    Tensor<T>* gb = t.requires_grad(bias) ? &t.grad(bias) : nullptr;
    for (size_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * d;
      const T* gr = g.data() + r * d;
      T mean = T(0);
      for (size_t j = 0; j < d; ++j) mean += xr[j];
      mean /= static_cast<T>(d);
      T sum_gh = T(0), sum_gh_xhat = T(0);
      for (size_t j = 0; j < d; ++j) {
        xhat[j] = (xr[j] - mean) * inv[r];
        gh[j] = gr[j] * gv[j];
        sum_gh += gh[j];
        sum_gh_xhat += gh[j] * xhat[j];
        if (gg) (*gg)[j] += gr[j] * xhat[j];
        if (gb) (*gb)[j] += gr[j];
      }
      if (gx) {
        T* gxr = gx->data() + r * d;
        const T invd = T(1) / static_cast<T>(d);
        for (size_t j = 0; j < d; ++j) {
          gxr[j] += inv[r] * (gh[j] - invd * sum_gh - xhat[j] * invd * sum_gh_xhat);
        }
      }
    }
  }, detail::any_grad({x, gain, bias}));
}

template <class T>
Var<T> gelu(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = kernels::gelu(v);
  return tape.push(std::move(out), [a](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = t.value(a);
    auto& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * kernels::gelu_grad(av[i]);
  }, detail::any_grad({a}));
}

template <class T>
Var<T> relu(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
  return tape.push(std::move(out), [a](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = t.value(a);
    auto& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > T(0) ? g[i] : T(0);
  }, detail::any_grad({a}));
}

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
template <class T>
Var<T> dropout(Var<T> a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) fail(ErrorKind::value, "dropout probability must be < 1");
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  std::vector<T> mask(out.size());
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? T(0) : keep;
    out[i] *= mask[i];
  }
  return tape.push(std::move(out), [a, mask = std::move(mask)](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  }, detail::any_grad({a}));
}

/// Geometry and masking of one multi-head attention call. Queries are rows
/// b*q_len + t of a [batch*q_len, d_model] matrix; keys/values likewise with
/// kv_len. `key_valid[b*kv_len + s]` == 0 excludes key s of item b; with
/// `causal`, query t only sees keys s <= t. Excluded keys get probability 0.
struct AttentionSpec {
  size_t batch = 1;
  size_t q_len = 1;
  size_t kv_len = 1;
  size_t heads = 1;
  bool causal = false;
  std::vector<uint8_t> key_valid;
};

namespace detail {

template <class T>
void attention_probs(const T* q, const T* k, size_t d, size_t dh, size_t h, size_t q_row,
                     size_t k_row0, size_t kv_len, const uint8_t* valid, size_t visible, T scale,
                     T* p) {
  T mx = -std::numeric_limits<T>::infinity();
  for (size_t s = 0; s < kv_len; ++s) {
    if (s >= visible || !valid[s]) {
      p[s] = -std::numeric_limits<T>::infinity();
      continue;
    }
    p[s] = kernels::dot(q + q_row * d + h * dh, k + (k_row0 + s) * d + h * dh, dh) * scale;
    mx = std::max(mx, p[s]);
  }
  if (mx == -std::numeric_limits<T>::infinity()) {
    std::fill(p, p + kv_len, T(0));
    return;
  }
  T sum = T(0);
  for (size_t s = 0; s < kv_len; ++s) {
    p[s] = (s >= visible || !valid[s]) ? T(0) : std::exp(p[s] - mx);
    sum += p[s];
  }
  const T inv = T(1) / sum;
  for (size_t s = 0; s < kv_len; ++s) p[s] *= inv;
}

}  // namespace detail

/// Scaled dot-product multi-head attention on pre-projected q, k, v.
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionSpec& spec) {
  Tape<T>& tape = *q.tape;
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const size_t d = qv.cols();
  const size_t B = spec.batch, Tq = spec.q_len, S = spec.kv_len, H = spec.heads;
  if (d % H != 0 || qv.rows() != B * Tq || kv.rows() != B * S || vv.rows() != B * S ||
      kv.cols() != d || vv.cols() != d || spec.key_valid.size() != B * S) {
    detail::shape_error("attention", qv.shape(), kv.shape());
  }
  const size_t dh = d / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> probs(B * H * Tq * S);
  Tensor<T> out(Shape{B * Tq, d});
  for (size_t b = 0; b < B; ++b) {
    const uint8_t* valid = spec.key_valid.data() + b * S;
    for (size_t h = 0; h < H; ++h) {
      for (size_t t = 0; t < Tq; ++t) {
        T* p = probs.data() + ((b * H + h) * Tq + t) * S;
        const size_t visible = spec.causal ? std::min(S, t + 1) : S;
        detail::attention_probs(qv.data(), kv.data(), d, dh, h, b * Tq + t, b * S, S, valid, visible,
                                scale, p);
        T* o = out.data() + (b * Tq + t) * d + h * dh;
        for (size_t s = 0; s < S; ++s) {
          if (p[s] == T(0)) continue;
          const T* vs = vv.data() + (b * S + s) * d + h * dh;
          for (size_t j = 0; j < dh; ++j) o[j] += p[s] * vs[j];
        }
      }
    }
  }
  return tape.push(std::move(out), [q, k, v, probs = std::move(probs), B, Tq, S, H, d, dh,
                                    scale](Tape<T>& t, const Tensor<T>& g) {
    const auto& qv = t.value(q);
    const auto& kv = t.value(k);
    const auto& vv = t.value(v);
    Tensor<T>* gq = t.requires_grad(q) ? &t.grad(q) : nullptr;
    Tensor<T>* gk = t.requires_grad(k) ? &t.grad(k) : nullptr;
    Tensor<T>* gv = t.requires_grad(v) ? &t.grad(v) : nullptr;
    std::vector<T> dp(S);
    for (size_t b = 0; b < B; ++b) {
      for (size_t h = 0; h < H; ++h) {
        for (size_t tq = 0; tq < Tq; ++tq) {
          const T* p = probs.data() + ((b * H + h) * Tq + tq) * S;
          const T* go = g.data() + (b * Tq + tq) * d + h * dh;
          T row = T(0);
          for (size_t s = 0; s < S; ++s) {
            if (p[s] == T(0)) {
              dp[s] = T(0);
              continue;
            }
            const size_t kvrow = (b * S + s) * d + h * dh;
            dp[s] = kernels::dot(go, vv.data() + kvrow, dh);
            row += p[s] * dp[s];
            if (gv) {
              T* gvs = gv->data() + kvrow;
              for (size_t j = 0; j < dh; ++j) gvs[j] += p[s] * go[j];
            }
          }
          const size_t qrow = (b * Tq + tq) * d + h * dh;
          for (size_t s = 0; s < S; ++s) {
            if (p[s] == T(0)) continue;
            const T ds = p[s] * (dp[s] - row) * scale;
            const size_t kvrow = (b * S + s) * d + h * dh;
            if (gq) {
              T* gqr = gq->data() + qrow;
              const T* ks = kv.data() + kvrow;
              for (size_t j = 0; j < dh; ++j) gqr[j] += ds * ks[j];
            }
            if (gk) {
              T* gks = gk->data() + kvrow;
              const T* qr = qv.data() + qrow;
              for (size_t j = 0; j < dh; ++j) gks[j] += ds * qr[j];
            }
          }
        }
      }
    }
  }, detail::any_grad({q, k, v}));
}

/// Mean token cross entropy of logits[N, V] against targets[N], skipping
/// positions whose target is `pad_id`. All-pad input yields 0 with zero
/// gradients. With label smoothing eps the target distribution is
/// (1-eps) one-hot + eps/V.
template <class T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets, int pad_id,
                     double label_smoothing = 0.0) {
  Tape<T>& tape = *logits.tape;
  const auto& lv = logits.value();
  const size_t V = lv.cols(), N = lv.rows();
  if (targets.size() != N) {
    fail(ErrorKind::shape, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                               std::to_string(N) + " rows of " + shape_str(lv.shape()));
  }
  size_t count = 0;
  for (int tg : targets) count += (tg != pad_id);
  std::vector<T> lse(N, T(0));
  double total = 0.0;
  const T eps = static_cast<T>(label_smoothing);
  for (size_t i = 0; i < N; ++i) {
    if (targets[i] == pad_id) continue;
    if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= V) {
      fail(ErrorKind::range, "cross_entropy: target id " + std::to_string(targets[i]) + " out of range");
    }
    const T* row = lv.data() + i * V;
    T mx = row[0];
    for (size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    T s = T(0);
    for (size_t j = 0; j < V; ++j) s += std::exp(row[j] - mx);
    lse[i] = mx + std::log(s);
    T loss = lse[i] - row[targets[i]];
    if (eps > T(0)) {
      T mean_logit = T(0);
      for (size_t j = 0; j < V; ++j) mean_logit += row[j];
      mean_logit /= static_cast<T>(V);
      loss = (T(1) - eps) * loss + eps * (lse[i] - mean_logit);
    }
    total += static_cast<double>(loss);
  }
  const T value = count ? static_cast<T>(total / static_cast<double>(count)) : T(0);
  return tape.push(Tensor<T>::scalar(value), [logits, targets, pad_id, lse = std::move(lse), count, V,
                                              eps](Tape<T>& t, const Tensor<T>& g) {
    if (count == 0) return;
    const auto& lv = t.value(logits);
    auto& gl = t.grad(logits);
    const T w = g[0] / static_cast<T>(count);
    for (size_t i = 0; i < targets.size(); ++i) {
      if (targets[i] == pad_id) continue;
      const T* row = lv.data() + i * V;
      T* gr = gl.data() + i * V;
      for (size_t j = 0; j < V; ++j) {
        const T pj = std::exp(row[j] - lse[i]);
        gr[j] += w * (pj - eps / static_cast<T>(V));
      }
      gr[targets[i]] -= w * (T(1) - eps);
    }
  }, detail::any_grad({logits}));
}

}  // namespace mmt::num
