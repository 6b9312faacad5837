#pragma once

#include <vector>

#include "mmt/model/transformer.hpp"
#include "mmt/numerics/kernels.hpp"

namespace mmt::model {

/// Tape-free decoder for one source sentence with a per-hypothesis
/// key/value cache. It runs the same kernels in the same order as the taped
/// forward pass, so step logits equal the teacher-forced logits at that
/// position.
template <class T>
class IncrementalDecoder {
 public:
  struct State {
    std::vector<std::vector<T>> k, v;  // per decoder layer, [len, d]
    size_t len = 0;
  };

  IncrementalDecoder(const Transformer<T>& model, const std::vector<int>& src_ids) : model_(model) {
    const auto& cfg = model.config();
    if (src_ids.empty()) fail(ErrorKind::value, "empty source sequence");
    src_len_ = src_ids.size();
    d_ = cfg.d_model;
    {
      Tape<T> tape(&model.params(), false);
      auto mem = model.encode(tape, src_ids, 1, src_len_, std::vector<uint8_t>(src_len_, 1), nullptr);
      const auto& m = mem.value();
      for (const auto& L : model.ids().dec) {
        cross_k_.push_back(project_rows(m.data(), src_len_, L.cross.wk, L.cross.bk));
        cross_v_.push_back(project_rows(m.data(), src_len_, L.cross.wv, L.cross.bv));
      }
    }
    const auto& out = model.params().value(cfg.tie_embeddings ? model.ids().embed : model.ids().out);
    out_t_.resize(out.size());
    num::kernels::transpose(cfg.vocab_size, d_, out.data(), out_t_.data());
  }

  State start() const {
    State s;
    s.k.resize(model_.ids().dec.size());
    s.v.resize(model_.ids().dec.size());
    return s;
  }

  /// Positions still available before max_positions.
  size_t remaining(const State& s) const { return model_.config().max_positions - s.len; }

  /// Feeds `token` at position s.len and writes next-token logits.
  void step(State& s, int token, std::vector<T>& logits) const {
    const auto& cfg = model_.config();
    const auto& ids = model_.ids();
    const auto& ps = model_.params();
    if (s.len >= cfg.max_positions) fail(ErrorKind::range, "decoder exceeded max_positions");
    if (token < 0 || static_cast<size_t>(token) >= cfg.vocab_size) fail(ErrorKind::range, "token id out of range");
    const size_t d = d_;
    std::vector<T> x(d), h(d), q(d), k(d), v(d), o(d), tmp(d);
    const T* e = ps.value(ids.embed).data() + static_cast<size_t>(token) * d;
    const T* pos = ps.value(ids.dec_pos).data() + s.len * d;
    for (size_t j = 0; j < d; ++j) x[j] = e[j] + pos[j];

    for (size_t l = 0; l < ids.dec.size(); ++l) {
      const auto& L = ids.dec[l];
      layer_norm(x.data(), L.ln1, h.data());
      linear(h.data(), L.self.wq, L.self.bq, q.data());
      linear(h.data(), L.self.wk, L.self.bk, k.data());
      linear(h.data(), L.self.wv, L.self.bv, v.data());
      s.k[l].insert(s.k[l].end(), k.begin(), k.end());
      s.v[l].insert(s.v[l].end(), v.begin(), v.end());
      attend(q.data(), s.k[l].data(), s.v[l].data(), s.len + 1, o.data());
      linear(o.data(), L.self.wo, L.self.bo, tmp.data());
      for (size_t j = 0; j < d; ++j) x[j] += tmp[j];

      layer_norm(x.data(), L.ln2, h.data());
      linear(h.data(), L.cross.wq, L.cross.bq, q.data());
      attend(q.data(), cross_k_[l].data(), cross_v_[l].data(), src_len_, o.data());
      linear(o.data(), L.cross.wo, L.cross.bo, tmp.data());
      for (size_t j = 0; j < d; ++j) x[j] += tmp[j];

      layer_norm(x.data(), L.ln3, h.data());
      std::vector<T> f(cfg.d_ff);
      linear_to(h.data(), L.ff.w1, L.ff.b1, f.data(), d, cfg.d_ff);
      for (auto& z : f) z = cfg.activation == Activation::gelu ? num::kernels::gelu(z) : (z > T(0) ? z : T(0));
      linear_to(f.data(), L.ff.w2, L.ff.b2, tmp.data(), cfg.d_ff, d);
      for (size_t j = 0; j < d; ++j) x[j] += tmp[j];
    }
    layer_norm(x.data(), ids.dec_norm, h.data());
    logits.resize(cfg.vocab_size);
    // same arithmetic as gemm_nt against the untransposed matrix
    num::kernels::gemm_nn(1, cfg.vocab_size, d, h.data(), out_t_.data(), logits.data(), false);
    ++s.len;
  }

 private:
  std::vector<T> project_rows(const T* x, size_t rows, ParamId w, ParamId b) const {
    std::vector<T> out(rows * d_);
    const auto& ps = model_.params();
    num::kernels::gemm_nn(rows, d_, d_, x, ps.value(w).data(), out.data(), false);
    const T* bias = ps.value(b).data();
    for (size_t r = 0; r < rows; ++r) {
      for (size_t j = 0; j < d_; ++j) out[r * d_ + j] += bias[j];
    }
    return out;
  }

  void linear_to(const T* x, ParamId w, ParamId b, T* y, size_t in, size_t out) const {
    const auto& ps = model_.params();
    num::kernels::gemm_nn(1, out, in, x, ps.value(w).data(), y, false);
    const T* bias = ps.value(b).data();
    for (size_t j = 0; j < out; ++j) y[j] += bias[j];
  }

  void linear(const T* x, ParamId w, ParamId b, T* y) const { linear_to(x, w, b, y, d_, d_); }

  void layer_norm(const T* x, const NormIds& n, T* y) const {
    const auto& ps = model_.params();
    num::kernels::layer_norm_row(x, ps.value(n.g).data(), ps.value(n.b).data(), y, d_, T(1e-5));
  }

  void attend(const T* q, const T* keys, const T* values, size_t n, T* out) const {
    const size_t H = model_.config().n_heads, dh = d_ / H;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<T> p(n);
    std::vector<uint8_t> valid(n, 1);
    std::fill(out, out + d_, T(0));
    for (size_t hd = 0; hd < H; ++hd) {
      num::detail::attention_probs(q, keys, d_, dh, hd, 0, 0, n, valid.data(), n, scale, p.data());
      T* o = out + hd * dh;
      for (size_t s = 0; s < n; ++s) {
        if (p[s] == T(0)) continue;
        const T* vs = values + s * d_ + hd * dh;
        for (size_t j = 0; j < dh; ++j) o[j] += p[s] * vs[j];
      }
    }
  }

  const Transformer<T>& model_;
  std::vector<std::vector<T>> cross_k_, cross_v_;
  std::vector<T> out_t_;  // output projection as [d, V]
  size_t src_len_ = 0;
  size_t d_ = 0;
};

}  // namespace mmt::model
