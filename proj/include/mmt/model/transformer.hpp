#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/core/kv.hpp"
#include "mmt/core/rng.hpp"
#include "mmt/model/config.hpp"
#include "mmt/numerics/checkpoint.hpp"
#include "mmt/numerics/ops.hpp"

// Pre-LN transformer encoder-decoder with learned absolute positions and
// (optionally) tied input/output embeddings.

namespace mmt::model {

using num::ParamId;
using num::ParamSet;
using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;

inline constexpr int kPadId = 0;
inline constexpr int kEosId = 1;

/// Padded id matrices, row-major. Every target row ends with eos before its
/// padding; the decoder input is the target shifted right behind eos.
struct Batch {
  size_t batch = 0;
  size_t src_len = 0;
  size_t tgt_len = 0;
  std::vector<int> src;
  std::vector<int> tgt;

  static Batch make(const std::vector<std::vector<int>>& src_rows,
                    const std::vector<std::vector<int>>& tgt_rows) {
    if (src_rows.empty() || src_rows.size() != tgt_rows.size()) {
      fail(ErrorKind::shape, "batch needs equal, non-zero numbers of source and target rows");
    }
    Batch b;
    b.batch = src_rows.size();
    for (const auto& r : src_rows) b.src_len = std::max(b.src_len, r.size());
    for (const auto& r : tgt_rows) b.tgt_len = std::max(b.tgt_len, r.size());
    if (b.src_len == 0 || b.tgt_len == 0) fail(ErrorKind::shape, "batch rows are empty");
    b.src.assign(b.batch * b.src_len, kPadId);
    b.tgt.assign(b.batch * b.tgt_len, kPadId);
    for (size_t i = 0; i < b.batch; ++i) {
      std::copy(src_rows[i].begin(), src_rows[i].end(), b.src.begin() + static_cast<long>(i * b.src_len));
      std::copy(tgt_rows[i].begin(), tgt_rows[i].end(), b.tgt.begin() + static_cast<long>(i * b.tgt_len));
    }
    return b;
  }

  std::vector<uint8_t> src_mask() const {
    std::vector<uint8_t> m(src.size());
    for (size_t i = 0; i < src.size(); ++i) m[i] = src[i] != kPadId;
    return m;
  }

  std::vector<uint8_t> tgt_mask() const {
    std::vector<uint8_t> m(tgt.size());
    for (size_t i = 0; i < tgt.size(); ++i) m[i] = tgt[i] != kPadId;
    return m;
  }

  size_t target_tokens() const {
    size_t n = 0;
    for (int t : tgt) n += t != kPadId;
    return n;
  }

  std::vector<int> decoder_input() const {
    std::vector<int> in(tgt.size(), kPadId);
    for (size_t b = 0; b < batch; ++b) {
      in[b * tgt_len] = kEosId;
      for (size_t t = 1; t < tgt_len; ++t) in[b * tgt_len + t] = tgt[b * tgt_len + t - 1];
    }
    return in;
  }
};

/// Keeps at most `max_len` ids, forcing the last kept id to eos.
inline std::vector<int> truncate_ids(std::vector<int> ids, size_t max_len) {
  if (ids.size() > max_len) {
    ids.resize(max_len);
    ids.back() = kEosId;
  }
  return ids;
}

/// Closed-form parameter count for a configuration.
inline size_t count_params(const ModelConfig& c) {
  const size_t d = c.d_model, f = c.d_ff;
  const size_t norm = 2 * d;
  const size_t attn = 4 * (d * d + d);
  const size_t ff = d * f + f + f * d + d;
  size_t n = c.vocab_size * d + 2 * c.max_positions * d;
  if (!c.tie_embeddings) n += c.vocab_size * d;
  n += c.n_enc_layers * (2 * norm + attn + ff) + norm;
  n += c.n_dec_layers * (3 * norm + 2 * attn + ff) + norm;
  return n;
}

struct NormIds {
  ParamId g, b;
};
struct AttnIds {
  ParamId wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FfIds {
  ParamId w1, b1, w2, b2;
};
struct EncLayerIds {
  NormIds ln1;
  AttnIds attn;
  NormIds ln2;
  FfIds ff;
};
struct DecLayerIds {
  NormIds ln1;
  AttnIds self;
  NormIds ln2;
  AttnIds cross;
  NormIds ln3;
  FfIds ff;
};
struct LayoutIds {
  ParamId embed, enc_pos, dec_pos, out;
  std::vector<EncLayerIds> enc;
  std::vector<DecLayerIds> dec;
  NormIds enc_norm, dec_norm;
};

template <class T>
class Transformer {
 public:
  /// Fresh weights: normal(0, 0.02) matrices and embeddings, unit norm gains,
  /// zero biases. Deterministic in `seed`.
  static Transformer init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Transformer m;
    m.config_ = config;
    Rng rng = rng_fork(seed, 0x1217);
    m.ids_ = build(config, m.params_, &rng);
    return m;
  }

  /// Wraps existing parameters; names and shapes must match the layout.
  static Transformer from_params(const ModelConfig& config, ParamSet<T> params) {
    config.validate();
    Transformer m;
    m.config_ = config;
    ParamSet<T> layout;
    m.ids_ = build(config, layout, nullptr);
    if (layout.size() != params.size()) fail(ErrorKind::format, "parameter count does not match model layout");
    for (size_t i = 0; i < params.size(); ++i) {
      if (layout.name(i) != params.name(i) || layout.value(i).shape() != params.value(i).shape()) {
        fail(ErrorKind::format, "parameter " + params.name(i) + " does not match layout entry " + layout.name(i));
      }
    }
    m.params_ = std::move(params);
    return m;
  }

  const ModelConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const LayoutIds& ids() const { return ids_; }

  template <class U>
  Transformer<U> cast() const {
    return Transformer<U>::from_params(config_, params_.template cast<U>());
  }

  /// Encoder output [B*Ts, d].
  Var<T> encode(Tape<T>& t, const std::vector<int>& src, size_t B, size_t Ts,
                const std::vector<uint8_t>& src_valid, Rng* drop) const {
    check_len(Ts, "source");
    auto x = add(num::embedding(t.param(ids_.embed), src), num::embedding(t.param(ids_.enc_pos), positions(B, Ts)));
    x = maybe_dropout(x, drop);
    num::AttentionSpec self{B, Ts, Ts, config_.n_heads, false, src_valid};
    for (const auto& L : ids_.enc) {
      auto h = norm(t, x, L.ln1);
      x = add(x, maybe_dropout(attention_block(t, h, h, L.attn, self), drop));
      x = add(x, maybe_dropout(ff_block(t, norm(t, x, L.ln2), L.ff), drop));
    }
    return norm(t, x, ids_.enc_norm);
  }

  /// Decoder hidden states [B*Tt, d] for decoder input ids `dec_in`.
  Var<T> decode(Tape<T>& t, Var<T> memory, const std::vector<uint8_t>& src_valid, const std::vector<int>& dec_in,
                size_t B, size_t Ts, size_t Tt, Rng* drop) const {
    check_len(Tt, "target");
    auto x = add(num::embedding(t.param(ids_.embed), dec_in), num::embedding(t.param(ids_.dec_pos), positions(B, Tt)));
    x = maybe_dropout(x, drop);
    num::AttentionSpec self{B, Tt, Tt, config_.n_heads, true, std::vector<uint8_t>(B * Tt, 1)};
    num::AttentionSpec cross{B, Tt, Ts, config_.n_heads, false, src_valid};
    for (const auto& L : ids_.dec) {
      auto h = norm(t, x, L.ln1);
      x = add(x, maybe_dropout(attention_block(t, h, h, L.self, self), drop));
      x = add(x, maybe_dropout(attention_block(t, norm(t, x, L.ln2), memory, L.cross, cross), drop));
      x = add(x, maybe_dropout(ff_block(t, norm(t, x, L.ln3), L.ff), drop));
    }
    return norm(t, x, ids_.dec_norm);
  }

  Var<T> project(Tape<T>& t, Var<T> hidden) const {
    return num::matmul_nt(hidden, t.param(config_.tie_embeddings ? ids_.embed : ids_.out));
  }

  /// Logits [B*Tt, V].
  Var<T> forward(Tape<T>& t, const Batch& batch, Rng* drop = nullptr) const {
    const auto valid = batch.src_mask();
    auto memory = encode(t, batch.src, batch.batch, batch.src_len, valid, drop);
    auto hidden = decode(t, memory, valid, batch.decoder_input(), batch.batch, batch.src_len, batch.tgt_len, drop);
    return project(t, hidden);
  }

  /// Mean cross entropy over non-pad target tokens.
  Var<T> loss(Tape<T>& t, const Batch& batch, Rng* drop = nullptr) const {
    if (batch.target_tokens() == 0) fail(ErrorKind::value, "loss: batch has no non-pad target tokens");
    return num::cross_entropy(forward(t, batch, drop), batch.tgt, kPadId, config_.label_smoothing);
  }

  // Shared with the incremental decoder.
  Var<T> norm(Tape<T>& t, Var<T> x, const NormIds& n) const {
    return num::layer_norm(x, t.param(n.g), t.param(n.b));
  }

 private:
  static LayoutIds build(const ModelConfig& c, ParamSet<T>& ps, Rng* rng) {
    const size_t d = c.d_model;
    auto mat = [&](const std::string& name, Shape s) {
      Tensor<T> v(std::move(s));
      if (rng) {
        for (auto& x : v.vec()) x = static_cast<T>(0.02 * rng->normal());
      }
      return ps.add(name, std::move(v), true);
    };
    auto vec = [&](const std::string& name, size_t n, T fill) {
      return ps.add(name, Tensor<T>(Shape{n}, fill), false);
    };
    auto norm_ids = [&](const std::string& p) { return NormIds{vec(p + ".g", d, T(1)), vec(p + ".b", d, T(0))}; };
    auto attn_ids = [&](const std::string& p) {
      AttnIds a;
      a.wq = mat(p + ".wq", {d, d});
      a.bq = vec(p + ".bq", d, T(0));
      a.wk = mat(p + ".wk", {d, d});
      a.bk = vec(p + ".bk", d, T(0));
      a.wv = mat(p + ".wv", {d, d});
      a.bv = vec(p + ".bv", d, T(0));
      a.wo = mat(p + ".wo", {d, d});
      a.bo = vec(p + ".bo", d, T(0));
      return a;
    };
    auto ff_ids = [&](const std::string& p) {
      FfIds f;
      f.w1 = mat(p + ".w1", {d, c.d_ff});
      f.b1 = vec(p + ".b1", c.d_ff, T(0));
      f.w2 = mat(p + ".w2", {c.d_ff, d});
      f.b2 = vec(p + ".b2", d, T(0));
      return f;
    };
    LayoutIds ids;
    ids.embed = mat("embed", {c.vocab_size, d});
    ids.enc_pos = mat("enc.pos", {c.max_positions, d});
    ids.dec_pos = mat("dec.pos", {c.max_positions, d});
    for (size_t i = 0; i < c.n_enc_layers; ++i) {
      const std::string p = "enc." + std::to_string(i);
      EncLayerIds L;
      L.ln1 = norm_ids(p + ".ln1");
      L.attn = attn_ids(p + ".attn");
      L.ln2 = norm_ids(p + ".ln2");
      L.ff = ff_ids(p + ".ff");
      ids.enc.push_back(L);
    }
    ids.enc_norm = norm_ids("enc.ln_f");
    for (size_t i = 0; i < c.n_dec_layers; ++i) {
      const std::string p = "dec." + std::to_string(i);
      DecLayerIds L;
      L.ln1 = norm_ids(p + ".ln1");
      L.self = attn_ids(p + ".self");
      L.ln2 = norm_ids(p + ".ln2");
      L.cross = attn_ids(p + ".cross");
      L.ln3 = norm_ids(p + ".ln3");
      L.ff = ff_ids(p + ".ff");
      ids.dec.push_back(L);
    }
    ids.dec_norm = norm_ids("dec.ln_f");
    if (!c.tie_embeddings) ids.out = mat("out", {c.vocab_size, d});
    return ids;
  }

  void check_len(size_t len, const char* what) const {
    if (len > config_.max_positions) {
      fail(ErrorKind::range, std::string(what) + " length " + std::to_string(len) + " exceeds max_positions " +
                                 std::to_string(config_.max_positions));
    }
  }

  static std::vector<int> positions(size_t B, size_t len) {
    std::vector<int> p(B * len);
    for (size_t i = 0; i < p.size(); ++i) p[i] = static_cast<int>(i % len);
    return p;
  }

  Var<T> maybe_dropout(Var<T> x, Rng* drop) const {
    if (!drop || config_.dropout <= 0.0) return x;
    return num::dropout(x, config_.dropout, *drop);
  }

  Var<T> linear(Tape<T>& t, Var<T> x, ParamId w, ParamId b) const {
    return num::add_bias(num::matmul(x, t.param(w)), t.param(b));
  }

  Var<T> attention_block(Tape<T>& t, Var<T> query_src, Var<T> kv_src, const AttnIds& a,
                         const num::AttentionSpec& spec) const {
    auto q = linear(t, query_src, a.wq, a.bq);
    auto k = linear(t, kv_src, a.wk, a.bk);
    auto v = linear(t, kv_src, a.wv, a.bv);
    return linear(t, num::attention(q, k, v, spec), a.wo, a.bo);
  }

  Var<T> ff_block(Tape<T>& t, Var<T> x, const FfIds& f) const {
    auto h = linear(t, x, f.w1, f.b1);
    h = config_.activation == Activation::gelu ? num::gelu(h) : num::relu(h);
    return linear(t, h, f.w2, f.b2);
  }

  ModelConfig config_;
  ParamSet<T> params_;
  LayoutIds ids_;
};

/// Logits as [B, Tt, V] without recording gradients.
template <class T>
Tensor<T> forward_logits(const Transformer<T>& model, const Batch& batch) {
  Tape<T> tape(&model.params(), false);
  return model.forward(tape, batch).value().reshaped({batch.batch, batch.tgt_len, model.config().vocab_size});
}

template <class T>
T loss_teacher_forcing(const Transformer<T>& model, const Batch& batch) {
  Tape<T> tape(&model.params(), false);
  return model.loss(tape, batch).value().item();
}

/// Parameters as float64 tensors with the config in the file header.
template <class T>
void save_model(const Transformer<T>& model, const std::string& path, KeyValues extra = {}) {
  KeyValues kv;
  model.config().write(kv);
  kv.merge(extra);
  num::save_params(model.params(), path, kv.values());
}

template <class T>
Transformer<T> load_model(const std::string& path) {
  auto file = num::read_tensor_file(path);
  KeyValues kv;
  for (const auto& [k, v] : file.meta) kv.set(k, v);
  ModelConfig cfg;
  cfg.read(kv);
  ParamSet<T> ps;
  ParamSet<T> layout = Transformer<T>::init(cfg, 0).params();
  if (layout.size() != file.tensors.size()) fail(ErrorKind::format, path + ": tensor count does not match config");
  for (size_t i = 0; i < file.tensors.size(); ++i) {
    ps.add(file.tensors[i].name, file.tensors[i].value.template cast<T>(), layout.decay(i));
  }
  return Transformer<T>::from_params(cfg, std::move(ps));
}

/// Header entries (config and extras) of a saved model.
inline KeyValues model_meta(const std::string& path) {
  auto file = num::read_tensor_file(path);
  KeyValues kv;
  for (const auto& [k, v] : file.meta) kv.set(k, v);
  return kv;
}

}  // namespace mmt::model
