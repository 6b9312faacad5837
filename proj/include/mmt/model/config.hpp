#pragma once

#include <string>

#include "mmt/core/error.hpp"
#include "mmt/core/kv.hpp"

namespace mmt::model {

enum class Activation { gelu, relu };

inline const char* activation_name(Activation a) { return a == Activation::gelu ? "gelu" : "relu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "relu") return Activation::relu;
  fail(ErrorKind::config, "unknown activation '" + s + "' (gelu|relu)");
}

struct ModelConfig {
  size_t d_model = 128;
  size_t n_heads = 4;
  size_t n_enc_layers = 2;
  size_t n_dec_layers = 2;
  size_t d_ff = 256;
  size_t vocab_size = 0;
  size_t max_positions = 64;
  double dropout = 0.1;
  bool tie_embeddings = true;
  Activation activation = Activation::gelu;
  double label_smoothing = 0.0;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::config, "model config: " + m); };
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) bad("d_model must be a positive multiple of n_heads");
    if (n_enc_layers == 0 || n_dec_layers == 0) bad("need at least one encoder and one decoder layer");
    if (d_ff == 0) bad("d_ff must be positive");
    if (vocab_size < 4) bad("vocab_size must be set (>= 4)");
    if (max_positions < 2) bad("max_positions must be >= 2");
    if (dropout < 0.0 || dropout >= 1.0) bad("dropout must be in [0, 1)");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) bad("label_smoothing must be in [0, 1)");
  }

  void write(KeyValues& kv, const std::string& prefix = "model.") const {
    kv.set(prefix + "d_model", d_model);
    kv.set(prefix + "n_heads", n_heads);
    kv.set(prefix + "n_enc_layers", n_enc_layers);
    kv.set(prefix + "n_dec_layers", n_dec_layers);
    kv.set(prefix + "d_ff", d_ff);
    kv.set(prefix + "vocab_size", vocab_size);
    kv.set(prefix + "max_positions", max_positions);
    kv.set(prefix + "dropout", dropout);
    kv.set(prefix + "tie_embeddings", tie_embeddings);
    kv.set(prefix + "activation", activation_name(activation));
    kv.set(prefix + "label_smoothing", label_smoothing);
  }

  /// Missing keys keep the current values.
  void read(const KeyValues& kv, const std::string& prefix = "model.") {
    auto sz = [&](const char* k, size_t cur) {
      const auto v = kv.get_int(prefix + k, static_cast<long long>(cur));
      if (v < 0) fail(ErrorKind::config, prefix + k + " must be non-negative");
      return static_cast<size_t>(v);
    };
    d_model = sz("d_model", d_model);
    n_heads = sz("n_heads", n_heads);
    n_enc_layers = sz("n_enc_layers", n_enc_layers);
    n_dec_layers = sz("n_dec_layers", n_dec_layers);
    d_ff = sz("d_ff", d_ff);
    vocab_size = sz("vocab_size", vocab_size);
    max_positions = sz("max_positions", max_positions);
    dropout = kv.get_double(prefix + "dropout", dropout);
    tie_embeddings = kv.get_bool(prefix + "tie_embeddings", tie_embeddings);
    activation = parse_activation(kv.get(prefix + "activation", activation_name(activation)));
    label_smoothing = kv.get_double(prefix + "label_smoothing", label_smoothing);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace mmt::model
