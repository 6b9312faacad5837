#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/numerics/checkpoint.hpp"
#include "mmt/numerics/tape.hpp"

namespace mmt::optim {

using num::Gradients;
using num::ParamSet;
using num::Tensor;

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 0.0;  // 0 disables clipping

  void validate() const {
    if (!(lr > 0.0)) fail(ErrorKind::config, "optimizer lr must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      fail(ErrorKind::config, "optimizer betas must be in [0, 1)");
    }
    if (eps <= 0.0) fail(ErrorKind::config, "optimizer eps must be > 0");
    if (weight_decay < 0.0) fail(ErrorKind::config, "weight_decay must be >= 0");
    if (clip_norm < 0.0) fail(ErrorKind::config, "clip_norm must be >= 0");
  }
};

struct ScheduleConfig {
  size_t warmup_steps = 200;
  size_t total_steps = 1000;

  void validate() const {
    if (warmup_steps > total_steps) fail(ErrorKind::config, "warmup_steps must not exceed total_steps");
  }
};

/// Linear 0 -> base over [0, warmup], linear base -> 0 over [warmup, total],
/// 0 afterwards.
inline double lr_at(const ScheduleConfig& s, double base_lr, size_t step) {
  if (step >= s.total_steps) return 0.0;
  if (step < s.warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const double span = static_cast<double>(s.total_steps - s.warmup_steps);
  return base_lr * static_cast<double>(s.total_steps - step) / span;
}

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  size_t step = 0;
};

template <class T>
AdamState<T> make_state(const ParamSet<T>& params) {
  AdamState<T> s;
  for (size_t i = 0; i < params.size(); ++i) {
    s.m.emplace_back(params.value(i).shape());
    s.v.emplace_back(params.value(i).shape());
  }
  return s;
}

/// Global L2 norm of a gradient set.
template <class T>
double grad_norm(const Gradients<T>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (T x : g.vec()) s += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(s);
}

/// One AdamW update with bias correction. Weight decay is decoupled
/// (theta *= 1 - lr*wd before the Adam term) and only touches parameters
/// registered with decay. Throws on a non-finite gradient, naming the tensor.
template <class T>
void adamw_step(ParamSet<T>& params, const Gradients<T>& grads, AdamState<T>& state, const AdamWConfig& cfg,
                double lr) {
  if (grads.size() != params.size()) fail(ErrorKind::shape, "gradient count does not match parameters");
  if (state.m.size() != params.size()) state = make_state(params);
  for (size_t p = 0; p < grads.size(); ++p) {
    for (T g : grads[p].vec()) {
      if (!std::isfinite(static_cast<double>(g))) {
        fail(ErrorKind::value, "non-finite gradient in parameter " + params.name(p));
      }
    }
  }
  double clip = 1.0;
  if (cfg.clip_norm > 0.0) {
    const double n = grad_norm(grads);
    if (n > cfg.clip_norm) clip = cfg.clip_norm / n;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& w = params.value(p);
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    const double decay = params.decay(p) ? 1.0 - lr * cfg.weight_decay : 1.0;
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]) * clip;
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double wi = static_cast<double>(w[i]) * decay;
      wi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      w[i] = static_cast<T>(wi);
    }
  }
}

/// Token-weighted gradient accumulation. Each micro gradient is the gradient
/// of a per-token mean loss over `tokens` target tokens; flush returns the
/// gradient of the mean over all accumulated tokens.
template <class T>
class GradAccumulator {
 public:
  explicit GradAccumulator(size_t factor = 1) : factor_(factor) {
    if (factor == 0) fail(ErrorKind::config, "accumulation factor must be >= 1");
  }

  void accumulate(const Gradients<T>& micro, size_t tokens) {
    if (sum_.empty()) {
      sum_.resize(micro.size());
      for (size_t i = 0; i < micro.size(); ++i) sum_[i].assign(micro[i].size(), 0.0);
      shapes_.clear();
      for (const auto& g : micro) shapes_.push_back(g.shape());
    }
    if (micro.size() != sum_.size()) fail(ErrorKind::shape, "micro gradient count changed during accumulation");
    const double w = static_cast<double>(tokens);
    for (size_t i = 0; i < micro.size(); ++i) {
      for (size_t j = 0; j < micro[i].size(); ++j) sum_[i][j] += w * static_cast<double>(micro[i][j]);
    }
    tokens_ += tokens;
    ++count_;
  }

  bool ready() const { return count_ >= factor_; }
  size_t count() const { return count_; }
  size_t factor() const { return factor_; }
  size_t tokens() const { return tokens_; }

  Gradients<T> flush() {
    if (count_ == 0) fail(ErrorKind::value, "flush before any accumulate");
    Gradients<T> out;
    const double inv = tokens_ ? 1.0 / static_cast<double>(tokens_) : 0.0;
    for (size_t i = 0; i < sum_.size(); ++i) {
      Tensor<T> g(shapes_[i]);
      for (size_t j = 0; j < g.size(); ++j) g[j] = static_cast<T>(sum_[i][j] * inv);
      out.push_back(std::move(g));
    }
    sum_.clear();
    tokens_ = 0;
    count_ = 0;
    return out;
  }

 private:
  size_t factor_;
  std::vector<std::vector<double>> sum_;
  std::vector<num::Shape> shapes_;
  size_t tokens_ = 0;
  size_t count_ = 0;
};

/// Moments as "m.<name>" / "v.<name>" tensors, step count in the header.
template <class T>
void save_state(const AdamState<T>& state, const ParamSet<T>& params, const std::string& path,
                std::map<std::string, std::string> meta = {}) {
  num::TensorFile file;
  file.meta = std::move(meta);
  file.meta["adam.step"] = std::to_string(state.step);
  for (size_t i = 0; i < state.m.size(); ++i) {
    file.tensors.push_back({"m." + params.name(i), state.m[i].template cast<double>()});
    file.tensors.push_back({"v." + params.name(i), state.v[i].template cast<double>()});
  }
  num::write_tensor_file(path, file);
}

template <class T>
AdamState<T> load_state(const ParamSet<T>& params, const std::string& path) {
  auto file = num::read_tensor_file(path);
  AdamState<T> s;
  auto it = file.meta.find("adam.step");
  if (it == file.meta.end()) fail(ErrorKind::format, path + ": missing adam.step");
  s.step = std::stoull(it->second);
  if (file.tensors.size() != 2 * params.size()) fail(ErrorKind::format, path + ": optimizer state size mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& m = file.tensors[2 * i];
    const auto& v = file.tensors[2 * i + 1];
    if (m.name != "m." + params.name(i) || v.name != "v." + params.name(i) ||
        m.value.shape() != params.value(i).shape() || v.value.shape() != params.value(i).shape()) {
      fail(ErrorKind::format, path + ": optimizer state does not match parameter " + params.name(i));
    }
    s.m.push_back(m.value.template cast<T>());
    s.v.push_back(v.value.template cast<T>());
  }
  return s;
}

}  // namespace mmt::optim
