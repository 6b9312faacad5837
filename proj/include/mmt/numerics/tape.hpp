#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/numerics/tensor.hpp"

namespace mmt::num {

struct ParamId {
  size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

/// Named trainable tensors. `decay` marks tensors subject to weight decay
/// (biases and layer-norm parameters are registered without it).
template <class T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool decay = true;
  };

  ParamId add(std::string name, Tensor<T> value, bool decay = true) {
    if (index_.count(name)) fail(ErrorKind::value, "duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(value), decay});
    return {entries_.size() - 1};
  }

  size_t size() const { return entries_.size(); }
  const Entry& entry(size_t i) const { return entries_.at(i); }
  const std::string& name(size_t i) const { return entries_.at(i).name; }
  Tensor<T>& value(ParamId id) { return entries_.at(id.index).value; }
  const Tensor<T>& value(ParamId id) const { return entries_.at(id.index).value; }
  Tensor<T>& value(size_t i) { return entries_.at(i).value; }
  const Tensor<T>& value(size_t i) const { return entries_.at(i).value; }
  bool decay(size_t i) const { return entries_.at(i).decay; }

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  ParamId id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::value, "unknown parameter " + name);
    return {it->second};
  }

  size_t count_scalars() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.decay);
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

/// One gradient tensor per parameter, in ParamSet order.
template <class T>
using Gradients = std::vector<Tensor<T>>;

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  uint32_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Records one forward pass. Nodes are appended in evaluation order, which is
/// a topological order, so backward walks them in reverse. A Tape is not
/// thread-safe and is meant to live for one forward/backward.
template <class T>
class Tape {
 public:
  using Pullback = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  /// With `track_grad` false, parameters enter as constants and no pullbacks
  /// are recorded (inference).
  explicit Tape(const ParamSet<T>* params = nullptr, bool track_grad = true)
      : params_(params), track_grad_(track_grad) {
    if (params_) param_nodes_.assign(params_->size(), -1);
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), nullptr, false); }

  /// Leaf for a parameter; repeated calls return the same node so shared
  /// (tied) parameters accumulate into one gradient.
  Var<T> param(ParamId id) {
    if (!params_) fail(ErrorKind::value, "tape has no parameter set");
    int& node = param_nodes_.at(id.index);
    if (node < 0) {
      Node n;
      n.view = &params_->value(id);
      n.requires_grad = track_grad_;
      n.param = static_cast<int>(id.index);
      nodes_.push_back(std::move(n));
      grads_.emplace_back();
      node = static_cast<int>(nodes_.size() - 1);
    }
    return {this, static_cast<uint32_t>(node)};
  }

  Var<T> param(const std::string& name) { return param(params_->id(name)); }

  /// Appends an op result. `pullback` is dropped when no input needs a gradient.
  Var<T> push(Tensor<T> value, Pullback pullback, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.pullback = std::move(pullback);
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return {this, static_cast<uint32_t>(nodes_.size() - 1)};
  }

  const Tensor<T>& value(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.view ? *n.view : n.owned;
  }

  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulator of a node, zero-initialized on first access.
  Tensor<T>& grad(Var<T> v) {
    auto& g = grads_.at(v.id);
    if (g.empty()) g = Tensor<T>(value(v).shape());
    return g;
  }

  size_t size() const { return nodes_.size(); }
  size_t last_visits() const { return visits_; }

  /// Reverse sweep from a scalar loss. Parameters unreachable from the loss
  /// receive zero gradients.
  Gradients<T> backward(Var<T> loss) {
    if (value(loss).size() != 1) {
      fail(ErrorKind::shape, "backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));
    }
    grad(loss)[0] = T(1);
    visits_ = 0;
    for (int64_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      auto& g = grads_[static_cast<size_t>(i)];
      if (g.empty() || !n.pullback) continue;
      ++visits_;
      n.pullback(*this, g);
    }
    Gradients<T> out;
    if (!params_) return out;
    out.reserve(params_->size());
    for (size_t p = 0; p < params_->size(); ++p) {
      const int node = param_nodes_[p];
      if (node >= 0 && !grads_[static_cast<size_t>(node)].empty()) {
        out.push_back(std::move(grads_[static_cast<size_t>(node)]));
      } else {
        out.emplace_back(params_->value(p).shape());
      }
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* view = nullptr;
    Pullback pullback;
    bool requires_grad = false;
    int param = -1;
  };

  const ParamSet<T>* params_;
  bool track_grad_ = true;
  std::vector<int> param_nodes_;
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  size_t visits_ = 0;
};

}  // namespace mmt::num
