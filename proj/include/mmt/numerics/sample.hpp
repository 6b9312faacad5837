#pragma once

#include <cmath>
#include <span>
#include <string>

#include "mmt/core/error.hpp"
#include "mmt/core/rng.hpp"

namespace mmt::num {

/// Index drawn from a discrete distribution. `probs` must be non-negative
/// and sum to 1 within 1e-6.
inline size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  if (probs.empty()) fail(ErrorKind::value, "sample_categorical: empty distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      fail(ErrorKind::value, "sample_categorical: invalid probability " + std::to_string(p));
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    fail(ErrorKind::value, "sample_categorical: probabilities sum to " + std::to_string(total));
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  size_t last = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] == 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

}  // namespace mmt::num
