#pragma once

#include <cstdint>
#include <vector>

#include "otmatch/autodiff.hpp"

namespace otmatch {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. Moments are kept per parameter and keyed by
// position, so step() must always receive the parameter list in the
// same order it was constructed with.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const std::vector<Parameter*>& params, AdamConfig cfg);

  // Applies one update from the accumulated grads, then zeroes them.
  // Throws NumericError naming the parameter if a grad is non-finite.
  void step(const std::vector<Parameter*>& params);

  std::uint64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  std::size_t num_slots() const { return m_.size(); }
  Matrix& moment1(std::size_t i) { return m_[i]; }
  Matrix& moment2(std::size_t i) { return v_[i]; }
  const Matrix& moment1(std::size_t i) const { return m_[i]; }
  const Matrix& moment2(std::size_t i) const { return v_[i]; }
  void restore_t(std::uint64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace otmatch
