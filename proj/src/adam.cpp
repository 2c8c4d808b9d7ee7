#include "otmatch/adam.hpp"

#include <cmath>

namespace otmatch {

AdamState::AdamState(const std::vector<Parameter*>& params, AdamConfig cfg)
    : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Parameter* p : params) {
    m_.emplace_back(p->value.rows, p->value.cols);
    v_.emplace_back(p->value.rows, p->value.cols);
  }
}

void AdamState::step(const std::vector<Parameter*>& params) {
  if (params.size() != m_.size())
    throw DimensionError("adam: " + std::to_string(params.size()) +
                         " parameters for " + std::to_string(m_.size()) +
                         " moment slots");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.value.same_shape(m_[i]))
      throw DimensionError("adam: parameter " + p.id +
                           " does not match its moment shape");
    if (!p.grad.all_finite())
      throw NumericError("adam: non-finite gradient in parameter " + p.id);
    if (!p.trainable) {
      p.zero_grad();
      continue;
    }
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    for (std::size_t k = 0; k < p.value.data.size(); ++k) {
      const double g = p.grad.data[k];
      m.data[k] = cfg_.beta1 * m.data[k] + (1.0 - cfg_.beta1) * g;
      v.data[k] = cfg_.beta2 * v.data[k] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m.data[k] / c1;
      const double vhat = v.data[k] / c2;
      p.value.data[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
    p.zero_grad();
  }
}

}  // namespace otmatch
