#pragma once

#include <functional>
#include <string>
#include <vector>

#include "otmatch/autodiff.hpp"

namespace otmatch {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_entry = 0;
};

// Central finite differences over every entry of every parameter.
// f(with_grad) evaluates the scalar objective; when with_grad is true it
// must also run backward so analytic gradients land in the parameters.
// f must be deterministic. The relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8). Throws NumericError if f returns a
// non-finite value.
GradCheckReport grad_check(const std::function<double(bool with_grad)>& f,
                           const std::vector<Parameter*>& params,
                           double eps = 1e-5);

}  // namespace otmatch
