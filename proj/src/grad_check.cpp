#include "otmatch/grad_check.hpp"

#include <cmath>

namespace otmatch {

namespace {
double checked_eval(const std::function<double(bool)>& f, bool with_grad) {
  const double v = f(with_grad);
  if (!std::isfinite(v))
    throw NumericError("grad_check: objective returned a non-finite value");
  return v;
}
}  // namespace

GradCheckReport grad_check(const std::function<double(bool)>& f,
                           const std::vector<Parameter*>& params, double eps) {
  for (Parameter* p : params) p->zero_grad();
  checked_eval(f, true);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t k = 0; k < p.value.data.size(); ++k) {
      const double saved = p.value.data[k];
      p.value.data[k] = saved + eps;
      const double fp = checked_eval(f, false);
      p.value.data[k] = saved - eps;
      const double fm = checked_eval(f, false);
      p.value.data[k] = saved;

      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi].data[k];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.id;
        report.worst_entry = k;
      }
    }
  }

  // Leave the analytic grads in place for callers that want to inspect
  // them after the check.
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    params[pi]->grad = analytic[pi];
  return report;
}

}  // namespace otmatch
