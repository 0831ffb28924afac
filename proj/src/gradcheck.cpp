#include "flr/gradcheck.hpp"

#include <algorithm>

namespace flr {

GradCheckResult check_gradients(const std::function<Tensor(std::span<const Tensor>)>& f,
                                std::vector<Tensor> inputs, double step, double norm_floor) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f(inputs).backward();

  GradCheckResult result;
  for (auto& t : inputs) {
    const Matrix analytic = t.grad();
    Matrix numeric(analytic.rows(), analytic.cols());
    {
      NoGradGuard no_grad;
      Matrix& v = t.mutable_value();
      for (Index i = 0; i < v.size(); ++i) {
        const double saved = v.data()[i];
        v.data()[i] = saved + step;
        const double up = f(inputs).item();
        v.data()[i] = saved - step;
        const double down = f(inputs).item();
        v.data()[i] = saved;
        numeric.data()[i] = (up - down) / (2.0 * step);
      }
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), norm_floor});
    const double err = (analytic - numeric).norm() / denom;
    result.relative_errors.push_back(err);
    result.max_relative_error = std::max(result.max_relative_error, err);
  }
  return result;
}

}  // namespace flr
