#pragma once

#include <functional>
#include <span>
#include <vector>

#include "flr/tensor.hpp"

namespace flr {

struct GradCheckResult {
  // ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, floor), per input.
  std::vector<double> relative_errors;
  double max_relative_error = 0.0;
};

// Compares backward() against central differences for every entry of every
// input. `f` must build a scalar from the given leaves.
GradCheckResult check_gradients(const std::function<Tensor(std::span<const Tensor>)>& f,
                                std::vector<Tensor> inputs, double step = 1e-5,
                                double norm_floor = 1e-6);

}  // namespace flr
