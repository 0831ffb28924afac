#pragma once

#include <json.hpp>

#include "flr/tensor.hpp"

namespace flr {

// {"shape": [...], "data": [...]} debug dump; data is row-major.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace flr
