#include "flr/tensor_json.hpp"

#include "flr/errors.hpp"

namespace flr {

nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json j;
  j["shape"] = t.shape();
  const Matrix& v = t.value();
  j["data"] = std::vector<double>(v.data(), v.data() + v.size());
  return j;
}

Tensor tensor_from_json(const nlohmann::json& j) {
  if (!j.contains("shape") || !j.contains("data")) throw DataError("tensor json needs shape and data");
  auto shape = j.at("shape").get<Shape>();
  auto data = j.at("data").get<std::vector<double>>();
  const Index cols = shape.empty() ? 1 : shape.back();
  const Index rows = cols == 0 ? 0 : static_cast<Index>(data.size()) / cols;
  if (rows * cols != static_cast<Index>(data.size())) throw ShapeError("tensor json: data does not fill shape");
  Matrix m = Eigen::Map<const Matrix>(data.data(), rows, cols);
  return Tensor(std::move(m), std::move(shape));
}

}  // namespace flr
