#include "spm/tensor.hpp"

#include <cmath>
#include <sstream>

namespace spm {

std::int64_t shape_product(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
  auto n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, float value) {
  auto n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value));
}

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace spm
