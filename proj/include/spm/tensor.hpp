#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace spm {

// Dense row-major float32 array (last index fastest). All model weights and
// activations live in these; the f64 verification path widens internally.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, float value);

  std::int64_t size() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // True when every element is finite.
  bool all_finite() const;

  std::string shape_str() const;
};

std::int64_t shape_product(const std::vector<std::int64_t>& shape);

}  // namespace spm
