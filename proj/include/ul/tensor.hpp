#pragma once

#include <cstdint>
#include <vector>

#include "ul/common.hpp"

namespace ul {

// Dense row-major tensor of doubles. Rank 1 or 2 covers everything here;
// higher ranks are allowed but nothing produces them.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d);

  static Tensor zeros(std::vector<int> s);
  static Tensor full(std::vector<int> s, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;
  bool is_scalar() const { return numel() == 1; }
  double item() const;

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

std::size_t shape_numel(const std::vector<int>& s);
std::string shape_str(const std::vector<int>& s);

// Throws Error("contract") when t holds a NaN or infinity.
void require_finite(const Tensor& t, const std::string& who);

bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace ul
