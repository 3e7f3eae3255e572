#include "ul/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace ul {

std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) {
    UL_CHECK(d >= 0, "contract", "negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  UL_CHECK(shape_numel(shape) == data.size(), "contract",
           "tensor data size does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(std::vector<int> s) {
  std::size_t n = shape_numel(s);
  Tensor t;
  t.shape = std::move(s);
  t.data.assign(n, 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> s, double v) {
  std::size_t n = shape_numel(s);
  Tensor t;
  t.shape = std::move(s);
  t.data.assign(n, v);
  return t;
}

int Tensor::rows() const {
  UL_CHECK(ndim() >= 1, "contract", "rows() on rank-0 tensor");
  return ndim() == 1 ? 1 : shape[0];
}

int Tensor::cols() const {
  UL_CHECK(ndim() >= 1, "contract", "cols() on rank-0 tensor");
  return shape.back();
}

double Tensor::item() const {
  UL_CHECK(is_scalar(), "contract", "item() on non-scalar tensor");
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void require_finite(const Tensor& t, const std::string& who) {
  UL_CHECK(t.all_finite(), "contract", who + ": non-finite tensor value");
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  if (a.data.empty()) return true;
  return std::memcmp(a.data.data(), b.data.data(),
                     a.data.size() * sizeof(double)) == 0;
}

}  // namespace ul
