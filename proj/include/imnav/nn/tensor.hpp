#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "imnav/common.hpp"

namespace imnav::nn {

// Dense row-major tensor of doubles, rank <= 4. 2-D tensors are [rows, cols],
// conv inputs are [N, C, H, W].
struct Tensor {
  std::vector<int> dims;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)), v(count(dims), 0.0) {}
  Tensor(std::vector<int> d, std::vector<double> data) : dims(std::move(d)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != count(dims)) throw Error("Tensor: data/shape mismatch");
  }

  static int64_t count(const std::vector<int>& d) {
    int64_t n = 1;
    for (int x : d) n *= x;
    return n;
  }
  static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }
  static Tensor full(std::vector<int> d, double value) {
    Tensor t(std::move(d));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(double value) { return Tensor({1, 1}, {value}); }
  static Tensor row(std::vector<double> data) {
    const int n = static_cast<int>(data.size());
    return Tensor({1, n}, std::move(data));
  }
  static Tensor col(std::vector<double> data) {
    const int n = static_cast<int>(data.size());
    return Tensor({n, 1}, std::move(data));
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  int rows() const { return dims.at(0); }
  int cols() const { return dims.at(1); }

  double& at(int r, int c) { return v[static_cast<size_t>(r) * dims[1] + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * dims[1] + c]; }
  double& operator[](int64_t i) { return v[i]; }
  double operator[](int64_t i) const { return v[i]; }
  double item() const {
    if (size() != 1) throw Error("Tensor::item on non-scalar");
    return v[0];
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }
  void fill(double value) { std::fill(v.begin(), v.end(), value); }
  void zero() { fill(0.0); }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
    os << ']';
    return os.str();
  }
};

}  // namespace imnav::nn
