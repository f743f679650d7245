#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace bevloc {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace nn {

// Dense row-major tensor. float for inference/training, double for the
// verification instantiation used by gradient checks.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) {
      if (e < 0) throw Error("tensor extent must be non-negative");
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }

  static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }

  static TensorT full(std::vector<int> s, T value) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  static TensorT from(std::vector<int> s, std::vector<T> values) {
    if (count(s) != values.size()) throw Error("tensor data length does not match shape");
    TensorT t;
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
  }

  std::size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at2(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  const T& at2(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

  T& at3(int c, int i, int j) {
    return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
  }
  const T& at3(int c, int i, int j) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
  }

  T& at4(int n, int c, int i, int j) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + i) * shape[3] + j];
  }
  const T& at4(int n, int c, int i, int j) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + i) * shape[3] + j];
  }

  TensorT reshaped(std::vector<int> s) const {
    if (count(s) != data.size()) throw Error("reshape changes element count");
    TensorT t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> t;
    t.shape = shape;
    t.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<U>(data[i]);
    return t;
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace nn
}  // namespace bevloc
