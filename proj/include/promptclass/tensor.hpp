#ifndef PROMPTCLASS_TENSOR_HPP
#define PROMPTCLASS_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <vector>

namespace promptclass {

/// Dense row-major tensor of rank 1 or 2. Rank-1 tensors act as a single
/// row wherever a matrix is expected.
template <typename T>
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<T> v;

  Tensor() = default;

  static Tensor vec(std::size_t n, T fill = T(0)) {
    Tensor t;
    t.dims = {n};
    t.v.assign(n, fill);
    return t;
  }

  static Tensor mat(std::size_t r, std::size_t c, T fill = T(0)) {
    Tensor t;
    t.dims = {r, c};
    t.v.assign(r * c, fill);
    return t;
  }

  static Tensor zeros_like(const Tensor& o) {
    Tensor t;
    t.dims = o.dims;
    t.v.assign(o.v.size(), T(0));
    return t;
  }

  std::size_t rank() const { return dims.size(); }
  std::size_t rows() const { return dims.size() == 2 ? dims[0] : 1; }
  std::size_t cols() const { return dims.empty() ? 0 : dims.back(); }
  std::size_t size() const { return v.size(); }

  T& at(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }
  T& operator[](std::size_t i) { return v[i]; }
  const T& operator[](std::size_t i) const { return v[i]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T* row_ptr(std::size_t r) { return v.data() + r * cols(); }
  const T* row_ptr(std::size_t r) const { return v.data() + r * cols(); }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  bool operator==(const Tensor& o) const { return dims == o.dims && v == o.v; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t;
    t.dims = dims;
    t.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) t.v[i] = static_cast<U>(v[i]);
    return t;
  }
};

}  // namespace promptclass

#endif  // PROMPTCLASS_TENSOR_HPP
