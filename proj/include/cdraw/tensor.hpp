#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdraw {

using Shape = std::vector<int64_t>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Finite iff the exponent field is not all-ones (covers NaN and +-Inf).
inline bool float_finite(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  return ((bits >> 23) & 0xffu) != 0xffu;
}

// Dense row-major float32 tensor. Plain value type; copying copies data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_)
      if (d <= 0)
        throw std::invalid_argument("Tensor: nonpositive dim in " + shape_str(shape_));
    data_.assign((size_t)shape_size(shape_), 0.0f);
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, float v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
  }

  static Tensor from(Shape s, std::vector<float> vals) {
    if ((int64_t)vals.size() != shape_size(s))
      throw std::invalid_argument("Tensor::from: " + std::to_string(vals.size()) +
                                  " values for shape " + shape_str(s));
    Tensor t;
    t.shape_ = std::move(s);
    t.data_ = std::move(vals);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return (int)shape_.size(); }
  int64_t dim(int i) const { return shape_.at((size_t)i); }
  int64_t size() const { return (int64_t)data_.size(); }
  bool defined() const { return !shape_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](int64_t i) { return data_[(size_t)i]; }
  float operator[](int64_t i) const { return data_[(size_t)i]; }

  float& at(int64_t i, int64_t j) { return data_[(size_t)(i * shape_[1] + j)]; }
  float at(int64_t i, int64_t j) const { return data_[(size_t)(i * shape_[1] + j)]; }
  float& at(int64_t i, int64_t j, int64_t k) {
    return data_[(size_t)((i * shape_[1] + j) * shape_[2] + k)];
  }
  float at(int64_t i, int64_t j, int64_t k) const {
    return data_[(size_t)((i * shape_[1] + j) * shape_[2] + k)];
  }
  float& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data_[(size_t)(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  float at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data_[(size_t)(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != size())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor t;
    t.shape_ = std::move(s);
    t.data_ = data_;
    return t;
  }

  void check_finite(const char* where) const {
    for (float v : data_)
      if (!float_finite(v))
        throw std::runtime_error(std::string(where) + ": non-finite value in tensor " +
                                 shape_str(shape_));
  }

  bool bit_equal(const Tensor& o) const {
    return shape_ == o.shape_ &&
           std::memcmp(data_.data(), o.data_.data(), data_.size() * 4) == 0;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace cdraw
