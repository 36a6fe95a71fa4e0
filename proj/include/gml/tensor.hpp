#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gml/common.hpp"

namespace gml {

using Shape = std::vector<std::int64_t>;

// Largest element count a single tensor may hold. Keeps file readers from
// allocating absurd buffers when dims are corrupt.
inline constexpr std::int64_t kMaxTensorElems = std::int64_t(1) << 31;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

// Validates a shape (all dims >= 1, product within bounds) and returns the
// element count.
inline std::int64_t checked_numel(const Shape& s) {
  if (s.empty()) throw DimError("tensor shape must have rank >= 1");
  std::int64_t n = 1;
  for (std::int64_t d : s) {
    if (d < 1) throw DimError("tensor dim must be >= 1, got shape " + shape_str(s));
    if (d > kMaxTensorElems || n > kMaxTensorElems / d)
      throw DimError("tensor too large: shape " + shape_str(s));
    n *= d;
  }
  return n;
}

// Dense row-major tensor (last dim fastest). Rank-5 tensors carry the
// (B,C,T,H,W) feature-map layout used throughout; kernels and classifier
// weights use lower ranks.
template <typename R>
struct Tensor {
  Shape shape;
  std::vector<R> data;

  Tensor() = default;

  explicit Tensor(Shape s, R fill = R(0)) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(checked_numel(shape)), fill);
  }

  Tensor(Shape s, std::vector<R> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != checked_numel(shape))
      throw DimError("tensor data length does not match shape " + shape_str(shape));
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool empty() const { return data.empty(); }

  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // (B,C,T,H,W) accessors for rank-5 maps.
  R& at5(std::int64_t b, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>((((b * shape[1] + c) * shape[2] + t) * shape[3] + h) * shape[4] + w)];
  }
  const R& at5(std::int64_t b, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) const {
    return data[static_cast<std::size_t>((((b * shape[1] + c) * shape[2] + t) * shape[3] + h) * shape[4] + w)];
  }

  R& at2(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
  const R& at2(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }

  R& at3(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const R& at3(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  void fill(R v) { std::fill(data.begin(), data.end(), v); }

  template <typename S>
  Tensor<S> cast() const {
    Tensor<S> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<S>(data[i]);
    return out;
  }
};

template <typename R>
bool same_shape(const Tensor<R>& a, const Tensor<R>& b) {
  return a.shape == b.shape;
}

template <typename R>
void require_rank(const Tensor<R>& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw DimError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                   shape_str(t.shape));
}

// Feature-map helpers. A feature map is a rank-5 tensor with dims (B,C,T,H,W).
template <typename R>
Tensor<R> feature_map(std::int64_t b, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w,
                      R fill = R(0)) {
  return Tensor<R>({b, c, t, h, w}, fill);
}

template <typename R>
void require_feature_map(const Tensor<R>& t, const char* what) {
  require_rank(t, 5, what);
}

template <typename R>
bool all_finite(const Tensor<R>& t) {
  for (R v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace gml
