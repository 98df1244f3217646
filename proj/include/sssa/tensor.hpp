#ifndef SSSA_TENSOR_HPP
#define SSSA_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "sssa/errors.hpp"

namespace sssa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor of doubles. Small and value-semantic; every other
// module builds on it.
struct RealTensor {
  Shape shape;
  std::vector<double> data;

  RealTensor() = default;
  explicit RealTensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(shape_numel(shape), fill) {}
  RealTensor(Shape s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const { return data.size(); }
  std::size_t extent(std::size_t axis) const { return shape.at(axis); }

  double& operator[](std::size_t flat) { return data[flat]; }
  double operator[](std::size_t flat) const { return data[flat]; }

  double& at(std::size_t i) { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  double at(std::size_t i) const { return data[i]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  RealTensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ShapeError("reshape from " + shape_str(shape) + " to " + shape_str(s));
    RealTensor out;
    out.shape = std::move(s);
    out.data = data;
    return out;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Binary {0,1} tensor carrying spike trains. Stored as bytes, not bit-packed.
struct SpikeTensor {
  Shape shape;
  std::vector<std::uint8_t> data;

  SpikeTensor() = default;
  explicit SpikeTensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0) {}
  SpikeTensor(Shape s, std::vector<std::uint8_t> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape))
      throw ShapeError("spike data length does not match shape " + shape_str(shape));
    for (std::uint8_t v : data)
      if (v > 1) throw DomainError("spike tensor element outside {0,1}");
  }

  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const { return data.size(); }
  std::size_t extent(std::size_t axis) const { return shape.at(axis); }

  std::uint8_t operator[](std::size_t flat) const { return data[flat]; }
  void set(std::size_t flat, bool fire) { data[flat] = fire ? 1 : 0; }

  std::uint8_t at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  std::uint8_t at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  RealTensor to_real() const {
    RealTensor out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = data[i];
    return out;
  }
};

namespace detail {

// SplitMix64 finalizer; a bijective 64-bit mix.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

}

// Counter-based RNG: draw i of a given (seed, counter) pair is a pure
// function of both, so Monte Carlo trials can be partitioned across
// execution contexts (via stream()) without changing any result.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  explicit RngState(std::uint64_t s = 0, std::uint64_t c = 0) : seed(s), counter(c) {}

  std::uint64_t next_u64() { return detail::mix64(seed + detail::kGamma * ++counter); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; two draws per call, nothing cached.
  double next_gaussian() {
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Independent substream; stream(i) and stream(j) are decorrelated for i != j.
  RngState stream(std::uint64_t idx) const {
    return RngState(detail::mix64(seed ^ detail::mix64(idx + detail::kGamma)), 0);
  }
};

// Each element fires independently with probability p.
inline SpikeTensor bernoulli_spikes(const Shape& shape, double p, RngState& rng) {
  if (!(p >= 0.0 && p <= 1.0))
    throw DomainError("firing rate p = " + std::to_string(p) + " outside [0,1]");
  SpikeTensor out(shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = rng.next_double() < p ? 1 : 0;
  return out;
}

// Standard matrix product with fixed row-major accumulation order, so equal
// inputs give bit-identical outputs everywhere.
inline RealTensor matmul(const RealTensor& a, const RealTensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 tensors, got " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  if (a.shape[1] != b.shape[0])
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  RealTensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t q = 0; q < k; ++q) acc += a.data[i * k + q] * b.data[q * n + j];
      out.data[i * n + j] = acc;
    }
  return out;
}

namespace detail {

template <class T>
RealTensor sum_axis_impl(const T& t, std::size_t axis) {
  if (axis >= t.rank())
    throw ShapeError("sum_axis: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(t.rank()));
  Shape out_shape;
  for (std::size_t i = 0; i < t.rank(); ++i)
    if (i != axis) out_shape.push_back(t.shape[i]);
  if (out_shape.empty()) out_shape.push_back(1);  // full reduction of a vector

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.shape[i];
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.shape[i];
  const std::size_t ext = t.shape[axis];

  RealTensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      double acc = 0.0;
      for (std::size_t e = 0; e < ext; ++e) acc += t.data[(o * ext + e) * inner + in];
      out.data[o * inner + in] = acc;
    }
  return out;
}

}

// Elementwise sums along one axis; output rank = input rank - 1.
inline RealTensor sum_axis(const RealTensor& t, std::size_t axis) {
  return detail::sum_axis_impl(t, axis);
}
inline RealTensor sum_axis(const SpikeTensor& t, std::size_t axis) {
  return detail::sum_axis_impl(t, axis);
}

inline void require_shape(const RealTensor& t, const Shape& s, const char* what) {
  if (t.shape != s)
    throw ShapeError(std::string(what) + ": expected " + shape_str(s) + ", got " +
                     shape_str(t.shape));
}

}

#endif
