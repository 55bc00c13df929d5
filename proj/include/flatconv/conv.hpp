#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>

#include "flatconv/tensor.hpp"

namespace flatconv {

// Filter geometry (t, w, h, c) plus output channels and per-axis strides.
// A spatial-only filter has t == 1, a temporal-only filter has w == h == 1.
struct KernelSpec {
  std::size_t t = 1;
  std::size_t w = 1;
  std::size_t h = 1;
  std::size_t c = 1;
  std::size_t out_channels = 1;
  std::array<std::size_t, 3> strides{1, 1, 1};  // (temporal, x, y)
  bool bias = false;

  void validate() const;
  std::size_t taps() const { return t * w * h; }
  std::size_t weight_count() const { return taps() * c * out_channels + (bias ? out_channels : 0); }
};

// Weights laid out [k..., c, S] with the kernel extents first.
struct WeightTensor {
  Tensor weights;
  std::optional<Tensor> bias;

  std::size_t element_count() const { return weights.size() + (bias ? bias->size() : 0); }
};

// Output extent of a same-padded strided convolution: ceil(in / s).
std::size_t out_extent(std::size_t in, std::size_t kernel, std::size_t stride);

// x: [N, L, Cin], w: [k, Cin, S] -> [N, ceil(L/s), S]
Tensor conv1d(const Tensor& x, const WeightTensor& w, std::size_t stride);
Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t stride);

// x: [N, A, B, Cin], w: [ka, kb, Cin, S] -> [N, ceil(A/sa), ceil(B/sb), S]
Tensor conv2d(const Tensor& x, const WeightTensor& w, std::array<std::size_t, 2> strides);
Tensor conv2d(const Tensor& x, const Tensor& w, std::array<std::size_t, 2> strides);

// Reference 5D convolution. x: [B, T, X, Y, C], w: [t, w, h, C, S].
// The only operation in the library that allocates rank-5 tensors.
Tensor conv3d_oracle(const Tensor& x, const WeightTensor& w, std::array<std::size_t, 3> strides);
Tensor conv3d_oracle(const Tensor& x, const Tensor& w, std::array<std::size_t, 3> strides);

// While alive, every multiply executed by the kernels above is counted.
// Scopes nest; the innermost one receives the counts.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const;

  struct State;

 private:
  std::unique_ptr<State> state_;
  State* previous_;
};

}  // namespace flatconv
