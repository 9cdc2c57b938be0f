// Copyright 2026 The hoconv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "hoconv/tensor.hpp"

namespace hoconv {

/// Spatiotemporal window: n_t frames by an n_s x n_s square, stride 1, valid only.
struct WindowSpec {
  std::size_t n_t = 1;
  std::size_t n_s = 1;

  std::size_t volume() const { return n_t * n_s * n_s; }
  bool operator==(const WindowSpec&) const = default;
};

/// binomial(n + p, p): number of monomials of degree <= p in n variables.
/// Throws OverflowError rather than wrapping.
std::uint64_t count_monomials(std::uint64_t n, std::uint32_t p);

/// 1 / sqrt(count_monomials(n, p)); only defined for p >= 2.
double scale_factor(std::uint64_t n, std::uint32_t p);

/// Number of entries in a folded (i <= j [<= k]) coefficient array over m taps.
std::size_t folded_pair_count(std::size_t m);
std::size_t folded_triple_count(std::size_t m);

/// Offset of pair (i, j), i <= j, in row-major upper-triangular storage.
inline std::size_t pair_index(std::size_t i, std::size_t j, std::size_t m) {
  return i * m - i * (i - 1) / 2 + (j - i);
}

// Per-output-channel weights of a (higher-order) convolution. Arrays are
// channel-major: w1[c * m + i], w2[c * pairs + pair_index(i, j)], where m is
// the window volume times the input channel count. The order-2/3 scale
// factors are not stored; they are derived from the window at forward time.
struct HoKernelBank {
  int order = 1;
  std::size_t out_channels = 0;
  std::size_t in_channels = 1;
  std::vector<double> b;
  std::vector<double> w1;
  std::vector<double> w2;
  std::vector<double> w3;

  std::size_t taps() const { return out_channels == 0 ? 0 : w1.size() / out_channels; }

  static HoKernelBank zeros(int order, std::size_t out_channels, std::size_t in_channels,
                            const WindowSpec& window);

  /// w1 ~ U(-sqrt(1/m), sqrt(1/m)); higher orders draw from the same law times 0.1.
  static HoKernelBank initialized(int order, std::size_t out_channels, std::size_t in_channels,
                                  const WindowSpec& window, std::mt19937_64& rng);

  /// Throws ConfigError if the arrays do not fit the window.
  void check_against(const WindowSpec& window) const;

  /// Densify channel c's folded order-2 coefficients into a symmetric m x m
  /// matrix S with x^T S x equal to the folded quadratic form.
  std::vector<double> dense_quadratic(std::size_t c) const;

  bool operator==(const HoKernelBank&) const = default;
};

struct ConvGradients {
  VideoTensor grad_input;
  HoKernelBank grad_kernels;
};

/// Output shape of a valid, stride-1 convolution; ConfigError if the input is too small.
Shape conv_output_shape(const Shape& input, const WindowSpec& window, std::size_t out_channels);

/// Order-1 (standard) 3D convolution. Requires kernels.order == 1.
VideoTensor conv3d_forward(const VideoTensor& input, const HoKernelBank& kernels,
                           const WindowSpec& window);

/// Higher-order convolution (order 2, or 3 when enabled). Throws NumericError
/// naming the first non-finite output.
VideoTensor hoconv3d_forward(const VideoTensor& input, const HoKernelBank& kernels,
                             const WindowSpec& window);

/// Reference implementation by nested loops over the defining sum.
VideoTensor hoconv_oracle(const VideoTensor& input, const HoKernelBank& kernels,
                          const WindowSpec& window);

/// Analytic gradients for any order. grad_kernels has the shape of kernels.
ConvGradients hoconv3d_backward(const VideoTensor& input, const HoKernelBank& kernels,
                                const WindowSpec& window, const VideoTensor& upstream_grad);
ConvGradients conv3d_backward(const VideoTensor& input, const HoKernelBank& kernels,
                              const WindowSpec& window, const VideoTensor& upstream_grad);

// Batched paths used by the network layers. All samples share one shape.
// The forward dispatches on kernels.order.
std::vector<VideoTensor> forward_batch(std::span<const VideoTensor> inputs,
                                       const HoKernelBank& kernels, const WindowSpec& window);

/// Accumulates kernel gradients into *grad_kernels (which must be shaped like
/// kernels) and, if grad_inputs is non-null, writes one input gradient per sample.
void backward_batch(std::span<const VideoTensor> inputs, const HoKernelBank& kernels,
                    const WindowSpec& window, std::span<const VideoTensor> upstream,
                    HoKernelBank* grad_kernels, std::vector<VideoTensor>* grad_inputs);

/// Numerical rank of alpha2 * w w^T (singular values above 1e-10 * max).
std::size_t tied_weights_rank_check(std::span<const double> w, double alpha2);

/// Numerical rank of a dense symmetric n x n matrix, same threshold.
std::size_t numerical_rank_symmetric(std::span<const double> matrix, std::size_t n);

// Checkpoint fragment: u32 order, out_channels, n_t, n_s, C, then little-endian
// f64 arrays b, w1, w2 (and w3 for order 3).
void write_kernel_fragment(std::ostream& os, const HoKernelBank& kernels, const WindowSpec& window);
HoKernelBank read_kernel_fragment(std::istream& is, WindowSpec* window);

}  // namespace hoconv
