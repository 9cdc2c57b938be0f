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

#include "hoconv/hoconv.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>

#include "hoconv/binary_io.hpp"

namespace hoconv {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unsigned multiply that reports overflow instead of wrapping.
std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r))
    throw OverflowError("count_monomials: 64-bit arithmetic overflow");
  return r;
}

std::uint64_t gcd(std::uint64_t a, std::uint64_t b) {
  while (b != 0) {
    const std::uint64_t t = a % b;
    a = b;
    b = t;
  }
  return a;
}

// Rows of the im2col matrix are output positions (t, y, x) in row-major order;
// columns are window taps (r, i, j, channel) in row-major order.
RowMatrix im2col(const VideoTensor& input, const WindowSpec& window, const Shape& out) {
  const Shape& in = input.shape();
  const std::size_t m = window.volume() * in.c;
  const std::size_t rows = out.t * out.h * out.w;
  RowMatrix cols(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m));
  const double* src = input.values().data();
  const std::size_t row_len = window.n_s * in.c;
  std::size_t row = 0;
  for (std::size_t t = 0; t < out.t; ++t) {
    for (std::size_t y = 0; y < out.h; ++y) {
      for (std::size_t x = 0; x < out.w; ++x, ++row) {
        double* dst = cols.row(static_cast<Eigen::Index>(row)).data();
        for (std::size_t r = 0; r < window.n_t; ++r) {
          for (std::size_t i = 0; i < window.n_s; ++i) {
            const double* line = src + input.index(t + r, y + i, x, 0);
            std::copy(line, line + row_len, dst);
            dst += row_len;
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const double* cols, const WindowSpec& window, const Shape& out,
                VideoTensor& grad) {
  const Shape& in = grad.shape();
  const std::size_t row_len = window.n_s * in.c;
  const std::size_t m = window.volume() * in.c;
  double* dst = grad.values().data();
  std::size_t row = 0;
  for (std::size_t t = 0; t < out.t; ++t) {
    for (std::size_t y = 0; y < out.h; ++y) {
      for (std::size_t x = 0; x < out.w; ++x, ++row) {
        const double* g = cols + row * m;
        for (std::size_t r = 0; r < window.n_t; ++r) {
          for (std::size_t i = 0; i < window.n_s; ++i) {
            double* line = dst + grad.index(t + r, y + i, x, 0);
            for (std::size_t k = 0; k < row_len; ++k) line[k] += g[k];
            g += row_len;
          }
        }
      }
    }
  }
}

// Stacks the symmetric order-2 matrices of all channels side by side: m x (C*m).
RowMatrix stacked_quadratic(const HoKernelBank& k) {
  const std::size_t m = k.taps();
  RowMatrix s(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k.out_channels * m));
  for (std::size_t c = 0; c < k.out_channels; ++c) {
    const std::vector<double> dense = k.dense_quadratic(c);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c * m + j)) = dense[i * m + j];
  }
  return s;
}

double cubic_term(const double* x, const double* w3, std::size_t m) {
  double acc = 0.0;
  std::size_t idx = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) {
      const double xij = x[i] * x[j];
      for (std::size_t k = j; k < m; ++k) acc += w3[idx++] * xij * x[k];
    }
  return acc;
}

void check_finite(const VideoTensor& out, const char* op) {
  const auto& v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      const Shape& s = out.shape();
      const std::size_t c = i % s.c;
      const std::size_t x = (i / s.c) % s.w;
      const std::size_t y = (i / (s.c * s.w)) % s.h;
      const std::size_t t = i / (s.c * s.w * s.h);
      std::ostringstream msg;
      msg << op << ": non-finite output at (t=" << t << ", y=" << y << ", x=" << x
          << ", c=" << c << ")";
      throw NumericError(msg.str());
    }
  }
}

void check_batch(std::span<const VideoTensor> inputs) {
  HOCONV_REQUIRE(!inputs.empty(), ContractError, "convolution: empty batch");
  for (const auto& in : inputs)
    HOCONV_REQUIRE(in.shape() == inputs.front().shape(), ContractError,
                   "convolution: batch samples differ in shape");
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream s;
  s << "(" << t << ", " << h << ", " << w << ", " << c << ")";
  return s.str();
}

bool VideoTensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::uint64_t count_monomials(std::uint64_t n, std::uint32_t p) {
  HOCONV_REQUIRE(n >= 1, ContractError, "count_monomials: n must be >= 1");
  // binomial(n + p, p) built as a running product of exact binomials.
  std::uint64_t result = 1;
  for (std::uint64_t k = 1; k <= p; ++k) {
    if (n > std::numeric_limits<std::uint64_t>::max() - k)
      throw OverflowError("count_monomials: 64-bit arithmetic overflow");
    std::uint64_t num = n + k;
    std::uint64_t den = k;
    const std::uint64_t g1 = gcd(result, den);
    result /= g1;
    den /= g1;
    num /= den;  // den now divides num since result * num / den is integral
    result = checked_mul(result, num);
  }
  return result;
}

double scale_factor(std::uint64_t n, std::uint32_t p) {
  HOCONV_REQUIRE(p >= 2, ContractError, "scale_factor: order-1 kernels are never scaled");
  return 1.0 / std::sqrt(static_cast<double>(count_monomials(n, p)));
}

std::size_t folded_pair_count(std::size_t m) { return m * (m + 1) / 2; }
std::size_t folded_triple_count(std::size_t m) { return m * (m + 1) * (m + 2) / 6; }

HoKernelBank HoKernelBank::zeros(int order, std::size_t out_channels, std::size_t in_channels,
                                 const WindowSpec& window) {
  HOCONV_REQUIRE(order >= 1 && order <= 3, ConfigError, "kernel order must be 1, 2 or 3");
  HOCONV_REQUIRE(out_channels >= 1 && in_channels >= 1, ConfigError,
                 "kernel bank needs at least one input and output channel");
  HOCONV_REQUIRE(window.n_t >= 1 && window.n_s >= 1, ConfigError, "window extents must be >= 1");
  const std::size_t m = window.volume() * in_channels;
  HoKernelBank k;
  k.order = order;
  k.out_channels = out_channels;
  k.in_channels = in_channels;
  k.b.assign(out_channels, 0.0);
  k.w1.assign(out_channels * m, 0.0);
  if (order >= 2) k.w2.assign(out_channels * folded_pair_count(m), 0.0);
  if (order >= 3) k.w3.assign(out_channels * folded_triple_count(m), 0.0);
  return k;
}

HoKernelBank HoKernelBank::initialized(int order, std::size_t out_channels,
                                       std::size_t in_channels, const WindowSpec& window,
                                       std::mt19937_64& rng) {
  HoKernelBank k = zeros(order, out_channels, in_channels, window);
  const double half = std::sqrt(1.0 / static_cast<double>(k.taps()));
  std::uniform_real_distribution<double> u(-half, half);
  for (double& v : k.w1) v = u(rng);
  for (double& v : k.w2) v = 0.1 * u(rng);
  for (double& v : k.w3) v = 0.1 * u(rng);
  return k;
}

void HoKernelBank::check_against(const WindowSpec& window) const {
  HOCONV_REQUIRE(order >= 1 && order <= 3, ConfigError, "kernel order must be 1, 2 or 3");
  HOCONV_REQUIRE(out_channels >= 1, ConfigError, "kernel bank has no output channels");
  const std::size_t m = window.volume() * in_channels;
  std::ostringstream msg;
  msg << "kernel bank does not fit window " << window.n_t << "x" << window.n_s << "x"
      << window.n_s << " with " << in_channels << " input channel(s)";
  HOCONV_REQUIRE(b.size() == out_channels, ConfigError, msg.str());
  HOCONV_REQUIRE(w1.size() == out_channels * m, ConfigError, msg.str());
  HOCONV_REQUIRE(w2.size() == (order >= 2 ? out_channels * folded_pair_count(m) : 0),
                 ConfigError, msg.str());
  HOCONV_REQUIRE(w3.size() == (order >= 3 ? out_channels * folded_triple_count(m) : 0),
                 ConfigError, msg.str());
}

std::vector<double> HoKernelBank::dense_quadratic(std::size_t c) const {
  const std::size_t m = taps();
  std::vector<double> s(m * m, 0.0);
  if (order < 2) return s;
  const double* w = w2.data() + c * folded_pair_count(m);
  std::size_t idx = 0;
  for (std::size_t i = 0; i < m; ++i) {
    s[i * m + i] = w[idx++];
    for (std::size_t j = i + 1; j < m; ++j) {
      s[i * m + j] = 0.5 * w[idx];
      s[j * m + i] = 0.5 * w[idx];
      ++idx;
    }
  }
  return s;
}

Shape conv_output_shape(const Shape& in, const WindowSpec& window, std::size_t out_channels) {
  if (in.t < window.n_t || in.h < window.n_s || in.w < window.n_s) {
    std::ostringstream msg;
    msg << "input " << in.str() << " is smaller than window " << window.n_t << "x"
        << window.n_s << "x" << window.n_s;
    throw ConfigError(msg.str());
  }
  return Shape{in.t - window.n_t + 1, in.h - window.n_s + 1, in.w - window.n_s + 1, out_channels};
}

std::vector<VideoTensor> forward_batch(std::span<const VideoTensor> inputs,
                                       const HoKernelBank& k, const WindowSpec& window) {
  check_batch(inputs);
  HOCONV_REQUIRE(inputs.front().shape().c == k.in_channels, ConfigError,
                 "convolution: input channel count does not match kernel bank");
  k.check_against(window);
  const Shape out_shape = conv_output_shape(inputs.front().shape(), window, k.out_channels);
  const std::size_t m = k.taps();
  const std::size_t positions = out_shape.t * out_shape.h * out_shape.w;
  const std::size_t n = inputs.size();
  const auto em = static_cast<Eigen::Index>(m);
  const auto eout = static_cast<Eigen::Index>(k.out_channels);

  RowMatrix x(static_cast<Eigen::Index>(n * positions), em);
  for (std::size_t s = 0; s < n; ++s)
    x.middleRows(static_cast<Eigen::Index>(s * positions), static_cast<Eigen::Index>(positions)) =
        im2col(inputs[s], window, out_shape);

  Eigen::Map<const RowMatrix> w1(k.w1.data(), eout, em);
  RowMatrix y = x * w1.transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(k.b.data(), eout);

  if (k.order >= 2) {
    const double s2 = scale_factor(m, 2);
    const RowMatrix z = x * stacked_quadratic(k);
    for (Eigen::Index c = 0; c < eout; ++c)
      y.col(c) += s2 * (x.array() * z.middleCols(c * em, em).array()).rowwise().sum().matrix();
  }
  if (k.order >= 3) {
    const double s3 = scale_factor(m, 3);
    const std::size_t triples = folded_triple_count(m);
    for (Eigen::Index r = 0; r < y.rows(); ++r)
      for (std::size_t c = 0; c < k.out_channels; ++c)
        y(r, static_cast<Eigen::Index>(c)) +=
            s3 * cubic_term(x.row(r).data(), k.w3.data() + c * triples, m);
  }

  std::vector<VideoTensor> outputs;
  outputs.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double* base = y.data() + s * positions * k.out_channels;
    outputs.emplace_back(out_shape,
                         std::vector<double>(base, base + positions * k.out_channels));
    check_finite(outputs.back(), k.order >= 2 ? "hoconv3d_forward" : "conv3d_forward");
  }
  return outputs;
}

void backward_batch(std::span<const VideoTensor> inputs, const HoKernelBank& k,
                    const WindowSpec& window, std::span<const VideoTensor> upstream,
                    HoKernelBank* grad_kernels, std::vector<VideoTensor>* grad_inputs) {
  check_batch(inputs);
  k.check_against(window);
  HOCONV_REQUIRE(upstream.size() == inputs.size(), ContractError,
                 "conv backward: upstream batch size mismatch");
  const Shape out_shape = conv_output_shape(inputs.front().shape(), window, k.out_channels);
  for (const auto& g : upstream)
    HOCONV_REQUIRE(g.shape() == out_shape, ContractError,
                   "conv backward: upstream gradient shape " + g.shape().str() +
                       " != output shape " + out_shape.str());
  if (grad_kernels != nullptr) grad_kernels->check_against(window);

  const std::size_t m = k.taps();
  const std::size_t positions = out_shape.t * out_shape.h * out_shape.w;
  const std::size_t n = inputs.size();
  const auto em = static_cast<Eigen::Index>(m);
  const auto eout = static_cast<Eigen::Index>(k.out_channels);
  const auto rows = static_cast<Eigen::Index>(n * positions);

  RowMatrix x(rows, em);
  RowMatrix g(rows, eout);
  for (std::size_t s = 0; s < n; ++s) {
    const auto off = static_cast<Eigen::Index>(s * positions);
    x.middleRows(off, static_cast<Eigen::Index>(positions)) = im2col(inputs[s], window, out_shape);
    g.middleRows(off, static_cast<Eigen::Index>(positions)) =
        Eigen::Map<const RowMatrix>(upstream[s].values().data(),
                                    static_cast<Eigen::Index>(positions), eout);
  }

  const double s2 = k.order >= 2 ? scale_factor(m, 2) : 0.0;
  const double s3 = k.order >= 3 ? scale_factor(m, 3) : 0.0;

  if (grad_kernels != nullptr) {
    const Eigen::VectorXd gb = g.colwise().sum().transpose();
    for (std::size_t c = 0; c < k.out_channels; ++c) grad_kernels->b[c] += gb(static_cast<Eigen::Index>(c));
    Eigen::Map<RowMatrix>(grad_kernels->w1.data(), eout, em) += g.transpose() * x;
    if (k.order >= 2) {
      const std::size_t pairs = folded_pair_count(m);
      for (std::size_t c = 0; c < k.out_channels; ++c) {
        const Eigen::MatrixXd gram = x.transpose() * (g.col(static_cast<Eigen::Index>(c)).asDiagonal() * x);
        double* dst = grad_kernels->w2.data() + c * pairs;
        std::size_t idx = 0;
        for (Eigen::Index i = 0; i < em; ++i)
          for (Eigen::Index j = i; j < em; ++j) dst[idx++] += s2 * gram(i, j);
      }
    }
    if (k.order >= 3) {
      const std::size_t triples = folded_triple_count(m);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const double* xr = x.row(r).data();
        for (std::size_t c = 0; c < k.out_channels; ++c) {
          const double gs = s3 * g(r, static_cast<Eigen::Index>(c));
          if (gs == 0.0) continue;
          double* dst = grad_kernels->w3.data() + c * triples;
          std::size_t idx = 0;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i; j < m; ++j) {
              const double xij = gs * xr[i] * xr[j];
              for (std::size_t l = j; l < m; ++l) dst[idx++] += xij * xr[l];
            }
        }
      }
    }
  }

  if (grad_inputs == nullptr) return;

  // d y_c / d x = w1_c + 2 s2 S_c x (+ cubic terms).
  Eigen::Map<const RowMatrix> w1(k.w1.data(), eout, em);
  RowMatrix dx = g * w1;
  if (k.order >= 2) {
    const RowMatrix z = x * stacked_quadratic(k);
    for (Eigen::Index c = 0; c < eout; ++c)
      dx.array() += z.middleCols(c * em, em).array().colwise() * (2.0 * s2 * g.col(c).array());
  }
  if (k.order >= 3) {
    const std::size_t triples = folded_triple_count(m);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double* xr = x.row(r).data();
      double* dr = dx.row(r).data();
      for (std::size_t c = 0; c < k.out_channels; ++c) {
        const double gs = s3 * g(r, static_cast<Eigen::Index>(c));
        if (gs == 0.0) continue;
        const double* w = k.w3.data() + c * triples;
        std::size_t idx = 0;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = i; j < m; ++j)
            for (std::size_t l = j; l < m; ++l) {
              const double t = gs * w[idx++];
              dr[i] += t * xr[j] * xr[l];
              dr[j] += t * xr[i] * xr[l];
              dr[l] += t * xr[i] * xr[j];
            }
      }
    }
  }

  grad_inputs->clear();
  grad_inputs->reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    grad_inputs->emplace_back(inputs[s].shape(), 0.0);
    col2im_add(dx.data() + s * positions * m, window, out_shape, grad_inputs->back());
  }
}

VideoTensor conv3d_forward(const VideoTensor& input, const HoKernelBank& kernels,
                           const WindowSpec& window) {
  HOCONV_REQUIRE(kernels.order == 1, ContractError, "conv3d_forward: kernel order must be 1");
  return std::move(forward_batch(std::span(&input, 1), kernels, window).front());
}

VideoTensor hoconv3d_forward(const VideoTensor& input, const HoKernelBank& kernels,
                             const WindowSpec& window) {
  HOCONV_REQUIRE(kernels.order >= 2, ContractError, "hoconv3d_forward: kernel order must be >= 2");
  return std::move(forward_batch(std::span(&input, 1), kernels, window).front());
}

ConvGradients hoconv3d_backward(const VideoTensor& input, const HoKernelBank& kernels,
                                const WindowSpec& window, const VideoTensor& upstream_grad) {
  ConvGradients out;
  out.grad_kernels = HoKernelBank::zeros(kernels.order, kernels.out_channels,
                                         kernels.in_channels, window);
  std::vector<VideoTensor> gi;
  backward_batch(std::span(&input, 1), kernels, window, std::span(&upstream_grad, 1),
                 &out.grad_kernels, &gi);
  out.grad_input = std::move(gi.front());
  return out;
}

ConvGradients conv3d_backward(const VideoTensor& input, const HoKernelBank& kernels,
                              const WindowSpec& window, const VideoTensor& upstream_grad) {
  HOCONV_REQUIRE(kernels.order == 1, ContractError, "conv3d_backward: kernel order must be 1");
  return hoconv3d_backward(input, kernels, window, upstream_grad);
}

std::size_t numerical_rank_symmetric(std::span<const double> matrix, std::size_t n) {
  HOCONV_REQUIRE(matrix.size() == n * n, ContractError, "numerical_rank: matrix is not n x n");
  if (n == 0) return 0;
  Eigen::Map<const RowMatrix> a(matrix.data(), static_cast<Eigen::Index>(n),
                                static_cast<Eigen::Index>(n));
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
  const double top = sv.maxCoeff();
  if (top == 0.0) return 0;
  return static_cast<std::size_t>((sv.array() > 1e-10 * top).count());
}

std::size_t tied_weights_rank_check(std::span<const double> w, double alpha2) {
  const std::size_t n = w.size();
  std::vector<double> outer(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) outer[i * n + j] = alpha2 * w[i] * w[j];
  return numerical_rank_symmetric(outer, n);
}

void write_kernel_fragment(std::ostream& os, const HoKernelBank& k, const WindowSpec& window) {
  k.check_against(window);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(k.order));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(k.out_channels));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(window.n_t));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(window.n_s));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(k.in_channels));
  bin::put_f64_array(os, k.b);
  bin::put_f64_array(os, k.w1);
  bin::put_f64_array(os, k.w2);
  bin::put_f64_array(os, k.w3);
}

HoKernelBank read_kernel_fragment(std::istream& is, WindowSpec* window) {
  const auto order = bin::get<std::uint32_t>(is, "kernel order");
  const auto out = bin::get<std::uint32_t>(is, "kernel out_channels");
  const auto n_t = bin::get<std::uint32_t>(is, "kernel n_t");
  const auto n_s = bin::get<std::uint32_t>(is, "kernel n_s");
  const auto in = bin::get<std::uint32_t>(is, "kernel channels");
  if (order < 1 || order > 3 || out == 0 || n_t == 0 || n_s == 0 || in == 0 ||
      n_t > 4096 || n_s > 4096 || in > 4096 || out > (1u << 20))
    throw DataError("kernel fragment: malformed shape header");
  const WindowSpec w{n_t, n_s};
  HoKernelBank k;
  k.order = static_cast<int>(order);
  k.out_channels = out;
  k.in_channels = in;
  const std::size_t m = w.volume() * in;
  k.b = bin::get_f64_array(is, out, "kernel bias");
  k.w1 = bin::get_f64_array(is, out * m, "kernel w1");
  if (order >= 2) k.w2 = bin::get_f64_array(is, out * folded_pair_count(m), "kernel w2");
  if (order >= 3) k.w3 = bin::get_f64_array(is, out * folded_triple_count(m), "kernel w3");
  if (window != nullptr) *window = w;
  return k;
}

}  // namespace hoconv
