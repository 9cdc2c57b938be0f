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

#include "hoconv/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "hoconv/binary_io.hpp"
#include "hoconv/container.hpp"

namespace hoconv {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kPoissonEps = 1e-8;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

bool is_conv(LayerKind k) { return k == LayerKind::kConv3d || k == LayerKind::kHoConv3d; }

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::mt19937_64 layer_stream(std::uint64_t seed, std::size_t layer) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(layer), 0x4c41u};
  return std::mt19937_64(seq);
}

struct ArrayView {
  std::size_t layer;
  const char* name;
  std::vector<double>* values;
};

std::vector<ArrayView> arrays_of(const NetworkSpec& spec, std::vector<LayerParams>& params) {
  std::vector<ArrayView> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    LayerParams& p = params[i];
    switch (spec.layers[i].kind) {
      case LayerKind::kConv3d:
      case LayerKind::kHoConv3d:
        out.push_back({i, "b", &p.kernels.b});
        out.push_back({i, "w1", &p.kernels.w1});
        if (p.kernels.order >= 2) out.push_back({i, "w2", &p.kernels.w2});
        if (p.kernels.order >= 3) out.push_back({i, "w3", &p.kernels.w3});
        break;
      case LayerKind::kBatchNorm:
        out.push_back({i, "gamma", &p.gamma});
        out.push_back({i, "beta", &p.beta});
        break;
      case LayerKind::kDense:
        out.push_back({i, "weight", &p.weight});
        out.push_back({i, "bias", &p.bias});
        break;
      default:
        break;
    }
  }
  return out;
}

LayerParams zeros_like(const LayerParams& p) {
  LayerParams z;
  z.kernels = p.kernels;
  for (auto* v : {&z.kernels.b, &z.kernels.w1, &z.kernels.w2, &z.kernels.w3}) std::fill(v->begin(), v->end(), 0.0);
  z.gamma.assign(p.gamma.size(), 0.0);
  z.beta.assign(p.beta.size(), 0.0);
  z.weight.assign(p.weight.size(), 0.0);
  z.bias.assign(p.bias.size(), 0.0);
  return z;
}

// Activations flowing between layers: a batch of videos before flatten, a
// (batch, features) matrix after.
struct Act {
  std::vector<VideoTensor> videos;
  RowMatrix flat;
  bool is_flat = false;
};

struct LayerCache {
  Act input;
  std::vector<double> inv_std;    // batch norm
  std::vector<VideoTensor> xhat;  // batch norm
  Shape flat_shape;               // flatten
};

void batch_norm_forward(const NetworkSpec& spec, LayerParams& p, Act& a, Mode mode, LayerCache* cache) {
  const std::size_t ch = p.gamma.size();
  HOCONV_REQUIRE(!a.is_flat && !a.videos.empty() && a.videos.front().shape().c == ch, ConfigError,
                 "batch_norm: channel count mismatch");
  std::vector<double> mean(ch, 0.0), var(ch, 0.0), inv(ch);
  if (mode == Mode::kTrain) {
    std::size_t count = 0;
    for (const auto& v : a.videos) {
      const auto& d = v.values();
      for (std::size_t i = 0; i < d.size(); ++i) mean[i % ch] += d[i];
      count += d.size() / ch;
    }
    for (double& m : mean) m /= static_cast<double>(count);
    for (const auto& v : a.videos) {
      const auto& d = v.values();
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double e = d[i] - mean[i % ch];
        var[i % ch] += e * e;
      }
    }
    for (std::size_t c = 0; c < ch; ++c) {
      const double biased = var[c] / static_cast<double>(count);
      const double unbiased = count > 1 ? var[c] / static_cast<double>(count - 1) : biased;
      var[c] = biased;
      p.running_mean[c] = (1.0 - spec.bn_momentum) * p.running_mean[c] + spec.bn_momentum * mean[c];
      p.running_var[c] = (1.0 - spec.bn_momentum) * p.running_var[c] + spec.bn_momentum * unbiased;
    }
  } else {
    mean = p.running_mean;
    var = p.running_var;
  }
  for (std::size_t c = 0; c < ch; ++c) inv[c] = 1.0 / std::sqrt(var[c] + spec.bn_eps);
  if (cache != nullptr) {
    cache->inv_std = inv;
    cache->xhat.clear();
  }
  for (auto& v : a.videos) {
    auto& d = v.values();
    if (cache != nullptr) cache->xhat.emplace_back(v.shape());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t c = i % ch;
      const double xh = (d[i] - mean[c]) * inv[c];
      if (cache != nullptr) cache->xhat.back().values()[i] = xh;
      d[i] = p.gamma[c] * xh + p.beta[c];
    }
  }
}

Act run_forward(const NetworkSpec& spec, std::vector<LayerParams>& params, std::span<const VideoTensor> batch,
                Mode mode, std::vector<LayerCache>* caches,
                std::vector<std::vector<double>>* per_layer = nullptr) {
  HOCONV_REQUIRE(!batch.empty(), ContractError, "forward_network: empty batch");
  for (const auto& x : batch)
    HOCONV_REQUIRE(x.shape() == spec.input, ConfigError,
                   "forward_network: input shape " + x.shape().str() + " does not match network input " +
                       spec.input.str());
  Act a;
  a.videos.assign(batch.begin(), batch.end());
  if (caches != nullptr) caches->assign(spec.layers.size(), LayerCache{});
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& L = spec.layers[li];
    LayerParams& p = params[li];
    if (caches != nullptr && L.kind != LayerKind::kBatchNorm) (*caches)[li].input = a;
    switch (L.kind) {
      case LayerKind::kConv3d:
      case LayerKind::kHoConv3d:
        a.videos = forward_batch(a.videos, p.kernels, L.window);
        break;
      case LayerKind::kBatchNorm:
        batch_norm_forward(spec, p, a, mode, caches != nullptr ? &(*caches)[li] : nullptr);
        break;
      case LayerKind::kRelu:
        if (a.is_flat)
          a.flat = a.flat.cwiseMax(0.0);
        else
          for (auto& v : a.videos)
            for (double& x : v.values()) x = std::max(x, 0.0);
        break;
      case LayerKind::kFlatten: {
        const std::size_t f = a.videos.front().size();
        if (caches != nullptr) (*caches)[li].flat_shape = a.videos.front().shape();
        a.flat.resize(static_cast<Eigen::Index>(a.videos.size()), static_cast<Eigen::Index>(f));
        for (std::size_t s = 0; s < a.videos.size(); ++s)
          a.flat.row(static_cast<Eigen::Index>(s)) =
              Eigen::Map<const Eigen::RowVectorXd>(a.videos[s].values().data(), static_cast<Eigen::Index>(f));
        a.videos.clear();
        a.is_flat = true;
        break;
      }
      case LayerKind::kDense: {
        const auto out = static_cast<Eigen::Index>(p.bias.size());
        Eigen::Map<const RowMatrix> w(p.weight.data(), out, a.flat.cols());
        RowMatrix z = a.flat * w.transpose();
        z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(p.bias.data(), out);
        a.flat = std::move(z);
        break;
      }
      case LayerKind::kSoftplus:
        a.flat = a.flat.unaryExpr([](double z) { return softplus(z); });
        break;
    }
    if (per_layer != nullptr) {
      if (a.is_flat)
        per_layer->emplace_back(a.flat.data(), a.flat.data() + a.flat.size());
      else
        per_layer->push_back(a.videos.front().values());
    }
  }
  return a;
}

void run_backward(const NetworkSpec& spec, const std::vector<LayerParams>& params, std::vector<LayerCache>& caches,
                  RowMatrix grad_out, std::vector<LayerParams>& grads) {
  Act g;
  g.flat = std::move(grad_out);
  g.is_flat = true;
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const LayerSpec& L = spec.layers[li];
    const LayerParams& p = params[li];
    LayerCache& cache = caches[li];
    LayerParams& gp = grads[li];
    switch (L.kind) {
      case LayerKind::kSoftplus: {
        const RowMatrix& z = cache.input.flat;
        g.flat = g.flat.cwiseProduct(z.unaryExpr([](double v) { return sigmoid(v); }));
        break;
      }
      case LayerKind::kDense: {
        const RowMatrix& x = cache.input.flat;
        const auto out = static_cast<Eigen::Index>(p.bias.size());
        Eigen::Map<RowMatrix>(gp.weight.data(), out, x.cols()) += g.flat.transpose() * x;
        const Eigen::RowVectorXd gb = g.flat.colwise().sum();
        for (Eigen::Index o = 0; o < out; ++o) gp.bias[static_cast<std::size_t>(o)] += gb(o);
        Eigen::Map<const RowMatrix> w(p.weight.data(), out, x.cols());
        g.flat = g.flat * w;
        break;
      }
      case LayerKind::kFlatten: {
        std::vector<VideoTensor> vids;
        for (Eigen::Index s = 0; s < g.flat.rows(); ++s) {
          std::vector<double> d(g.flat.row(s).data(), g.flat.row(s).data() + g.flat.cols());
          vids.emplace_back(cache.flat_shape, std::move(d));
        }
        g.videos = std::move(vids);
        g.is_flat = false;
        break;
      }
      case LayerKind::kRelu: {
        if (g.is_flat) {
          g.flat = g.flat.cwiseProduct((cache.input.flat.array() > 0.0).cast<double>().matrix());
        } else {
          for (std::size_t s = 0; s < g.videos.size(); ++s) {
            auto& d = g.videos[s].values();
            const auto& x = cache.input.videos[s].values();
            for (std::size_t i = 0; i < d.size(); ++i)
              if (!(x[i] > 0.0)) d[i] = 0.0;
          }
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        const std::size_t ch = p.gamma.size();
        std::vector<double> sum_dy(ch, 0.0), sum_dy_xhat(ch, 0.0);
        std::size_t count = 0;
        for (std::size_t s = 0; s < g.videos.size(); ++s) {
          const auto& d = g.videos[s].values();
          const auto& xh = cache.xhat[s].values();
          for (std::size_t i = 0; i < d.size(); ++i) {
            sum_dy[i % ch] += d[i];
            sum_dy_xhat[i % ch] += d[i] * xh[i];
          }
          count += d.size() / ch;
        }
        for (std::size_t c = 0; c < ch; ++c) {
          gp.gamma[c] += sum_dy_xhat[c];
          gp.beta[c] += sum_dy[c];
        }
        const double n = static_cast<double>(count);
        for (std::size_t s = 0; s < g.videos.size(); ++s) {
          auto& d = g.videos[s].values();
          const auto& xh = cache.xhat[s].values();
          for (std::size_t i = 0; i < d.size(); ++i) {
            const std::size_t c = i % ch;
            d[i] = p.gamma[c] * cache.inv_std[c] / n *
                   (n * d[i] - sum_dy[c] - xh[i] * sum_dy_xhat[c]);
          }
        }
        break;
      }
      case LayerKind::kConv3d:
      case LayerKind::kHoConv3d: {
        std::vector<VideoTensor> gin;
        backward_batch(cache.input.videos, p.kernels, L.window, g.videos, &gp.kernels, li == 0 ? nullptr : &gin);
        g.videos = std::move(gin);
        break;
      }
    }
  }
}

LayerKind parse_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::kConv3d, LayerKind::kHoConv3d, LayerKind::kBatchNorm, LayerKind::kRelu,
                      LayerKind::kFlatten, LayerKind::kDense, LayerKind::kSoftplus})
    if (layer_kind_name(k) == s) return k;
  throw ConfigError("unknown layer kind '" + s + "'");
}

std::size_t parse_count(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("architecture text: bad " + what + " '" + s + "'");
  }
}

}  // namespace

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv3d: return "conv3d";
    case LayerKind::kHoConv3d: return "hoconv3d";
    case LayerKind::kBatchNorm: return "batch_norm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense";
    case LayerKind::kSoftplus: return "softplus";
  }
  return "unknown";
}

std::string NetworkSpec::canonical() const {
  std::ostringstream os;
  os << "input " << input.t << 'x' << input.h << 'x' << input.w << 'x' << input.c
     << " bn_momentum=" << fmt_double(bn_momentum) << " bn_eps=" << fmt_double(bn_eps);
  for (const auto& l : layers) {
    os << "; " << layer_kind_name(l.kind);
    if (is_conv(l.kind))
      os << " order=" << l.order << " window=" << l.window.n_t << 'x' << l.window.n_s << " units=" << l.units;
    if (l.kind == LayerKind::kDense) os << " units=" << l.units;
  }
  return os.str();
}

NetworkSpec NetworkSpec::parse(const std::string& text) {
  NetworkSpec spec;
  std::vector<std::string> clauses;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find(';', start);
    std::string c = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    c.erase(0, c.find_first_not_of(' '));
    c.erase(c.find_last_not_of(' ') + 1);
    clauses.push_back(c);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  HOCONV_REQUIRE(!clauses.empty(), ConfigError, "architecture text is empty");
  for (std::size_t ci = 0; ci < clauses.size(); ++ci) {
    std::istringstream is(clauses[ci]);
    std::string head;
    is >> head;
    std::vector<std::string> fields;
    for (std::string f; is >> f;) fields.push_back(f);
    if (ci == 0) {
      HOCONV_REQUIRE(head == "input" && !fields.empty(), ConfigError, "architecture text must start with 'input'");
      std::array<std::size_t, 4> dims{};
      std::istringstream ds(fields[0]);
      std::string part;
      for (std::size_t k = 0; k < 4; ++k) {
        HOCONV_REQUIRE(static_cast<bool>(std::getline(ds, part, 'x')), ConfigError, "architecture text: bad input shape");
        dims[k] = parse_count(part, "input dimension");
      }
      spec.input = Shape{dims[0], dims[1], dims[2], dims[3]};
      for (std::size_t k = 1; k < fields.size(); ++k) {
        const auto eq = fields[k].find('=');
        HOCONV_REQUIRE(eq != std::string::npos, ConfigError, "architecture text: bad field " + fields[k]);
        const std::string key = fields[k].substr(0, eq);
        const double v = std::stod(fields[k].substr(eq + 1));
        if (key == "bn_momentum") spec.bn_momentum = v;
        else if (key == "bn_eps") spec.bn_eps = v;
        else throw ConfigError("architecture text: unknown input field " + key);
      }
      continue;
    }
    LayerSpec l;
    l.kind = parse_kind(head);
    for (const auto& f : fields) {
      const auto eq = f.find('=');
      HOCONV_REQUIRE(eq != std::string::npos, ConfigError, "architecture text: bad field " + f);
      const std::string key = f.substr(0, eq);
      const std::string val = f.substr(eq + 1);
      if (key == "order") {
        l.order = static_cast<int>(parse_count(val, "order"));
      } else if (key == "units") {
        l.units = parse_count(val, "units");
      } else if (key == "window") {
        const auto x = val.find('x');
        HOCONV_REQUIRE(x != std::string::npos, ConfigError, "architecture text: bad window " + val);
        l.window = {parse_count(val.substr(0, x), "window"), parse_count(val.substr(x + 1), "window")};
      } else {
        throw ConfigError("architecture text: unknown field " + key);
      }
    }
    spec.layers.push_back(l);
  }
  spec.propagate();
  return spec;
}

std::vector<Shape> NetworkSpec::propagate() const {
  HOCONV_REQUIRE(input.volume() > 0, ConfigError, "network input shape " + input.str() + " is empty");
  HOCONV_REQUIRE(layers.size() >= 2 && layers[layers.size() - 2].kind == LayerKind::kDense &&
                     layers.back().kind == LayerKind::kSoftplus,
                 ConfigError, "network must end in (dense, softplus)");
  HOCONV_REQUIRE(bn_momentum > 0.0 && bn_momentum <= 1.0 && bn_eps > 0.0, ConfigError,
                 "batch norm momentum must be in (0, 1] and eps > 0");
  std::vector<Shape> shapes;
  Shape s = input;
  bool flat = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + "): ";
    switch (l.kind) {
      case LayerKind::kConv3d:
      case LayerKind::kHoConv3d:
        HOCONV_REQUIRE(!flat, ConfigError, where + "convolution after flatten");
        HOCONV_REQUIRE(l.units >= 1, ConfigError, where + "needs units >= 1");
        HOCONV_REQUIRE(l.window.n_t >= 1 && l.window.n_s >= 1, ConfigError, where + "empty window");
        HOCONV_REQUIRE(l.kind == LayerKind::kConv3d ? l.order == 1 : (l.order == 2 || l.order == 3), ConfigError,
                       where + "order must be 1 for conv3d and 2 or 3 for hoconv3d");
        try {
          s = conv_output_shape(s, l.window, l.units);
        } catch (const ConfigError& e) {
          throw ConfigError(where + e.what());
        }
        break;
      case LayerKind::kBatchNorm:
        HOCONV_REQUIRE(!flat, ConfigError, where + "batch norm is only supported before flatten");
        break;
      case LayerKind::kRelu:
        break;
      case LayerKind::kFlatten:
        HOCONV_REQUIRE(!flat, ConfigError, where + "already flat");
        s = Shape{1, 1, 1, s.volume()};
        flat = true;
        break;
      case LayerKind::kDense:
        HOCONV_REQUIRE(flat, ConfigError, where + "dense requires a preceding flatten");
        HOCONV_REQUIRE(l.units >= 1, ConfigError, where + "needs units >= 1");
        s = Shape{1, 1, 1, l.units};
        break;
      case LayerKind::kSoftplus:
        HOCONV_REQUIRE(flat, ConfigError, where + "softplus is only supported after dense");
        break;
    }
    shapes.push_back(s);
  }
  return shapes;
}

std::size_t NetworkSpec::output_units() const { return layers[layers.size() - 2].units; }

NetworkSpec make_two_block_spec(const Shape& input, const WindowSpec& first, const WindowSpec& second,
                                std::size_t channels1, std::size_t channels2, std::size_t cells, int first_order) {
  NetworkSpec s;
  s.input = input;
  s.layers = {{first_order == 1 ? LayerKind::kConv3d : LayerKind::kHoConv3d, first, channels1, first_order},
              {LayerKind::kBatchNorm, {}, 0, 1},
              {LayerKind::kRelu, {}, 0, 1},
              {LayerKind::kConv3d, second, channels2, 1},
              {LayerKind::kBatchNorm, {}, 0, 1},
              {LayerKind::kRelu, {}, 0, 1},
              {LayerKind::kFlatten, {}, 0, 1},
              {LayerKind::kDense, {}, cells, 1},
              {LayerKind::kSoftplus, {}, 0, 1}};
  s.propagate();
  return s;
}

NetworkState NetworkState::initialize(const NetworkSpec& spec, std::uint64_t seed) {
  const auto shapes = spec.propagate();
  NetworkState st;
  st.spec = spec;
  st.rng_seed = seed;
  Shape in = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerParams p;
    auto rng = layer_stream(seed, i);
    if (is_conv(l.kind)) {
      p.kernels = HoKernelBank::initialized(l.order, l.units, in.c, l.window, rng);
    } else if (l.kind == LayerKind::kBatchNorm) {
      p.gamma.assign(in.c, 1.0);
      p.beta.assign(in.c, 0.0);
      p.running_mean.assign(in.c, 0.0);
      p.running_var.assign(in.c, 1.0);
    } else if (l.kind == LayerKind::kDense) {
      const std::size_t fan_in = in.volume();
      const double half = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-half, half);
      p.weight.resize(l.units * fan_in);
      for (double& v : p.weight) v = u(rng);
      p.bias.assign(l.units, 0.0);
    }
    st.params.push_back(std::move(p));
    in = shapes[i];
  }
  for (const auto& a : st.parameter_arrays()) {
    st.moment1.emplace_back(a.values->size(), 0.0);
    st.moment2.emplace_back(a.values->size(), 0.0);
  }
  return st;
}

std::vector<NetworkState::ArrayRef> NetworkState::parameter_arrays() {
  std::vector<ArrayRef> out;
  for (const auto& a : arrays_of(spec, params)) out.push_back({a.layer, a.name, a.values});
  return out;
}

std::vector<std::pair<std::size_t, std::string>> NetworkState::parameter_names() const {
  auto copy = params;
  std::vector<std::pair<std::size_t, std::string>> out;
  for (const auto& a : arrays_of(spec, copy)) out.emplace_back(a.layer, a.name);
  return out;
}

std::vector<double> forward_network(NetworkState& state, std::span<const VideoTensor> batch, Mode mode) {
  Act a = run_forward(state.spec, state.params, batch, mode, nullptr);
  return {a.flat.data(), a.flat.data() + a.flat.size()};
}

std::vector<double> forward_network(const NetworkState& state, const VideoTensor& input) {
  auto params = state.params;
  Act a = run_forward(state.spec, params, std::span(&input, 1), Mode::kEval, nullptr);
  return {a.flat.data(), a.flat.data() + a.flat.size()};
}

std::vector<std::vector<double>> layer_activations(const NetworkState& state, const VideoTensor& input) {
  auto params = state.params;
  std::vector<std::vector<double>> out;
  run_forward(state.spec, params, std::span(&input, 1), Mode::kEval, nullptr, &out);
  return out;
}

double poisson_nll(std::span<const double> rates, std::span<const double> counts) {
  HOCONV_REQUIRE(rates.size() == counts.size(), ContractError, "poisson_nll: length mismatch");
  HOCONV_REQUIRE(!rates.empty(), ContractError, "poisson_nll: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    HOCONV_REQUIRE(counts[i] >= 0.0, DataError, "poisson_nll: negative spike count");
    if (!std::isfinite(rates[i])) throw NumericError("poisson_nll: non-finite rate at index " + std::to_string(i));
    HOCONV_REQUIRE(rates[i] >= 0.0, ContractError, "poisson_nll: negative rate");
    const double l = rates[i] + kPoissonEps;
    sum += l - counts[i] * std::log(l);
  }
  return sum / static_cast<double>(rates.size());
}

std::vector<double> poisson_nll_grad(std::span<const double> rates, std::span<const double> counts) {
  HOCONV_REQUIRE(rates.size() == counts.size(), ContractError, "poisson_nll: length mismatch");
  std::vector<double> g(rates.size());
  const double n = static_cast<double>(rates.size());
  for (std::size_t i = 0; i < rates.size(); ++i) g[i] = (1.0 - counts[i] / (rates[i] + kPoissonEps)) / n;
  return g;
}

double loss_and_gradients(NetworkState& state, std::span<const VideoTensor> batch, std::span<const double> counts,
                          NetworkGrads* grads) {
  std::vector<LayerCache> caches;
  Act a = run_forward(state.spec, state.params, batch, Mode::kTrain, &caches);
  std::span<const double> rates(a.flat.data(), static_cast<std::size_t>(a.flat.size()));
  const double loss = poisson_nll(rates, counts);
  if (grads != nullptr) {
    if (grads->params.size() != state.params.size()) {
      grads->params.clear();
      for (const auto& p : state.params) grads->params.push_back(zeros_like(p));
    }
    const auto g = poisson_nll_grad(rates, counts);
    RowMatrix go = Eigen::Map<const RowMatrix>(g.data(), a.flat.rows(), a.flat.cols());
    run_backward(state.spec, state.params, caches, std::move(go), grads->params);
  }
  return loss;
}

void TrainConfig::validate() const {
  HOCONV_REQUIRE(val_fraction > 0.0 && val_fraction < 1.0, ConfigError, "val_fraction must be in (0, 1)");
  HOCONV_REQUIRE(lr > 0.0, ConfigError, "lr must be > 0");
  HOCONV_REQUIRE(weight_decay >= 0.0, ConfigError, "weight_decay must be >= 0");
  HOCONV_REQUIRE(batch_size >= 1, ConfigError, "batch_size must be >= 1");
  HOCONV_REQUIRE(max_epochs >= 1, ConfigError, "max_epochs must be >= 1");
  HOCONV_REQUIRE(scheduler.factor > 0.0 && scheduler.factor < 1.0, ConfigError, "scheduler factor must be in (0, 1)");
  HOCONV_REQUIRE(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0, ConfigError,
                 "Adam betas must be in [0, 1) and eps > 0");
}

void adamw_step(NetworkState& state, NetworkGrads& grads, const TrainConfig& cfg, double lr) {
  auto params = arrays_of(state.spec, state.params);
  auto g = arrays_of(state.spec, grads.params);
  HOCONV_REQUIRE(params.size() == g.size() && params.size() == state.moment1.size(), ContractError,
                 "adamw_step: gradient structure does not match parameters");
  for (std::size_t a = 0; a < g.size(); ++a) {
    HOCONV_REQUIRE(g[a].values->size() == params[a].values->size(), ContractError,
                   "adamw_step: gradient shape mismatch");
    for (double v : *g[a].values)
      if (!std::isfinite(v))
        throw NumericError("adamw_step: non-finite gradient in layer " + std::to_string(params[a].layer) + " (" +
                           layer_kind_name(state.spec.layers[params[a].layer].kind) + ") parameter " +
                           params[a].name);
  }
  const double t = static_cast<double>(state.step_count + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t a = 0; a < params.size(); ++a) {
    const std::string name = params[a].name;
    if (cfg.freeze_higher_order && (name == "w2" || name == "w3")) continue;
    auto& th = *params[a].values;
    const auto& gr = *g[a].values;
    auto& m = state.moment1[a];
    auto& v = state.moment2[a];
    for (std::size_t i = 0; i < th.size(); ++i) {
      th[i] -= lr * cfg.weight_decay * th[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gr[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gr[i] * gr[i];
      th[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
    }
  }
  ++state.step_count;
}

double PlateauScheduler::step(double val_loss) {
  if (!has_best_ || val_loss < best_ * (1.0 - cfg_.threshold)) {
    best_ = val_loss;
    has_best_ = true;
    bad_ = 0;
    return lr_;
  }
  ++bad_;
  if (bad_ >= cfg_.patience) {
    lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
    bad_ = 0;
  }
  return lr_;
}

double plateau_scheduler_update(std::span<const double> history, double current_lr, const SchedulerConfig& cfg) {
  HOCONV_REQUIRE(!history.empty(), ContractError, "plateau scheduler: empty history");
  PlateauScheduler s(cfg, 1.0);
  double before = 1.0;
  for (double v : history) {
    before = s.lr();
    s.step(v);
  }
  return s.lr() < before ? std::max(current_lr * cfg.factor, cfg.min_lr) : current_lr;
}

VideoTensor ClipData::clip(std::size_t frame) const {
  const Shape s = movie.shape();
  HOCONV_REQUIRE(frame < s.t, ContractError, "clip: frame out of range");
  const std::size_t fsize = s.h * s.w * s.c;
  VideoTensor out(Shape{clip_len, s.h, s.w, s.c}, 0.0);
  for (std::size_t k = 0; k < clip_len; ++k) {
    const std::size_t back = clip_len - 1 - k;
    if (back > frame) continue;
    const double* src = movie.values().data() + (frame - back) * fsize;
    std::copy(src, src + fsize, out.values().begin() + static_cast<std::ptrdiff_t>(k * fsize));
  }
  return out;
}

namespace {

double evaluate_loss(const NetworkState& state, const ClipData& data, const std::vector<std::size_t>& frames) {
  const auto rates = predict(state, data, frames);
  std::vector<double> counts;
  counts.reserve(rates.size());
  for (std::size_t f : frames)
    counts.insert(counts.end(), data.targets.begin() + static_cast<std::ptrdiff_t>(f * data.n_cells),
                  data.targets.begin() + static_cast<std::ptrdiff_t>((f + 1) * data.n_cells));
  return poisson_nll(rates, counts);
}

}  // namespace

TrainResult train(const NetworkSpec& spec, const ClipData& data, const std::vector<std::size_t>& frames,
                  const TrainConfig& cfg) {
  return train_from(NetworkState::initialize(spec, cfg.seed), data, frames, cfg);
}

TrainResult train_from(NetworkState state, const ClipData& data, const std::vector<std::size_t>& frames,
                       const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n_val =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(frames.size()))));
  HOCONV_REQUIRE(frames.size() > n_val, DataError, "train: not enough samples for a training split");
  return train_from(std::move(state), data,
                    std::vector<std::size_t>(frames.begin(), frames.end() - static_cast<std::ptrdiff_t>(n_val)),
                    std::vector<std::size_t>(frames.end() - static_cast<std::ptrdiff_t>(n_val), frames.end()), cfg);
}

TrainResult train_from(NetworkState state, const ClipData& data, std::vector<std::size_t> train_idx,
                       const std::vector<std::size_t>& val_idx, const TrainConfig& cfg) {
  cfg.validate();
  HOCONV_REQUIRE(data.n_cells == state.spec.output_units(), ConfigError,
                 "train: network predicts " + std::to_string(state.spec.output_units()) + " cells but data has " +
                     std::to_string(data.n_cells));
  HOCONV_REQUIRE(data.targets.size() == data.movie.shape().t * data.n_cells, ContractError,
                 "train: targets do not match movie length");
  HOCONV_REQUIRE(!train_idx.empty() && !val_idx.empty(), DataError, "train: empty training or validation split");

  if (cfg.freeze_higher_order)
    for (auto& p : state.params) {
      std::fill(p.kernels.w2.begin(), p.kernels.w2.end(), 0.0);
      std::fill(p.kernels.w3.begin(), p.kernels.w3.end(), 0.0);
    }

  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x5348u};
  std::mt19937_64 shuffle_rng(seq);
  PlateauScheduler scheduler(cfg.scheduler, cfg.lr);
  TrainResult result;
  result.best = state;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  NetworkGrads grads;
  std::vector<VideoTensor> clips;
  std::vector<double> counts;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = scheduler.lr();
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
    double loss_sum = 0.0;
    bool finite = true;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train_idx.size(), start + cfg.batch_size);
      clips.clear();
      counts.clear();
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t f = train_idx[i];
        clips.push_back(data.clip(f));
        counts.insert(counts.end(), data.targets.begin() + static_cast<std::ptrdiff_t>(f * data.n_cells),
                      data.targets.begin() + static_cast<std::ptrdiff_t>((f + 1) * data.n_cells));
      }
      for (auto& p : grads.params) p = zeros_like(p);
      double loss = 0.0;
      try {
        loss = loss_and_gradients(state, clips, counts, &grads);
        adamw_step(state, grads, cfg, lr);
      } catch (const NumericError&) {
        finite = false;
        break;
      }
      loss_sum += loss * static_cast<double>(end - start);
    }
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (finite) {
      try {
        val_loss = evaluate_loss(state, data, val_idx);
      } catch (const NumericError&) {
      }
    }
    const double train_loss = loss_sum / static_cast<double>(train_idx.size());
    const double wall =
        cfg.record_wall_time ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
    result.log.push_back({epoch, finite ? train_loss : std::numeric_limits<double>::quiet_NaN(), val_loss, lr, wall});
    if (!std::isfinite(val_loss) || !std::isfinite(train_loss)) {
      result.aborted_non_finite = true;
      break;
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      result.best = state;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    scheduler.step(val_loss);
    if (since_best > cfg.early_stop_patience) break;
  }
  return result;
}

void write_training_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "epoch,train_loss,val_loss,lr,wall_seconds\n" << std::setprecision(17);
  for (const auto& r : log)
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.lr << ',' << std::setprecision(6)
       << r.wall_seconds << std::setprecision(17) << '\n';
}

std::vector<double> predict(const NetworkState& state, const ClipData& data, const std::vector<std::size_t>& frames,
                            std::size_t batch_size) {
  auto params = state.params;
  std::vector<double> out;
  out.reserve(frames.size() * state.spec.output_units());
  std::vector<VideoTensor> clips;
  for (std::size_t start = 0; start < frames.size(); start += batch_size) {
    const std::size_t end = std::min(frames.size(), start + batch_size);
    clips.clear();
    for (std::size_t i = start; i < end; ++i) clips.push_back(data.clip(frames[i]));
    Act a = run_forward(state.spec, params, clips, Mode::kEval, nullptr);
    out.insert(out.end(), a.flat.data(), a.flat.data() + a.flat.size());
  }
  return out;
}

CorrelationSummary correlation_to_mean(std::span<const double> predicted, std::span<const double> trial_mean,
                                       std::size_t n_cells) {
  HOCONV_REQUIRE(n_cells >= 1 && predicted.size() == trial_mean.size() && predicted.size() % n_cells == 0,
                 ContractError, "correlation_to_mean: prediction and trial-mean lengths differ");
  const std::size_t bins = predicted.size() / n_cells;
  HOCONV_REQUIRE(bins >= 2, ContractError, "correlation_to_mean: need at least 2 time bins");
  CorrelationSummary s;
  std::vector<double> defined;
  for (std::size_t c = 0; c < n_cells; ++c) {
    const std::vector<double> p(predicted.begin() + static_cast<std::ptrdiff_t>(c * bins),
                                predicted.begin() + static_cast<std::ptrdiff_t>((c + 1) * bins));
    const std::vector<double> m(trial_mean.begin() + static_cast<std::ptrdiff_t>(c * bins),
                                trial_mean.begin() + static_cast<std::ptrdiff_t>((c + 1) * bins));
    const bool flat_mean = std::all_of(m.begin(), m.end(), [&](double v) { return v == m.front(); });
    if (flat_mean) {
      s.per_cell.push_back(std::numeric_limits<double>::quiet_NaN());
      ++s.excluded;
      continue;
    }
    const bool flat_pred = std::all_of(p.begin(), p.end(), [&](double v) { return v == p.front(); });
    double rho = 0.0;
    if (!flat_pred) {
      double mp = 0.0, mm = 0.0;
      for (std::size_t i = 0; i < bins; ++i) {
        mp += p[i];
        mm += m[i];
      }
      mp /= static_cast<double>(bins);
      mm /= static_cast<double>(bins);
      double spm = 0.0, spp = 0.0, smm = 0.0;
      for (std::size_t i = 0; i < bins; ++i) {
        spm += (p[i] - mp) * (m[i] - mm);
        spp += (p[i] - mp) * (p[i] - mp);
        smm += (m[i] - mm) * (m[i] - mm);
      }
      rho = spm / std::sqrt(spp * smm);
    }
    s.per_cell.push_back(rho);
    defined.push_back(rho);
  }
  if (defined.empty()) {
    s.mean = s.stderr_ = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = std::accumulate(defined.begin(), defined.end(), 0.0) / static_cast<double>(defined.size());
  if (defined.size() >= 2) {
    double var = 0.0;
    for (double v : defined) var += (v - s.mean) * (v - s.mean);
    var /= static_cast<double>(defined.size() - 1);
    s.stderr_ = std::sqrt(var / static_cast<double>(defined.size()));
  }
  return s;
}

void write_checkpoint(const NetworkState& st, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const nlohmann::json meta{{"kind", "checkpoint"}, {"architecture", st.spec.canonical()}};
  write_container_header(os, {"HOCK", kCheckpointFormatVersion, meta});
  for (std::size_t i = 0; i < st.spec.layers.size(); ++i) {
    const LayerSpec& l = st.spec.layers[i];
    const LayerParams& p = st.params[i];
    if (is_conv(l.kind)) {
      write_kernel_fragment(os, p.kernels, l.window);
    } else if (l.kind == LayerKind::kBatchNorm) {
      bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.gamma.size()));
      for (const auto* a : {&p.gamma, &p.beta, &p.running_mean, &p.running_var}) bin::put_f64_array(os, *a);
    } else if (l.kind == LayerKind::kDense) {
      bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.bias.size()));
      bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.weight.size() / std::max<std::size_t>(1, p.bias.size())));
      bin::put_f64_array(os, p.weight);
      bin::put_f64_array(os, p.bias);
    }
  }
  bin::put<std::uint64_t>(os, st.step_count);
  bin::put<std::uint64_t>(os, st.rng_seed);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(st.moment1.size()));
  for (std::size_t a = 0; a < st.moment1.size(); ++a) {
    bin::put<std::uint64_t>(os, st.moment1[a].size());
    bin::put_f64_array(os, st.moment1[a]);
    bin::put_f64_array(os, st.moment2[a]);
  }
  if (!os) throw IoError("write failed for " + path.string());
}

NetworkState read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const auto header = read_container_header(is, "HOCK", kCheckpointFormatVersion);
  if (!header.meta.contains("architecture") || !header.meta["architecture"].is_string())
    throw FormatError("HOCK: metadata lacks the architecture text");
  NetworkState st;
  try {
    st.spec = NetworkSpec::parse(header.meta["architecture"].get<std::string>());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("HOCK: bad architecture text: ") + e.what());
  }
  // Shapes expected from the architecture.
  const NetworkState ref = NetworkState::initialize(st.spec, 0);
  for (std::size_t i = 0; i < st.spec.layers.size(); ++i) {
    const LayerSpec& l = st.spec.layers[i];
    const LayerParams& r = ref.params[i];
    LayerParams p;
    if (is_conv(l.kind)) {
      WindowSpec w;
      p.kernels = read_kernel_fragment(is, &w);
      if (!(w == l.window) || p.kernels.order != l.order || p.kernels.b.size() != r.kernels.b.size() ||
          p.kernels.w1.size() != r.kernels.w1.size())
        throw FormatError("HOCK: kernel fragment of layer " + std::to_string(i) + " disagrees with the architecture");
    } else if (l.kind == LayerKind::kBatchNorm) {
      const auto ch = bin::get<std::uint32_t>(is, "batch norm size");
      if (ch != r.gamma.size()) throw FormatError("HOCK: batch norm size disagrees with the architecture");
      p.gamma = bin::get_f64_array(is, ch, "gamma");
      p.beta = bin::get_f64_array(is, ch, "beta");
      p.running_mean = bin::get_f64_array(is, ch, "running mean");
      p.running_var = bin::get_f64_array(is, ch, "running variance");
      for (double v : p.running_var)
        if (!(v > 0.0)) throw FormatError("HOCK: non-positive running variance");
    } else if (l.kind == LayerKind::kDense) {
      const auto out = bin::get<std::uint32_t>(is, "dense units");
      const auto in = bin::get<std::uint32_t>(is, "dense inputs");
      if (out != r.bias.size() || static_cast<std::size_t>(out) * in != r.weight.size())
        throw FormatError("HOCK: dense shape disagrees with the architecture");
      p.weight = bin::get_f64_array(is, r.weight.size(), "dense weight");
      p.bias = bin::get_f64_array(is, out, "dense bias");
    }
    st.params.push_back(std::move(p));
  }
  st.step_count = bin::get<std::uint64_t>(is, "step count");
  st.rng_seed = bin::get<std::uint64_t>(is, "rng seed");
  const auto n = bin::get<std::uint32_t>(is, "moment count");
  auto arrays = st.parameter_arrays();
  if (n != arrays.size()) throw FormatError("HOCK: optimizer moment count disagrees with the architecture");
  for (std::size_t a = 0; a < n; ++a) {
    const auto len = bin::get<std::uint64_t>(is, "moment length");
    if (len != arrays[a].values->size()) throw FormatError("HOCK: optimizer moment length mismatch");
    st.moment1.push_back(bin::get_f64_array(is, len, "first moment"));
    st.moment2.push_back(bin::get_f64_array(is, len, "second moment"));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("HOCK: trailing bytes after payload in " + path.string());
  return st;
}

}  // namespace hoconv
