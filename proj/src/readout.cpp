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

#include "hoconv/readout.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>

namespace hoconv {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void fnv_mix(std::uint64_t& h, const std::vector<double>& v) {
  for (double d : v) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &d, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
}

double column_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0) return std::numeric_limits<double>::quiet_NaN();
  if (sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

const std::array<std::string, kHomographyParams>& homography_param_names() {
  static const std::array<std::string, kHomographyParams> names{"H11", "H12", "H13", "H21",
                                                                "H22", "H23", "H31", "H32"};
  return names;
}

std::size_t conv_block_tap(const NetworkSpec& spec, std::size_t block) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerKind k = spec.layers[i].kind;
    if (k != LayerKind::kConv3d && k != LayerKind::kHoConv3d) continue;
    if (++seen != block) continue;
    std::size_t end = i;
    while (end + 1 < spec.layers.size() && (spec.layers[end + 1].kind == LayerKind::kBatchNorm ||
                                            spec.layers[end + 1].kind == LayerKind::kRelu))
      ++end;
    return end;
  }
  throw ConfigError("network has no conv block " + std::to_string(block));
}

std::vector<double> extract_features(const NetworkState& state, const VideoTensor& clip, std::size_t tap) {
  HOCONV_REQUIRE(tap < state.spec.layers.size(), ConfigError,
                 "tap " + std::to_string(tap) + " is out of range for " + std::to_string(state.spec.layers.size()) +
                     " layers");
  for (std::size_t i = 0; i <= tap; ++i)
    HOCONV_REQUIRE(state.spec.layers[i].kind != LayerKind::kFlatten, ConfigError,
                   "tap " + std::to_string(tap) + " is not a conv-block output");
  const LayerKind k = state.spec.layers[tap].kind;
  HOCONV_REQUIRE(k == LayerKind::kConv3d || k == LayerKind::kHoConv3d || k == LayerKind::kBatchNorm ||
                     k == LayerKind::kRelu,
                 ConfigError, "tap " + std::to_string(tap) + " is not a conv-block output");
  auto acts = layer_activations(state, clip);
  return std::move(acts[tap]);
}

std::uint64_t parameter_checksum(const NetworkState& state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : state.params) {
    for (const auto* v : {&p.kernels.b, &p.kernels.w1, &p.kernels.w2, &p.kernels.w3, &p.gamma, &p.beta,
                          &p.running_mean, &p.running_var, &p.weight, &p.bias})
      fnv_mix(h, *v);
  }
  return h;
}

FeatureMatrix build_features(const NetworkState& state, const VideoTensor& input, const SequenceSet& set,
                             std::size_t clip_len, std::size_t tap, bool per_frame) {
  ClipData clips;
  clips.movie = input;
  clips.clip_len = clip_len;
  FeatureMatrix fm;
  std::size_t offset = 0;
  for (std::size_t s = 0; s < set.sequences.size(); ++s) {
    const Sequence& seq = set.sequences[s];
    const std::size_t n = seq.labels.size();
    HOCONV_REQUIRE(offset + n <= input.shape().t, DataError, "feature input is shorter than the sequence set");
    HOCONV_REQUIRE(n >= clip_len, DataError, "sequences are shorter than the clip length");
    const std::size_t first = per_frame ? clip_len - 1 : n - 1;
    for (std::size_t f = first; f < n; ++f) {
      const auto row = extract_features(state, clips.clip(offset + f), tap);
      if (fm.n_features == 0) fm.n_features = row.size();
      for (double v : row)
        HOCONV_REQUIRE(std::isfinite(v), NumericError, "non-finite feature in sequence " + std::to_string(s));
      fm.values.insert(fm.values.end(), row.begin(), row.end());
      fm.labels.push_back(seq.labels[f].params());
      fm.sequence_ids.push_back(s);
      fm.frames.push_back(f);
    }
    offset += n;
  }
  return fm;
}

LinearReadout fit_readout(const FeatureMatrix& train, double lambda) {
  HOCONV_REQUIRE(lambda >= 0.0, ConfigError, "ridge lambda must be >= 0");
  HOCONV_REQUIRE(train.rows() >= 2, DataError, "readout needs at least 2 training rows");
  const std::size_t n = train.rows();
  LinearReadout r;
  r.lambda = lambda;
  r.n_features = train.n_features;
  for (std::size_t j = 0; j < train.n_features; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += train.row(i)[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (train.row(i)[j] - mean) * (train.row(i)[j] - mean);
    var /= static_cast<double>(n);
    if (var <= 1e-24 * std::max(1.0, mean * mean)) {
      r.dropped.push_back(j);
      continue;
    }
    r.kept.push_back(j);
    r.mean.push_back(mean);
    r.scale.push_back(std::sqrt(var));
  }
  const auto k = static_cast<Eigen::Index>(r.kept.size());
  RowMatrix x(static_cast<Eigen::Index>(n), k);
  RowMatrix y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kHomographyParams));
  for (std::size_t p = 0; p < kHomographyParams; ++p) {
    double m = 0.0;
    for (const auto& l : train.labels) m += l[p];
    r.intercept[p] = m / static_cast<double>(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto c = static_cast<std::size_t>(j);
      x(static_cast<Eigen::Index>(i), j) = (train.row(i)[r.kept[c]] - r.mean[c]) / r.scale[c];
    }
    for (std::size_t p = 0; p < kHomographyParams; ++p)
      y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = train.labels[i][p] - r.intercept[p];
  }
  RowMatrix w;
  if (k == 0) {
    w = RowMatrix::Zero(0, static_cast<Eigen::Index>(kHomographyParams));
  } else if (lambda == 0.0) {
    w = x.completeOrthogonalDecomposition().solve(y);
  } else {
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::MatrixXd a = inv_n * (x.transpose() * x);
    a.diagonal().array() += lambda;
    w = a.ldlt().solve(inv_n * (x.transpose() * y));
  }
  r.weights.assign(w.data(), w.data() + w.size());
  return r;
}

std::vector<ParamVector> predict_readout(const LinearReadout& r, const FeatureMatrix& f) {
  HOCONV_REQUIRE(f.n_features == r.n_features, ConfigError,
                 "readout expects " + std::to_string(r.n_features) + " features, got " + std::to_string(f.n_features));
  std::vector<ParamVector> out(f.rows());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    ParamVector p = r.intercept;
    for (std::size_t c = 0; c < r.kept.size(); ++c) {
      const double z = (f.row(i)[r.kept[c]] - r.mean[c]) / r.scale[c];
      for (std::size_t q = 0; q < kHomographyParams; ++q) p[q] += z * r.weights[c * kHomographyParams + q];
    }
    out[i] = p;
  }
  return out;
}

ReadoutEvaluation evaluate_readout(const LinearReadout& readout, const FeatureMatrix& test) {
  HOCONV_REQUIRE(test.rows() >= 2, DataError, "readout evaluation needs at least 2 rows");
  ReadoutEvaluation e;
  e.predicted = predict_readout(readout, test);
  for (std::size_t p = 0; p < kHomographyParams; ++p) {
    std::vector<double> t(test.rows()), q(test.rows());
    for (std::size_t i = 0; i < test.rows(); ++i) {
      t[i] = test.labels[i][p];
      q[i] = e.predicted[i][p];
    }
    e.rho[p] = column_pearson(t, q);
  }
  return e;
}

void write_scatter_csv(const FeatureMatrix& test, const ReadoutEvaluation& eval, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "sequence_id,parameter,true,predicted\n" << std::setprecision(17);
  const auto& names = homography_param_names();
  for (std::size_t i = 0; i < test.rows(); ++i)
    for (std::size_t p = 0; p < kHomographyParams; ++p)
      os << test.sequence_ids[i] << ',' << names[p] << ',' << test.labels[i][p] << ',' << eval.predicted[i][p]
         << '\n';
}

}  // namespace hoconv
