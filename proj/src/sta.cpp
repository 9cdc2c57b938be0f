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

#include "hoconv/sta.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include "hoconv/binary_io.hpp"
#include "hoconv/container.hpp"

namespace hoconv {

StaVolume compute_sta(const VideoTensor& stimulus, std::span<const double> spikes, std::size_t n_lags) {
  const Shape s = stimulus.shape();
  HOCONV_REQUIRE(s.c == 1, ConfigError, "compute_sta: expected a single-channel stimulus");
  HOCONV_REQUIRE(spikes.size() == s.t, ContractError,
                 "compute_sta: " + std::to_string(spikes.size()) + " spike bins for " + std::to_string(s.t) +
                     " stimulus frames");
  HOCONV_REQUIRE(n_lags >= 1, ContractError, "compute_sta: need at least one lag");
  const std::size_t px = s.h * s.w;
  std::vector<double> mean(px, 0.0);
  for (std::size_t t = 0; t < s.t; ++t)
    for (std::size_t i = 0; i < px; ++i) mean[i] += stimulus.values()[t * px + i];
  for (double& m : mean) m /= static_cast<double>(s.t);

  StaVolume sta;
  sta.n_lags = n_lags;
  sta.height = s.h;
  sta.width = s.w;
  sta.values.assign(n_lags * px, 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < s.t; ++t) {
    const double c = spikes[t];
    HOCONV_REQUIRE(c >= 0.0 && std::isfinite(c), DataError, "compute_sta: invalid spike count at bin " + std::to_string(t));
    if (c == 0.0) continue;
    total += c;
    for (std::size_t lag = 0; lag < n_lags && lag <= t; ++lag) {
      const double* frame = stimulus.values().data() + (t - lag) * px;
      double* out = sta.values.data() + lag * px;
      for (std::size_t i = 0; i < px; ++i) out[i] += c * (frame[i] - mean[i]);
    }
  }
  HOCONV_REQUIRE(total > 0.0, DataError, "compute_sta: no spikes, the STA is undefined");
  for (double& v : sta.values) v /= total;
  sta.n_spikes = total;
  return sta;
}

SeparableRF svd_decompose(const StaVolume& sta) {
  const std::size_t px = sta.height * sta.width;
  HOCONV_REQUIRE(sta.values.size() == sta.n_lags * px && sta.n_lags >= 1 && px >= 1, ContractError,
                 "svd_decompose: malformed STA volume");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
      sta.values.data(), static_cast<Eigen::Index>(sta.n_lags), static_cast<Eigen::Index>(px));
  HOCONV_REQUIRE(a.allFinite(), NumericError, "svd_decompose: STA has non-finite entries");
  const double frob2 = a.squaredNorm();
  HOCONV_REQUIRE(frob2 > 0.0, NumericError, "svd_decompose: STA is all zero, the decomposition is undefined");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd u = svd.matrixU().col(0);
  Eigen::VectorXd v = svd.matrixV().col(0);
  Eigen::Index peak = 0;
  for (Eigen::Index i = 1; i < u.size(); ++i)
    if (std::abs(u(i)) > std::abs(u(peak))) peak = i;
  if (u(peak) < 0.0) {
    u = -u;
    v = -v;
  }
  SeparableRF rf;
  rf.height = sta.height;
  rf.width = sta.width;
  rf.temporal.assign(u.data(), u.data() + u.size());
  rf.spatial.assign(v.data(), v.data() + v.size());
  rf.sigma1 = svd.singularValues()(0);
  rf.separability = rf.sigma1 * rf.sigma1 / frob2;
  return rf;
}

VideoTensor make_binary_noise(std::size_t frames, std::size_t height, std::size_t width, std::size_t check_size,
                              std::uint64_t seed) {
  HOCONV_REQUIRE(check_size >= 1, ContractError, "make_binary_noise: check size must be >= 1");
  const std::size_t rows = (height + check_size - 1) / check_size;
  const std::size_t cols = (width + check_size - 1) / check_size;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  VideoTensor out(Shape{frames, height, width, 1}, 0.0);
  std::vector<double> checks(rows * cols);
  for (std::size_t t = 0; t < frames; ++t) {
    for (double& c : checks) c = coin(rng) ? 1.0 : 0.0;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.at(t, y, x, 0) = checks[(y / check_size) * cols + x / check_size];
  }
  return out;
}

void write_sta(const StaVolume& sta, const std::string& cell_id, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const nlohmann::json meta{{"kind", "sta"},     {"cell", cell_id},         {"n_lags", sta.n_lags},
                            {"height", sta.height}, {"width", sta.width}, {"n_spikes", sta.n_spikes},
                            {"dtype", "f64le"}};
  write_container_header(os, {"HSTA", kStaFormatVersion, meta});
  bin::put_f64_array(os, sta.values);
  if (!os) throw IoError("write failed for " + path.string());
}

StaVolume read_sta(const std::filesystem::path& path, std::string* cell_id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const auto header = read_container_header(is, "HSTA", kStaFormatVersion);
  StaVolume sta;
  try {
    sta.n_lags = header.meta.at("n_lags").get<std::size_t>();
    sta.height = header.meta.at("height").get<std::size_t>();
    sta.width = header.meta.at("width").get<std::size_t>();
    sta.n_spikes = header.meta.at("n_spikes").get<double>();
    if (cell_id != nullptr) *cell_id = header.meta.at("cell").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("HSTA: bad metadata: ") + e.what());
  }
  sta.values = bin::get_f64_array(is, sta.n_lags * sta.height * sta.width, "STA values");
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("HSTA: trailing bytes after payload in " + path.string());
  return sta;
}

void write_temporal_csv(const SeparableRF& rf, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "lag,value\n" << std::setprecision(17);
  for (std::size_t i = 0; i < rf.temporal.size(); ++i) os << i << ',' << rf.temporal[i] << '\n';
}

void write_spatial_pgm(const SeparableRF& rf, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  double peak = 0.0;
  for (double v : rf.spatial) peak = std::max(peak, std::abs(v));
  os << "P2\n" << rf.width << ' ' << rf.height << "\n255\n";
  for (std::size_t y = 0; y < rf.height; ++y) {
    for (std::size_t x = 0; x < rf.width; ++x) {
      const double v = peak > 0.0 ? rf.spatial[y * rf.width + x] / peak : 0.0;
      os << (x ? " " : "") << static_cast<int>(std::lround(128.0 + 127.0 * v));
    }
    os << '\n';
  }
}

}  // namespace hoconv
