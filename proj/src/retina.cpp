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

#include "hoconv/retina.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "hoconv/binary_io.hpp"
#include "hoconv/container.hpp"

namespace hoconv {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double gamma_bump(double t, double tp) {
  if (t <= 0.0) return 0.0;
  constexpr double n = 3.0;
  const double r = t / tp;
  return std::pow(r, n) * std::exp(n * (1.0 - r));
}

// Gaussian weights cropped to +-3 sigma.
struct SpatialKernel {
  std::size_t x0 = 0, y0 = 0, w = 0, h = 0;
  std::vector<double> weights;
};

SpatialKernel make_kernel(const Subunit& s, std::size_t height, std::size_t width,
                          const std::string& cell_id) {
  const double reach = 3.0 * s.sigma;
  if (!(s.sigma > 0.0) || s.x - reach < 0.0 || s.y - reach < 0.0 ||
      s.x + reach > static_cast<double>(width) - 1.0 ||
      s.y + reach > static_cast<double>(height) - 1.0)
    throw ConfigError("cell " + cell_id + ": receptive field extends beyond the " +
                      std::to_string(height) + "x" + std::to_string(width) + " frame");
  SpatialKernel k;
  k.x0 = static_cast<std::size_t>(std::floor(s.x - reach));
  k.y0 = static_cast<std::size_t>(std::floor(s.y - reach));
  k.w = static_cast<std::size_t>(std::ceil(s.x + reach)) - k.x0 + 1;
  k.h = static_cast<std::size_t>(std::ceil(s.y + reach)) - k.y0 + 1;
  k.weights.resize(k.w * k.h);
  double sum = 0.0;
  for (std::size_t r = 0; r < k.h; ++r)
    for (std::size_t c = 0; c < k.w; ++c) {
      const double dx = static_cast<double>(k.x0 + c) - s.x;
      const double dy = static_cast<double>(k.y0 + r) - s.y;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * s.sigma * s.sigma));
      k.weights[r * k.w + c] = v;
      sum += v;
    }
  for (double& v : k.weights) v /= sum;
  return k;
}

// Projection of the contrast movie onto one subunit, one value per frame.
std::vector<double> project(const SpatialKernel& k, const VideoTensor& movie) {
  const Shape s = movie.shape();
  std::vector<double> out(s.t, 0.0);
  const double* data = movie.values().data();
  for (std::size_t t = 0; t < s.t; ++t) {
    double acc = 0.0;
    for (std::size_t r = 0; r < k.h; ++r) {
      const double* row = data + (t * s.h + k.y0 + r) * s.w + k.x0;
      const double* wr = k.weights.data() + r * k.w;
      for (std::size_t c = 0; c < k.w; ++c) acc += wr[c] * (row[c] - 0.5);
    }
    out[t] = acc;
  }
  return out;
}

std::vector<double> temporal(const std::vector<double>& p, const std::vector<double>& kernel) {
  std::vector<double> out(p.size(), 0.0);
  for (std::size_t t = 0; t < p.size(); ++t) {
    double acc = 0.0;
    for (std::size_t lag = 0; lag < kernel.size() && lag <= t; ++lag) acc += kernel[lag] * p[t - lag];
    out[t] = acc;
  }
  return out;
}

}  // namespace

std::string cell_kind_name(CellKind kind) {
  switch (kind) {
    case CellKind::kLinear: return "linear_lnp";
    case CellKind::kMultiplicative: return "multiplicative";
    case CellKind::kExpansion: return "expansion";
    case CellKind::kDistractor: return "distractor";
  }
  return "unknown";
}

CellKind parse_cell_kind(const std::string& name) {
  for (CellKind k : {CellKind::kLinear, CellKind::kMultiplicative, CellKind::kExpansion,
                     CellKind::kDistractor})
    if (cell_kind_name(k) == name) return k;
  throw FormatError("unknown cell kind '" + name + "'");
}

std::vector<double> biphasic_filter(const TemporalFilterSpec& spec, double frame_rate_hz) {
  HOCONV_REQUIRE(spec.length >= 1 && frame_rate_hz > 0.0 && spec.peak_ms > 0.0 &&
                     spec.trough_ms > spec.peak_ms,
                 ConfigError, "temporal filter: need length >= 1 and 0 < peak_ms < trough_ms");
  const double dt_ms = 1000.0 / frame_rate_hz;
  std::vector<double> k(spec.length);
  double peak = 0.0;
  for (std::size_t lag = 0; lag < spec.length; ++lag) {
    const double t = static_cast<double>(lag) * dt_ms;
    k[lag] = gamma_bump(t, spec.peak_ms) - spec.trough_ratio * gamma_bump(t, spec.trough_ms);
    peak = std::max(peak, std::abs(k[lag]));
  }
  HOCONV_REQUIRE(peak > 0.0, ConfigError, "temporal filter is identically zero at this frame rate");
  for (double& v : k) v /= peak;
  return k;
}

std::vector<double> bump_filter(double peak_ms, std::size_t length, double frame_rate_hz) {
  HOCONV_REQUIRE(length >= 1 && peak_ms > 0.0 && frame_rate_hz > 0.0, ConfigError,
                 "bump filter: need length >= 1 and peak_ms > 0");
  const double dt_ms = 1000.0 / frame_rate_hz;
  std::vector<double> k(length);
  for (std::size_t lag = 0; lag < length; ++lag)
    k[lag] = gamma_bump(static_cast<double>(lag) * dt_ms, peak_ms);
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  HOCONV_REQUIRE(sum > 0.0, ConfigError, "bump filter is identically zero at this frame rate");
  for (double& v : k) v /= sum;
  return k;
}

std::size_t ModelCell::filter_length() const {
  return std::max(temporal_a.size(), temporal_b.size());
}

std::vector<ModelCell> make_cell_bank(const RetinaConfig& cfg, std::size_t height,
                                      std::size_t width, double frame_rate_hz) {
  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const auto biphasic = biphasic_filter(cfg.temporal, frame_rate_hz);
  const auto fast = bump_filter(cfg.hr_fast_ms, cfg.temporal.length, frame_rate_hz);
  const auto slow = bump_filter(cfg.hr_slow_ms, cfg.temporal.length, frame_rate_hz);

  auto centered_range = [&](double margin, double centre, double size) {
    const double lo = margin;
    const double hi = size - 1.0 - margin;
    HOCONV_REQUIRE(lo <= hi, ConfigError,
                   "cell bank: receptive fields do not fit the " + std::to_string(height) + "x" +
                       std::to_string(width) + " frame");
    return std::pair<double, double>{std::max(lo, centre - (hi - lo) / 2.0),
                                     std::min(hi, centre + (hi - lo) / 2.0)};
  };

  std::vector<ModelCell> cells;
  auto linear_cell = [&](CellKind kind, std::size_t index) {
    ModelCell c;
    c.kind = kind;
    c.id = (kind == CellKind::kLinear ? "lin" : "dis") + std::to_string(index);
    const double m = 3.0 * cfg.linear_sigma;
    const auto [xl, xh] = centered_range(m, cx, static_cast<double>(width));
    const auto [yl, yh] = centered_range(m, cy, static_cast<double>(height));
    c.subunits = {{uniform(xl, xh), uniform(yl, yh), cfg.linear_sigma}};
    c.temporal_a = biphasic;
    c.gain = uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    c.threshold = cfg.threshold;
    c.base_rate = kind == CellKind::kLinear ? cfg.base_rate : cfg.distractor_rate;
    return c;
  };

  for (std::size_t i = 0; i < cfg.n_linear; ++i) cells.push_back(linear_cell(CellKind::kLinear, i));

  for (std::size_t i = 0; i < cfg.n_multiplicative; ++i) {
    ModelCell c;
    c.kind = CellKind::kMultiplicative;
    c.id = "mul" + std::to_string(i);
    const double half = cfg.subunit_offset / 2.0;
    const double m = half + 3.0 * cfg.subunit_sigma;
    const auto [xl, xh] = centered_range(m, cx, static_cast<double>(width));
    const auto [yl, yh] = centered_range(m, cy, static_cast<double>(height));
    const double x = uniform(xl, xh);
    const double y = uniform(yl, yh);
    const double angle = uniform(0.0, 2.0 * std::numbers::pi);
    const double ux = std::cos(angle);
    const double uy = std::sin(angle);
    c.subunits = {{x - half * ux, y - half * uy, cfg.subunit_sigma},
                  {x + half * ux, y + half * uy, cfg.subunit_sigma}};
    c.temporal_a = slow;
    c.temporal_b = fast;
    c.gain = 1.0;
    c.threshold = cfg.threshold;
    c.base_rate = cfg.base_rate;
    cells.push_back(c);
  }

  for (std::size_t i = 0; i < cfg.n_expansion; ++i) {
    ModelCell c;
    c.kind = CellKind::kExpansion;
    c.id = "exp" + std::to_string(i);
    const double half = cfg.subunit_offset / 2.0;
    const double m = cfg.expansion_radius + half + 3.0 * cfg.subunit_sigma;
    const auto [xl, xh] = centered_range(m, cx, static_cast<double>(width));
    const auto [yl, yh] = centered_range(m, cy, static_cast<double>(height));
    const double j = cfg.expansion_jitter;
    const double x = uniform(std::max(xl, cx - j), std::min(xh, cx + j));
    const double y = uniform(std::max(yl, cy - j), std::min(yh, cy + j));
    const double rotation = uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t j = 0; j < cfg.expansion_pairs; ++j) {
      const double phi = rotation + 2.0 * std::numbers::pi * static_cast<double>(j) /
                                        static_cast<double>(cfg.expansion_pairs);
      const double mx = x + cfg.expansion_radius * std::cos(phi);
      const double my = y + cfg.expansion_radius * std::sin(phi);
      double ux = mx - cx;
      double uy = my - cy;
      const double norm = std::hypot(ux, uy);
      if (norm < 1e-9) {
        ux = std::cos(phi);
        uy = std::sin(phi);
      } else {
        ux /= norm;
        uy /= norm;
      }
      c.subunits.push_back({mx - half * ux, my - half * uy, cfg.subunit_sigma});
      c.subunits.push_back({mx + half * ux, my + half * uy, cfg.subunit_sigma});
    }
    c.temporal_a = fast;
    c.temporal_b = slow;
    c.gain = 1.0;
    c.threshold = cfg.threshold;
    c.base_rate = cfg.base_rate;
    cells.push_back(c);
  }

  for (std::size_t i = 0; i < cfg.n_distractor; ++i)
    cells.push_back(linear_cell(CellKind::kDistractor, i));
  return cells;
}

RateMatrix simulate_drive(const std::vector<ModelCell>& cells, const VideoTensor& movie) {
  const Shape s = movie.shape();
  HOCONV_REQUIRE(s.c == 1, ContractError, "simulate: movie must have one channel");
  RateMatrix drive(cells.size(), s.t);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const ModelCell& cell = cells[ci];
    HOCONV_REQUIRE(s.t >= cell.filter_length(), DataError,
                   "simulate: movie of " + std::to_string(s.t) +
                       " frames is shorter than the temporal filter of cell " + cell.id);
    std::vector<std::vector<double>> proj;
    for (const auto& su : cell.subunits) proj.push_back(project(make_kernel(su, s.h, s.w, cell.id), movie));
    std::vector<double> d(s.t, 0.0);
    switch (cell.kind) {
      case CellKind::kLinear:
      case CellKind::kDistractor: {
        HOCONV_REQUIRE(proj.size() == 1, ConfigError, "cell " + cell.id + ": needs one subunit");
        d = temporal(proj[0], cell.temporal_a);
        break;
      }
      case CellKind::kMultiplicative: {
        HOCONV_REQUIRE(proj.size() == 2, ConfigError, "cell " + cell.id + ": needs two subunits");
        const auto a = temporal(proj[0], cell.temporal_a);
        const auto b = temporal(proj[1], cell.temporal_b);
        for (std::size_t t = 0; t < s.t; ++t) d[t] = a[t] * b[t];
        break;
      }
      case CellKind::kExpansion: {
        HOCONV_REQUIRE(!proj.empty() && proj.size() % 2 == 0, ConfigError,
                       "cell " + cell.id + ": needs subunit pairs");
        for (std::size_t j = 0; j < proj.size(); j += 2) {
          const auto inner_slow = temporal(proj[j], cell.temporal_b);
          const auto inner_fast = temporal(proj[j], cell.temporal_a);
          const auto outer_slow = temporal(proj[j + 1], cell.temporal_b);
          const auto outer_fast = temporal(proj[j + 1], cell.temporal_a);
          for (std::size_t t = 0; t < s.t; ++t)
            d[t] += inner_slow[t] * outer_fast[t] - outer_slow[t] * inner_fast[t];
        }
        break;
      }
    }
    std::copy(d.begin(), d.end(), drive.values.begin() + static_cast<std::ptrdiff_t>(ci * s.t));
  }
  return drive;
}

void calibrate_bank(std::vector<ModelCell>& cells, const VideoTensor& movie,
                    const RetinaConfig& config) {
  const RateMatrix drive = simulate_drive(cells, movie);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    double mean = 0.0;
    for (std::size_t t = 0; t < drive.n_bins; ++t) mean += drive.at(ci, t);
    mean /= static_cast<double>(drive.n_bins);
    double var = 0.0;
    for (std::size_t t = 0; t < drive.n_bins; ++t) var += std::pow(drive.at(ci, t) - mean, 2);
    const double sd = std::sqrt(var / static_cast<double>(drive.n_bins));
    const double target =
        cells[ci].kind == CellKind::kDistractor ? config.distractor_gain : config.drive_gain;
    if (sd > 0.0) cells[ci].gain = std::copysign(target / sd, cells[ci].gain);
  }
}

RateMatrix simulate_rates(const std::vector<ModelCell>& cells, const VideoTensor& movie) {
  RateMatrix r = simulate_drive(cells, movie);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const ModelCell& c = cells[ci];
    for (std::size_t t = 0; t < r.n_bins; ++t)
      r.at(ci, t) = c.base_rate * softplus(c.gain * r.at(ci, t) - c.threshold);
  }
  return r;
}

RateMatrix expand_bins(const RateMatrix& per_frame, std::size_t bins_per_frame) {
  HOCONV_REQUIRE(bins_per_frame >= 1, ConfigError, "bins_per_frame must be >= 1");
  RateMatrix out(per_frame.n_cells, per_frame.n_bins * bins_per_frame);
  for (std::size_t c = 0; c < per_frame.n_cells; ++c)
    for (std::size_t b = 0; b < out.n_bins; ++b) out.at(c, b) = per_frame.at(c, b / bins_per_frame);
  return out;
}

std::vector<double> ResponseSet::frame_counts(std::size_t trial, std::size_t cell) const {
  std::vector<double> out(n_frames(), 0.0);
  for (std::size_t b = 0; b < n_frames() * bins_per_frame; ++b)
    out[b / bins_per_frame] += count(trial, cell, b);
  return out;
}

std::vector<double> ResponseSet::trial_mean_frames(std::size_t cell) const {
  std::vector<double> out(n_frames(), 0.0);
  for (std::size_t t = 0; t < n_trials; ++t) {
    const auto f = frame_counts(t, cell);
    for (std::size_t i = 0; i < f.size(); ++i) out[i] += f[i];
  }
  for (double& v : out) v /= static_cast<double>(n_trials);
  return out;
}

ResponseSet ResponseSet::subset(const std::vector<std::size_t>& cells) const {
  ResponseSet r;
  r.n_trials = n_trials;
  r.n_bins = n_bins;
  r.bins_per_frame = bins_per_frame;
  r.bin_width_s = bin_width_s;
  for (std::size_t c : cells) {
    HOCONV_REQUIRE(c < n_cells(), ContractError, "subset: cell index out of range");
    r.cell_ids.push_back(cell_ids[c]);
    r.kinds.push_back(kinds[c]);
  }
  r.counts.resize(n_trials * cells.size() * n_bins);
  for (std::size_t t = 0; t < n_trials; ++t)
    for (std::size_t i = 0; i < cells.size(); ++i)
      std::copy_n(counts.begin() + static_cast<std::ptrdiff_t>((t * n_cells() + cells[i]) * n_bins),
                  n_bins, r.counts.begin() + static_cast<std::ptrdiff_t>((t * cells.size() + i) * n_bins));
  if (!rates.values.empty()) {
    r.rates = RateMatrix(cells.size(), rates.n_bins);
    for (std::size_t i = 0; i < cells.size(); ++i)
      for (std::size_t b = 0; b < rates.n_bins; ++b) r.rates.at(i, b) = rates.at(cells[i], b);
  }
  return r;
}

ResponseSet sample_spikes(const RateMatrix& rates, std::size_t n_trials, std::uint64_t seed) {
  ResponseSet r;
  r.n_trials = n_trials;
  r.n_bins = rates.n_bins;
  r.rates = rates;
  r.counts.resize(n_trials * rates.n_cells * rates.n_bins);
  for (std::size_t c = 0; c < rates.n_cells; ++c) {
    r.cell_ids.push_back("cell" + std::to_string(c));
    r.kinds.push_back(CellKind::kLinear);
  }
  for (double v : rates.values)
    HOCONV_REQUIRE(std::isfinite(v) && v >= 0.0, DataError, "sample_spikes: rates must be finite and >= 0");
  for (std::size_t t = 0; t < n_trials; ++t) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32)};
    std::mt19937_64 rng(seq);
    for (std::size_t c = 0; c < rates.n_cells; ++c)
      for (std::size_t b = 0; b < rates.n_bins; ++b) {
        const double lambda = rates.at(c, b);
        std::uint64_t k = 0;
        if (lambda > 0.0) k = static_cast<std::uint64_t>(std::poisson_distribution<std::int64_t>(lambda)(rng));
        if (k > std::numeric_limits<std::uint16_t>::max())
          throw OverflowError("sample_spikes: count exceeds u16 range");
        r.counts[(t * rates.n_cells + c) * rates.n_bins + b] = static_cast<std::uint16_t>(k);
      }
  }
  return r;
}

namespace {

nlohmann::json response_meta(const ResponseSet& r, const std::string& split) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t i = 0; i < r.n_cells(); ++i)
    cells.push_back({{"id", r.cell_ids[i]}, {"kind", cell_kind_name(r.kinds[i])}});
  return {{"kind", "responses"},       {"split", split},
          {"n_trials", r.n_trials},    {"n_cells", r.n_cells()},
          {"n_bins", r.n_bins},        {"bins_per_frame", r.bins_per_frame},
          {"bin_width_s", r.bin_width_s}, {"count_dtype", "u16le"},
          {"cells", cells}};
}

}  // namespace

void write_responses(const ResponseSet& r, const std::string& split, const std::filesystem::path& path) {
  HOCONV_REQUIRE(r.kinds.size() == r.n_cells(), ContractError, "responses: kinds/ids length mismatch");
  HOCONV_REQUIRE(r.counts.size() == r.n_trials * r.n_cells() * r.n_bins, ContractError,
                 "responses: count array does not match (trial, cell, bin) shape");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_container_header(os, {"HORX", kResponseFormatVersion, response_meta(r, split)});
  for (std::uint16_t v : r.counts) bin::put(os, v);
  if (!os) throw IoError("write failed for " + path.string());
}

ResponseSet read_responses(const std::filesystem::path& path, std::string* split) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const auto header = read_container_header(is, "HORX", kResponseFormatVersion);
  const auto& j = header.meta;
  ResponseSet r;
  try {
    if (j.at("kind").get<std::string>() != "responses")
      throw FormatError("HORX file does not hold responses");
    r.n_trials = j.at("n_trials").get<std::size_t>();
    r.n_bins = j.at("n_bins").get<std::size_t>();
    r.bins_per_frame = j.at("bins_per_frame").get<std::size_t>();
    r.bin_width_s = j.at("bin_width_s").get<double>();
    for (const auto& c : j.at("cells")) {
      r.cell_ids.push_back(c.at("id").get<std::string>());
      r.kinds.push_back(parse_cell_kind(c.at("kind").get<std::string>()));
    }
    if (j.at("n_cells").get<std::size_t>() != r.cell_ids.size())
      throw FormatError("HORX: n_cells disagrees with the cell table");
    if (split != nullptr) *split = j.at("split").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("HORX metadata malformed: ") + e.what());
  }
  if (r.bins_per_frame == 0 || r.n_bins % r.bins_per_frame != 0)
    throw FormatError("HORX: n_bins is not a multiple of bins_per_frame");
  const std::size_t n = r.n_trials * r.n_cells() * r.n_bins;
  r.counts.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.counts[i] = bin::get<std::uint16_t>(is, "counts");
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("HORX: trailing bytes after payload in " + path.string());
  return r;
}

std::uintmax_t expected_response_file_size(const ResponseSet& r, const std::string& split) {
  const ContainerHeader h{"HORX", kResponseFormatVersion, response_meta(r, split)};
  return h.byte_size() + 2 * r.n_trials * r.n_cells() * r.n_bins;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  HOCONV_REQUIRE(a.size() == b.size(), ContractError, "pearson: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<Reliability> bootstrap_reliability(const ResponseSet& r, std::size_t n_boot,
                                               std::uint64_t seed) {
  HOCONV_REQUIRE(r.n_trials >= 2, DataError,
                 "bootstrap_reliability: need at least 2 trials, got " + std::to_string(r.n_trials));
  HOCONV_REQUIRE(n_boot >= 1, ConfigError, "bootstrap_reliability: need at least one iteration");
  const std::size_t nc = r.n_cells();
  const std::size_t nf = r.n_frames();
  const std::size_t nt = r.n_trials;
  const std::size_t half = nt / 2;

  // Per cell: trial sums s[t] and the trial Gram matrix G[t][u] over frames.
  // Counts are integers, so every half-split moment below is exact.
  std::vector<double> sums(nc * nt, 0.0);
  std::vector<double> gram(nc * nt * nt, 0.0);
  std::vector<double> rows(nt * nf);
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t t = 0; t < nt; ++t) {
      const auto f = r.frame_counts(t, c);
      std::copy(f.begin(), f.end(), rows.begin() + static_cast<std::ptrdiff_t>(t * nf));
      sums[c * nt + t] = std::accumulate(f.begin(), f.end(), 0.0);
    }
    double* g = gram.data() + c * nt * nt;
    for (std::size_t t = 0; t < nt; ++t)
      for (std::size_t u = t; u < nt; ++u) {
        const double* x = rows.data() + t * nf;
        const double* y = rows.data() + u * nf;
        double acc = 0.0;
        for (std::size_t i = 0; i < nf; ++i) acc += x[i] * y[i];
        g[t * nt + u] = g[u * nt + t] = acc;
      }
  }

  const double n = static_cast<double>(nf);
  std::vector<std::vector<double>> samples(nc);
  std::vector<std::size_t> skipped(nc, 0);
  std::vector<std::size_t> perm(nt);
  for (std::size_t it = 0; it < n_boot; ++it) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed ^ it);
    std::shuffle(perm.begin(), perm.end(), rng);
    // First half against the second; with an odd count the last trial is dropped.
    const std::size_t* pa = perm.data();
    const std::size_t* pb = perm.data() + half;
    for (std::size_t c = 0; c < nc; ++c) {
      const double* s = sums.data() + c * nt;
      const double* g = gram.data() + c * nt * nt;
      double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (std::size_t k = 0; k < half; ++k) {
        sa += s[pa[k]];
        sb += s[pb[k]];
        const double* ga = g + pa[k] * nt;
        const double* gb = g + pb[k] * nt;
        for (std::size_t l = 0; l < half; ++l) {
          saa += ga[pa[l]];
          sbb += gb[pb[l]];
          sab += ga[pb[l]];
        }
      }
      const double va = n * saa - sa * sa;
      const double vb = n * sbb - sb * sb;
      if (va <= 0.0 || vb <= 0.0) {
        ++skipped[c];
        continue;
      }
      samples[c].push_back((n * sab - sa * sb) / std::sqrt(va * vb));
    }
  }

  std::vector<Reliability> out(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    Reliability& rel = out[c];
    rel.skipped = skipped[c];
    if (2 * skipped[c] > n_boot || samples[c].empty()) {
      rel.defined = false;
      rel.mean = rel.ci_low = rel.ci_high = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    auto& s = samples[c];
    rel.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    std::sort(s.begin(), s.end());
    rel.ci_low = percentile(s, 0.025);
    rel.ci_high = percentile(s, 0.975);
  }
  return out;
}

std::vector<std::size_t> select_reliable_cells(const std::vector<Reliability>& rel,
                                               const std::vector<std::string>& ids, std::size_t k) {
  HOCONV_REQUIRE(rel.size() == ids.size(), ContractError, "select_reliable_cells: length mismatch");
  HOCONV_REQUIRE(k <= rel.size(), ConfigError,
                 "select_reliable_cells: k = " + std::to_string(k) + " exceeds " +
                     std::to_string(rel.size()) + " cells");
  std::vector<std::size_t> order(rel.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const bool dx = rel[x].defined && !std::isnan(rel[x].mean);
    const bool dy = rel[y].defined && !std::isnan(rel[y].mean);
    if (dx != dy) return dx;
    if (dx && rel[x].mean != rel[y].mean) return rel[x].mean > rel[y].mean;
    return ids[x] < ids[y];
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

void write_reliability_csv(const ResponseSet& r, const std::vector<Reliability>& rel,
                           const std::filesystem::path& path) {
  HOCONV_REQUIRE(rel.size() == r.n_cells(), ContractError, "reliability csv: length mismatch");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "cell_id,reliability,ci_low,ci_high,kind\n" << std::setprecision(10);
  for (std::size_t i = 0; i < rel.size(); ++i)
    os << r.cell_ids[i] << ',' << rel[i].mean << ',' << rel[i].ci_low << ',' << rel[i].ci_high
       << ',' << cell_kind_name(r.kinds[i]) << '\n';
}

}  // namespace hoconv
