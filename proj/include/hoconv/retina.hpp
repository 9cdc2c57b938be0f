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
#include <filesystem>
#include <string>
#include <vector>

#include "hoconv/tensor.hpp"

namespace hoconv {

enum class CellKind { kLinear, kMultiplicative, kExpansion, kDistractor };

std::string cell_kind_name(CellKind kind);
CellKind parse_cell_kind(const std::string& name);

/// Isotropic gaussian weighting in pixel coordinates, normalized to unit sum.
struct Subunit {
  double x = 0.0;
  double y = 0.0;
  double sigma = 1.0;
};

struct TemporalFilterSpec {
  double peak_ms = 40.0;
  double trough_ms = 80.0;
  double trough_ratio = 0.5;
  std::size_t length = 6;  // frames
};

/// Biphasic kernel over lags 0..length-1 (lag 0 is the current frame),
/// scaled to unit peak.
std::vector<double> biphasic_filter(const TemporalFilterSpec& spec, double frame_rate_hz);

/// Monophasic gamma bump peaking at peak_ms, scaled to unit sum.
std::vector<double> bump_filter(double peak_ms, std::size_t length, double frame_rate_hz);

// Ground-truth cell. Linear and distractor cells use subunits[0] with
// temporal_a. Multiplicative cells multiply subunits[0] through temporal_a
// with subunits[1] through temporal_b. Expansion cells sum, over consecutive
// (inner, outer) subunit pairs, inner(temporal_b) * outer(temporal_a) minus
// outer(temporal_b) * inner(temporal_a).
struct ModelCell {
  std::string id;
  CellKind kind = CellKind::kLinear;
  std::vector<Subunit> subunits;
  std::vector<double> temporal_a;
  std::vector<double> temporal_b;
  double gain = 1.0;
  double threshold = 0.0;
  double base_rate = 0.1;  // spikes per bin

  std::size_t filter_length() const;
  bool operator==(const ModelCell&) const = default;
};

struct RetinaConfig {
  std::size_t n_linear = 12;
  std::size_t n_multiplicative = 10;
  std::size_t n_expansion = 11;
  std::size_t n_distractor = 7;
  double bin_width_s = 0.01;
  TemporalFilterSpec temporal;
  double hr_fast_ms = 20.0;
  double hr_slow_ms = 60.0;
  double linear_sigma = 4.0;
  double subunit_sigma = 2.5;
  double subunit_offset = 6.0;
  double expansion_radius = 7.0;
  std::size_t expansion_pairs = 8;
  double expansion_jitter = 1.0;  // max offset of an expansion cell from the frame center
  double drive_gain = 2.0;        // target std of gain * drive after calibration
  double threshold = 1.0;
  double base_rate = 0.25;
  double distractor_rate = 0.03;
  double distractor_gain = 0.5;
  std::size_t bootstrap_iterations = 10000;
  std::uint64_t seed = 2;
};

/// Random bank of cells whose receptive fields fit the frame. Gains are unit
/// until calibrate_bank is applied.
std::vector<ModelCell> make_cell_bank(const RetinaConfig& config, std::size_t height,
                                      std::size_t width, double frame_rate_hz);

/// Sets |gain| of each cell to drive_gain / std(drive) over the movie
/// (distractor_gain for distractors), preserving the sign. Cells with constant
/// drive keep their gain.
void calibrate_bank(std::vector<ModelCell>& cells, const VideoTensor& movie,
                    const RetinaConfig& config);

/// Cells x frames, row-major.
struct RateMatrix {
  std::size_t n_cells = 0;
  std::size_t n_bins = 0;
  std::vector<double> values;

  RateMatrix() = default;
  RateMatrix(std::size_t cells, std::size_t bins, double fill = 0.0)
      : n_cells(cells), n_bins(bins), values(cells * bins, fill) {}
  double& at(std::size_t c, std::size_t b) { return values[c * n_bins + b]; }
  double at(std::size_t c, std::size_t b) const { return values[c * n_bins + b]; }
  bool operator==(const RateMatrix&) const = default;
};

/// Linear drive of every cell before gain and nonlinearity, one column per
/// frame. Frames before the movie start read as mean gray.
RateMatrix simulate_drive(const std::vector<ModelCell>& cells, const VideoTensor& movie);

/// Per-bin rates for each frame of the movie: base_rate * softplus(gain * drive - threshold).
RateMatrix simulate_rates(const std::vector<ModelCell>& cells, const VideoTensor& movie);

/// Repeats each column bins_per_frame times.
RateMatrix expand_bins(const RateMatrix& per_frame, std::size_t bins_per_frame);

struct ResponseSet {
  std::vector<std::string> cell_ids;
  std::vector<CellKind> kinds;
  std::size_t n_trials = 0;
  std::size_t n_bins = 0;
  std::size_t bins_per_frame = 1;
  double bin_width_s = 0.01;
  std::vector<std::uint16_t> counts;  // (trial, cell, bin)
  RateMatrix rates;                   // diagnostics only; not stored on disk

  std::size_t n_cells() const { return cell_ids.size(); }
  std::size_t n_frames() const { return n_bins / bins_per_frame; }
  std::uint16_t count(std::size_t trial, std::size_t cell, std::size_t bin) const {
    return counts[(trial * n_cells() + cell) * n_bins + bin];
  }
  /// Counts of one trial summed over the bins of each frame.
  std::vector<double> frame_counts(std::size_t trial, std::size_t cell) const;
  /// Across-trial mean of frame_counts.
  std::vector<double> trial_mean_frames(std::size_t cell) const;
  /// Keeps the listed cells in the given order.
  ResponseSet subset(const std::vector<std::size_t>& cells) const;
};

/// Independent Poisson draws per (trial, cell, bin); trial t uses its own
/// stream seeded from (seed, t).
ResponseSet sample_spikes(const RateMatrix& rates_per_bin, std::size_t n_trials,
                          std::uint64_t seed);

inline constexpr std::uint16_t kResponseFormatVersion = 1;

void write_responses(const ResponseSet& responses, const std::string& split,
                     const std::filesystem::path& path);
ResponseSet read_responses(const std::filesystem::path& path, std::string* split = nullptr);
std::uintmax_t expected_response_file_size(const ResponseSet& responses, const std::string& split);

struct Reliability {
  double mean = 0.0;  // NaN when undefined
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t skipped = 0;
  bool defined = true;
};

/// Split-half reliability per cell on frame-summed counts. Iteration i draws
/// its split from the stream seeded with seed ^ i and uses it for every cell.
std::vector<Reliability> bootstrap_reliability(const ResponseSet& responses,
                                               std::size_t n_boot, std::uint64_t seed);

/// Indices of the k most reliable cells in ascending index order; ties go to
/// the smaller id, undefined cells rank last.
std::vector<std::size_t> select_reliable_cells(const std::vector<Reliability>& reliabilities,
                                               const std::vector<std::string>& ids,
                                               std::size_t k);

/// CSV with columns cell_id, reliability, ci_low, ci_high, kind.
void write_reliability_csv(const ResponseSet& responses,
                           const std::vector<Reliability>& reliabilities,
                           const std::filesystem::path& path);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace hoconv
