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
#include <span>
#include <vector>

#include "hoconv/tensor.hpp"

namespace hoconv {

inline constexpr std::size_t kDefaultStaLags = 40;

/// (lag, height, width); lag 0 is the bin containing the spike.
struct StaVolume {
  std::size_t n_lags = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  double n_spikes = 0.0;
  std::vector<double> values;

  double at(std::size_t lag, std::size_t y, std::size_t x) const { return values[(lag * height + y) * width + x]; }
  bool operator==(const StaVolume&) const = default;
};

/// Count-weighted average of the per-pixel mean-subtracted stimulus history.
/// Frames before the stimulus start count as the mean. `spikes` holds one
/// count per stimulus frame. DataError when there are no spikes.
StaVolume compute_sta(const VideoTensor& stimulus, std::span<const double> spikes,
                      std::size_t n_lags = kDefaultStaLags);

struct SeparableRF {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> spatial;   // unit norm, (height, width)
  std::vector<double> temporal;  // unit norm, largest-magnitude sample positive
  double sigma1 = 0.0;
  double separability = 0.0;  // sigma1^2 / sum sigma_i^2
};

/// Rank-1 truncation of the (lags, pixels) matrix. NumericError on an all-zero
/// or non-finite volume.
SeparableRF svd_decompose(const StaVolume& sta);

/// Binary checkerboard noise with values 0 and 1, one independent draw per check.
VideoTensor make_binary_noise(std::size_t frames, std::size_t height, std::size_t width, std::size_t check_size,
                              std::uint64_t seed);

inline constexpr std::uint16_t kStaFormatVersion = 1;

/// "HSTA" container: JSON metadata, then f64 values in (lag, y, x) order.
void write_sta(const StaVolume& sta, const std::string& cell_id, const std::filesystem::path& path);
StaVolume read_sta(const std::filesystem::path& path, std::string* cell_id = nullptr);

/// CSV with columns lag, value.
void write_temporal_csv(const SeparableRF& rf, const std::filesystem::path& path);
/// Plain-text PGM (P2); 128 is zero, 255 and 1 the extremes of |max|.
void write_spatial_pgm(const SeparableRF& rf, const std::filesystem::path& path);

}  // namespace hoconv
