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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hoconv/nn.hpp"
#include "hoconv/stimulus.hpp"

namespace hoconv {

inline constexpr std::size_t kHomographyParams = 8;
using ParamVector = std::array<double, kHomographyParams>;

/// "H11", "H12", "H13", "H21", "H22", "H23", "H31", "H32".
const std::array<std::string, kHomographyParams>& homography_param_names();

struct FeatureMatrix {
  std::size_t n_features = 0;
  std::vector<double> values;  // (rows, n_features)
  std::vector<ParamVector> labels;
  std::vector<std::size_t> sequence_ids;
  std::vector<std::size_t> frames;  // frame within the sequence

  std::size_t rows() const { return labels.size(); }
  const double* row(std::size_t r) const { return values.data() + r * n_features; }
};

/// Layer index of the output (after its relu) of the given 1-based conv block.
std::size_t conv_block_tap(const NetworkSpec& spec, std::size_t block);

/// Eval-mode activations after layer `tap`, flattened. ConfigError unless tap
/// is a layer before flatten that ends a conv block (conv, batch norm or relu).
std::vector<double> extract_features(const NetworkState& state, const VideoTensor& clip, std::size_t tap);

/// FNV-1a over every parameter and running statistic.
std::uint64_t parameter_checksum(const NetworkState& state);

/// One row per sequence (its last frame) or per frame whose clip lies inside
/// its sequence. `input` is the network input movie of the whole set.
FeatureMatrix build_features(const NetworkState& state, const VideoTensor& input, const SequenceSet& set,
                             std::size_t clip_len, std::size_t tap, bool per_frame);

struct LinearReadout {
  double lambda = 0.0;
  std::size_t n_features = 0;        // before dropping constant columns
  std::vector<std::size_t> kept;     // feature columns used
  std::vector<std::size_t> dropped;  // constant columns
  std::vector<double> mean, scale;   // per kept column, training rows only
  std::vector<double> weights;       // (kept, 8) on standardized features
  ParamVector intercept{};
};

/// Ridge on standardized features minimizing mean squared error + lambda |W|^2,
/// intercept = label means. lambda 0 gives the minimum-norm least-squares solution.
LinearReadout fit_readout(const FeatureMatrix& train, double lambda);

std::vector<ParamVector> predict_readout(const LinearReadout& readout, const FeatureMatrix& features);

struct ReadoutEvaluation {
  ParamVector rho{};  // NaN where the true column has zero variance
  std::vector<ParamVector> predicted;
};

ReadoutEvaluation evaluate_readout(const LinearReadout& readout, const FeatureMatrix& test);

/// Columns sequence_id, parameter, true, predicted.
void write_scatter_csv(const FeatureMatrix& test, const ReadoutEvaluation& eval, const std::filesystem::path& path);

}  // namespace hoconv
