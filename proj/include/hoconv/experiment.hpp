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
#include "hoconv/readout.hpp"
#include "hoconv/retina.hpp"
#include "hoconv/stimulus.hpp"

namespace hoconv {

struct ModelConfig {
  std::size_t crop = 48;  // center crop of the stimulus frame, pixels
  std::size_t pool = 6;   // average-pool factor after cropping
  WindowSpec first{6, 3};
  WindowSpec second{1, 3};
  std::size_t channels1 = 8;
  std::size_t channels2 = 8;
  int order = 2;  // first-layer order of the higher-order model
  bool higher_order = true;  // "hocnn"; false is the baseline
};

struct ReadoutConfig {
  std::size_t tap_block = 2;  // conv block whose output is decoded
  double lambda = 1e-3;
  std::vector<double> lambda_sweep{1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
  bool per_frame = false;  // otherwise the last frame of each sequence
};

struct StaConfig {
  std::size_t frames = 6000;
  std::size_t check_size = 5;
  std::size_t n_lags = 40;
};

struct ExperimentConfig {
  StimulusConfig stimulus;
  RetinaConfig cells;
  ModelConfig model;
  TrainConfig train;
  ReadoutConfig readout;
  StaConfig sta;
  std::size_t train_trials = 1;
  std::size_t n_selected = 40;
  std::string cell_subset = "all";  // all | reliable | expansion | control
  double fraction = 0.9;
  std::filesystem::path out_dir = "runs";
  std::uint64_t seed = 1;
};

/// Overrides every component seed from one master seed.
void apply_master_seed(ExperimentConfig& config, std::uint64_t seed);

/// Center-crop, average-pool and contrast-center a (T, H, W, 1) movie.
VideoTensor network_input(const VideoTensor& movie, const ModelConfig& model);

/// Input shape of one clip given the stimulus frame size.
Shape clip_shape(const ModelConfig& model);

NetworkSpec model_spec(const ModelConfig& model, bool higher_order, std::size_t n_cells);

struct PreparedData {
  StimulusDataset dataset;
  std::vector<ModelCell> cells;
  ResponseSet train_responses;
  ResponseSet test_responses;
};

/// Stimuli, calibrated cell bank, and responses to both splits.
PreparedData prepare_data(const ExperimentConfig& config);

/// Cell bank calibrated on the training movie and its responses to both splits.
PreparedData simulate_responses(const ExperimentConfig& config, StimulusDataset dataset);

/// Responses of a calibrated bank to one split.
ResponseSet simulate_split(const std::vector<ModelCell>& cells, const SequenceSet& set, std::size_t n_trials,
                           double bin_width_s, double frame_rate_hz, std::uint64_t seed);

ResponseSet simulate_movie(const std::vector<ModelCell>& cells, const VideoTensor& movie, std::size_t n_trials,
                           double bin_width_s, double frame_rate_hz, std::uint64_t seed);

/// Training targets are trial-mean frame counts.
ClipData make_clip_data(const VideoTensor& input, const ResponseSet& responses, std::size_t clip_len);

struct FrameSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Validation is the final val_fraction of the movie in whole sequences; the
/// training part is the first `fraction` of all sequences. ConfigError unless
/// 0 < fraction <= 1 - val_fraction.
FrameSplit fraction_split(std::size_t n_sequences, std::size_t frames_per_sequence, double fraction,
                          double val_fraction);

struct ModelRun {
  TrainResult train;
  CorrelationSummary test;
  std::vector<double> predicted;   // (cells, frames) on the test movie
  std::vector<double> trial_mean;  // (cells, frames)
};

TrainResult train_model(const ExperimentConfig& config, const PreparedData& data,
                        const std::vector<std::size_t>& cells, bool higher_order, double fraction);

/// Predictions on the whole test movie and correlation to the trial mean.
ModelRun evaluate_model(const ExperimentConfig& config, const PreparedData& data,
                        const std::vector<std::size_t>& cells, const NetworkState& state);

/// Trains one model on the given cells and evaluates it on the test split.
ModelRun fit_and_evaluate(const ExperimentConfig& config, const PreparedData& data,
                          const std::vector<std::size_t>& cells, bool higher_order, double fraction);

/// Cells named by config.cell_subset: every cell, the n_selected most reliable,
/// the expansion cells, or as many linear cells as there are expansion cells.
std::vector<std::size_t> select_cells(const ExperimentConfig& config, const ResponseSet& test_responses);

/// Configuration of the desk-scale benchmark: small first layer, 100 test sequences.
ExperimentConfig benchmark_config();

/// Indices of cells of the given kind, in bank order.
std::vector<std::size_t> cells_of_kind(const std::vector<ModelCell>& cells, CellKind kind);


/// Second-block features of every sequence, decoded with a ridge readout fit on
/// the training split and scored on the test split.
ReadoutEvaluation decode_geometry(const ExperimentConfig& config, const PreparedData& data, const NetworkState& state,
                                  double lambda);

/// Mean numerical rank of the first layer's dense order-2 matrices over output
/// channels. Zero for a network without an order-2 first layer.
double first_layer_w2_rank(const NetworkState& state);

struct BenchmarkSettings {
  std::size_t seeds = 5;
  std::uint64_t first_seed = 1;
  double fraction_full = 0.9;
  double fraction_half = 0.5;
};

struct SeedBenchmark {
  std::uint64_t seed = 0;
  double rho_baseline = 0.0;     // correlation to mean, all cells, 90% data
  double rho_hocnn = 0.0;
  double rho_hocnn_half = 0.0;   // HoCNN at the reduced fraction
  double h11_baseline = 0.0, h22_baseline = 0.0;
  double h11_hocnn = 0.0, h22_hocnn = 0.0;
  // rho(H11) from networks trained on the expansion subset, all cells, and the control subset.
  std::array<double, 3> subset_h11_hocnn{};
  std::array<double, 3> subset_h11_baseline{};
  double w2_rank = 0.0;
  double seconds = 0.0;
};

SeedBenchmark run_benchmark_seed(ExperimentConfig config, std::uint64_t seed, double fraction_full,
                                 double fraction_half);

struct BenchmarkVerdict {
  double gap = 0.0;           // mean HoCNN - baseline correlation to mean
  double half_margin = 0.0;   // mean HoCNN(half) - baseline(full)
  double h11_gap = 0.0, h22_gap = 0.0;
  std::array<double, 3> subset_hocnn{}, subset_baseline{};
  double baseline_spread = 0.0;
  double w2_rank = 0.0;
  bool gap_ok = false, half_ok = false, decode_ok = false, subset_ok = false;
};

BenchmarkVerdict judge_benchmark(const std::vector<SeedBenchmark>& runs);

}  // namespace hoconv
