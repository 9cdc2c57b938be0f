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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hoconv/config.hpp"
#include "hoconv/sta.hpp"

namespace hoconv {

inline constexpr const char* kToolVersion = "0.1.0";

struct CommandOptions {
  std::filesystem::path out;  // defaults to config.out_dir when empty
  bool force = false;         // overwrite existing outputs
  std::filesystem::path dataset;
  std::filesystem::path responses;
  std::filesystem::path checkpoint;
  std::optional<double> fraction;  // overrides config.fraction
};

struct CommandResult {
  std::filesystem::path out;
  std::vector<std::string> outputs;  // file names relative to out
  std::string summary;               // one line for the terminal
};

// Every command writes config.json (the resolved config) and manifest.json
// (tool version, config echo, SHA-256 of inputs and outputs) next to its
// outputs, and refuses to overwrite existing files unless forced.

/// train.hocv, test.hocv, labels_train.csv, labels_test.csv.
CommandResult cmd_generate(const ExperimentConfig& config, const CommandOptions& options);

/// train.horx, test.horx, reliability.csv, cells.csv.
CommandResult cmd_simulate(const ExperimentConfig& config, const CommandOptions& options);

/// checkpoint.hock, training_log.csv, selected_cells.csv. Writes the best
/// checkpoint and then raises NumericError if training diverged.
CommandResult cmd_train(const ExperimentConfig& config, const CommandOptions& options);

/// metrics.csv (per cell), summary.csv (mean and stderr), scatter.csv.
CommandResult cmd_eval(const ExperimentConfig& config, const CommandOptions& options);

/// readout_summary.csv, readout_sweep.csv, scatter.csv.
CommandResult cmd_decode(const ExperimentConfig& config, const CommandOptions& options);

/// sta_summary.csv and per cell <id>.hsta, <id>_temporal.csv, <id>_spatial.pgm.
CommandResult cmd_sta(const ExperimentConfig& config, const CommandOptions& options);

struct StaRow {
  std::string cell_id;
  std::string kind;
  double n_spikes = 0.0;
  double separability = 0.0;
  double sigma1 = 0.0;
  std::string error;  // empty on success
};

/// STA and separable decomposition per cell; counts are (cells, frames).
/// Cells whose STA fails get an error row and the rest continue. Exports go
/// to dir when it is non-empty.
std::vector<StaRow> sta_for_cells(const VideoTensor& noise, const std::vector<std::vector<double>>& counts,
                                  const std::vector<std::string>& ids, const std::vector<std::string>& kinds,
                                  std::size_t n_lags, const std::filesystem::path& dir);

void write_sta_summary(const std::vector<StaRow>& rows, const std::filesystem::path& path);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace hoconv
