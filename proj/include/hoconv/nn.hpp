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
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hoconv/hoconv.hpp"

namespace hoconv {

enum class LayerKind { kConv3d, kHoConv3d, kBatchNorm, kRelu, kFlatten, kDense, kSoftplus };

std::string layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  WindowSpec window;       // conv layers
  std::size_t units = 0;   // output channels (conv) or output units (dense)
  int order = 1;           // 1 for conv3d, 2 or 3 for hoconv3d

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  Shape input;  // one clip: (frames, height, width, channels)
  std::vector<LayerSpec> layers;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  /// One-line text form, e.g.
  /// "input 6x8x8x1; hoconv3d order=2 window=6x3 units=8; batch_norm; relu; ...".
  std::string canonical() const;
  static NetworkSpec parse(const std::string& text);

  /// Runs symbolic shape propagation; ConfigError on any mismatch or when the
  /// stack does not end in (dense, softplus). Returns each layer's output shape
  /// (dense outputs are reported as (1, 1, 1, units)).
  std::vector<Shape> propagate() const;
  std::size_t output_units() const;

  bool operator==(const NetworkSpec&) const = default;
};

/// conv(first) -> bn -> relu -> conv -> bn -> relu -> flatten -> dense -> softplus.
/// first_order 1 gives the baseline, 2 or 3 the higher-order variant.
NetworkSpec make_two_block_spec(const Shape& input, const WindowSpec& first, const WindowSpec& second,
                                std::size_t channels1, std::size_t channels2, std::size_t cells,
                                int first_order);

// Learnable arrays and running statistics of one layer; only the members
// relevant to the layer kind are non-empty.
struct LayerParams {
  HoKernelBank kernels;
  std::vector<double> gamma, beta, running_mean, running_var;
  std::vector<double> weight, bias;  // dense: weight[o * in + i]

  bool operator==(const LayerParams&) const = default;
};

struct NetworkState {
  NetworkSpec spec;
  std::vector<LayerParams> params;
  std::vector<std::vector<double>> moment1;  // aligned with parameter_arrays()
  std::vector<std::vector<double>> moment2;
  std::uint64_t step_count = 0;
  std::uint64_t rng_seed = 0;

  /// Fresh network; every layer draws from its own stream derived from (seed, layer).
  static NetworkState initialize(const NetworkSpec& spec, std::uint64_t seed);

  struct ArrayRef {
    std::size_t layer;
    std::string name;  // "b", "w1", "w2", "w3", "gamma", "beta", "weight", "bias"
    std::vector<double>* values;
  };
  /// Learnable arrays in layer order.
  std::vector<ArrayRef> parameter_arrays();
  std::vector<std::pair<std::size_t, std::string>> parameter_names() const;

  bool operator==(const NetworkState&) const = default;
};

enum class Mode { kTrain, kEval };

/// Rates of shape (batch, cells), row-major. Train mode uses batch statistics
/// and updates the running statistics in state.
std::vector<double> forward_network(NetworkState& state, std::span<const VideoTensor> batch, Mode mode);

/// Single-clip evaluation.
std::vector<double> forward_network(const NetworkState& state, const VideoTensor& input);

/// Per-layer activations after each layer of a single clip in eval mode.
std::vector<std::vector<double>> layer_activations(const NetworkState& state, const VideoTensor& input);

/// Gradients shaped like NetworkState::params.
struct NetworkGrads {
  std::vector<LayerParams> params;
};

/// Forward in train mode, Poisson loss against counts (batch, cells) and full backward.
double loss_and_gradients(NetworkState& state, std::span<const VideoTensor> batch,
                          std::span<const double> counts, NetworkGrads* grads);

/// mean over entries of (lambda + eps) - y * ln(lambda + eps), eps = 1e-8.
double poisson_nll(std::span<const double> rates, std::span<const double> counts);
/// d loss / d rate for the same loss.
std::vector<double> poisson_nll_grad(std::span<const double> rates, std::span<const double> counts);

struct SchedulerConfig {
  double factor = 0.5;
  std::size_t patience = 5;
  double threshold = 1e-5;  // relative improvement
  double min_lr = 1e-7;
};

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 1e-6;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 20;
  double val_fraction = 0.10;
  SchedulerConfig scheduler;
  std::size_t early_stop_patience = 5;
  std::uint64_t seed = 0;
  bool freeze_higher_order = false;  // keep w2/w3 at zero
  bool record_wall_time = false;     // otherwise wall_seconds is logged as 0
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

/// Decoupled weight decay, then the bias-corrected Adam step. Frozen higher-order
/// arrays are left untouched. NumericError names the layer and array of a
/// non-finite gradient before anything is modified.
void adamw_step(NetworkState& state, NetworkGrads& grads, const TrainConfig& config, double lr);

class PlateauScheduler {
 public:
  PlateauScheduler(SchedulerConfig config, double lr) : cfg_(config), lr_(lr) {}
  /// Feeds one validation loss and returns the learning rate for the next epoch.
  double step(double val_loss);
  double lr() const { return lr_; }

 private:
  SchedulerConfig cfg_;
  double lr_;
  double best_ = 0.0;
  bool has_best_ = false;
  std::size_t bad_ = 0;
};

/// Replays the scheduler over the history and returns current_lr, reduced
/// when the last entry triggers a reduction.
double plateau_scheduler_update(std::span<const double> history, double current_lr,
                                const SchedulerConfig& config);

// Aligned clips and per-frame spike counts. Sample f is the clip ending at
// movie frame f; frames before the movie start are zero.
struct ClipData {
  VideoTensor movie;           // (T, H, W, C)
  std::size_t clip_len = 1;
  std::size_t n_cells = 0;
  std::vector<double> targets;  // (T, n_cells)

  VideoTensor clip(std::size_t frame) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  NetworkState best;
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  bool aborted_non_finite = false;
};

/// Trains on the listed frames; the last val_fraction of them (in the given
/// order) form the validation split. Returns the minimum-validation-loss state.
TrainResult train(const NetworkSpec& spec, const ClipData& data, const std::vector<std::size_t>& frames,
                  const TrainConfig& config);

/// Continues from an existing state (used by tests and resumption).
TrainResult train_from(NetworkState initial, const ClipData& data, const std::vector<std::size_t>& frames,
                       const TrainConfig& config);

/// Explicit split; config.val_fraction is not consulted.
TrainResult train_from(NetworkState initial, const ClipData& data, std::vector<std::size_t> train_frames,
                       const std::vector<std::size_t>& val_frames, const TrainConfig& config);

/// CSV with columns epoch, train_loss, val_loss, lr, wall_seconds.
void write_training_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path);

/// Eval-mode rates for the listed frames, (frames, cells) row-major.
std::vector<double> predict(const NetworkState& state, const ClipData& data,
                            const std::vector<std::size_t>& frames, std::size_t batch_size = 256);

struct CorrelationSummary {
  std::vector<double> per_cell;  // NaN where undefined
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t excluded = 0;
};

/// Pearson correlation per cell between predicted and trial-mean series, both
/// (cells, bins) row-major; aggregate over defined cells.
CorrelationSummary correlation_to_mean(std::span<const double> predicted, std::span<const double> trial_mean,
                                       std::size_t n_cells);

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

void write_checkpoint(const NetworkState& state, const std::filesystem::path& path);
NetworkState read_checkpoint(const std::filesystem::path& path);

}  // namespace hoconv
