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

#include "hoconv/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace hoconv {

void apply_master_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.stimulus.seed = seed;
  config.cells.seed = seed + 0x9e3779b97f4a7c15ULL;
  config.train.seed = seed;
}

VideoTensor network_input(const VideoTensor& movie, const ModelConfig& model) {
  const Shape s = movie.shape();
  HOCONV_REQUIRE(s.c == 1, ConfigError, "network_input: expected a single-channel movie");
  HOCONV_REQUIRE(model.pool >= 1 && model.crop >= model.pool && model.crop % model.pool == 0, ConfigError,
                 "model: crop must be a positive multiple of pool");
  HOCONV_REQUIRE(model.crop <= s.h && model.crop <= s.w, ConfigError,
                 "model: crop " + std::to_string(model.crop) + " exceeds the frame " + s.str());
  const std::size_t r0 = (s.h - model.crop) / 2;
  const std::size_t c0 = (s.w - model.crop) / 2;
  const std::size_t out = model.crop / model.pool;
  const double norm = 1.0 / static_cast<double>(model.pool * model.pool);
  VideoTensor result(Shape{s.t, out, out, 1}, 0.0);
  for (std::size_t t = 0; t < s.t; ++t)
    for (std::size_t i = 0; i < out; ++i)
      for (std::size_t j = 0; j < out; ++j) {
        double sum = 0.0;
        for (std::size_t a = 0; a < model.pool; ++a)
          for (std::size_t b = 0; b < model.pool; ++b)
            sum += movie.at(t, r0 + i * model.pool + a, c0 + j * model.pool + b, 0);
        result.at(t, i, j, 0) = sum * norm - 0.5;
      }
  return result;
}

Shape clip_shape(const ModelConfig& model) {
  HOCONV_REQUIRE(model.pool >= 1 && model.crop % model.pool == 0, ConfigError,
                 "model: crop must be a positive multiple of pool");
  const std::size_t out = model.crop / model.pool;
  return Shape{model.first.n_t, out, out, 1};
}

NetworkSpec model_spec(const ModelConfig& model, bool higher_order, std::size_t n_cells) {
  HOCONV_REQUIRE(!higher_order || model.order == 2 || model.order == 3, ConfigError,
                 "model: order must be 2 or 3");
  return make_two_block_spec(clip_shape(model), model.first, model.second, model.channels1, model.channels2, n_cells,
                             higher_order ? model.order : 1);
}

ResponseSet simulate_split(const std::vector<ModelCell>& cells, const SequenceSet& set, std::size_t n_trials,
                           double bin_width_s, double frame_rate_hz, std::uint64_t seed) {
  return simulate_movie(cells, concat_movie(set), n_trials, bin_width_s, frame_rate_hz, seed);
}

ResponseSet simulate_movie(const std::vector<ModelCell>& cells, const VideoTensor& movie, std::size_t n_trials,
                           double bin_width_s, double frame_rate_hz, std::uint64_t seed) {
  const double bins_per_frame_real = 1.0 / (frame_rate_hz * bin_width_s);
  const auto bins_per_frame = static_cast<std::size_t>(std::llround(bins_per_frame_real));
  HOCONV_REQUIRE(bins_per_frame >= 1 && std::abs(bins_per_frame_real - static_cast<double>(bins_per_frame)) < 1e-9,
                 ConfigError,
                 "bin width " + std::to_string(bin_width_s) + " s does not divide the frame period at " +
                     std::to_string(frame_rate_hz) + " Hz");
  RateMatrix rates = simulate_rates(cells, movie);
  ResponseSet r = sample_spikes(expand_bins(rates, bins_per_frame), n_trials, seed);
  r.bins_per_frame = bins_per_frame;
  r.bin_width_s = bin_width_s;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    r.cell_ids[c] = cells[c].id;
    r.kinds[c] = cells[c].kind;
  }
  return r;
}

PreparedData prepare_data(const ExperimentConfig& config) { return simulate_responses(config, generate_dataset(config.stimulus)); }

PreparedData simulate_responses(const ExperimentConfig& config, StimulusDataset dataset) {
  PreparedData d;
  d.dataset = std::move(dataset);
  const VideoTensor train_movie = concat_movie(d.dataset.train);
  d.cells = make_cell_bank(config.cells, d.dataset.height, d.dataset.width, d.dataset.frame_rate_hz);
  calibrate_bank(d.cells, train_movie, config.cells);
  d.train_responses = simulate_split(d.cells, d.dataset.train, config.train_trials, config.cells.bin_width_s,
                                     d.dataset.frame_rate_hz, config.cells.seed);
  d.test_responses = simulate_split(d.cells, d.dataset.test, d.dataset.test.repeats, config.cells.bin_width_s,
                                    d.dataset.frame_rate_hz, config.cells.seed + 1);
  return d;
}

ClipData make_clip_data(const VideoTensor& input, const ResponseSet& responses, std::size_t clip_len) {
  HOCONV_REQUIRE(responses.n_frames() == input.shape().t, DataError,
                 "responses cover " + std::to_string(responses.n_frames()) + " frames but the stimulus has " +
                     std::to_string(input.shape().t));
  ClipData d;
  d.movie = input;
  d.clip_len = clip_len;
  d.n_cells = responses.n_cells();
  d.targets.assign(input.shape().t * d.n_cells, 0.0);
  for (std::size_t c = 0; c < d.n_cells; ++c) {
    const auto m = responses.trial_mean_frames(c);
    for (std::size_t f = 0; f < m.size(); ++f) d.targets[f * d.n_cells + c] = m[f];
  }
  return d;
}

FrameSplit fraction_split(std::size_t n_sequences, std::size_t frames_per_sequence, double fraction,
                          double val_fraction) {
  HOCONV_REQUIRE(val_fraction > 0.0 && val_fraction < 1.0, ConfigError, "val_fraction must be in (0, 1)");
  HOCONV_REQUIRE(fraction > 0.0 && fraction <= 1.0 - val_fraction + 1e-12, ConfigError,
                 "training fraction " + std::to_string(fraction) + " must be in (0, " +
                     std::to_string(1.0 - val_fraction) + "] so it does not overlap validation");
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n_sequences)));
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_sequences)));
  HOCONV_REQUIRE(n_val >= 1 && n_train >= 1 && n_train + n_val <= n_sequences, DataError,
                 "too few sequences (" + std::to_string(n_sequences) + ") for fraction " + std::to_string(fraction));
  FrameSplit s;
  for (std::size_t f = 0; f < n_train * frames_per_sequence; ++f) s.train.push_back(f);
  for (std::size_t f = (n_sequences - n_val) * frames_per_sequence; f < n_sequences * frames_per_sequence; ++f)
    s.val.push_back(f);
  return s;
}

TrainResult train_model(const ExperimentConfig& config, const PreparedData& data,
                        const std::vector<std::size_t>& cells, bool higher_order, double fraction) {
  HOCONV_REQUIRE(!cells.empty(), ConfigError, "no cells selected for training");
  const ClipData clips = make_clip_data(network_input(concat_movie(data.dataset.train), config.model),
                                        data.train_responses.subset(cells), config.model.first.n_t);
  const FrameSplit split = fraction_split(data.dataset.train.sequences.size(), data.dataset.frames_per_sequence,
                                          fraction, config.train.val_fraction);
  const NetworkSpec spec = model_spec(config.model, higher_order, cells.size());
  return train_from(NetworkState::initialize(spec, config.train.seed), clips, split.train, split.val, config.train);
}

ModelRun evaluate_model(const ExperimentConfig& config, const PreparedData& data,
                        const std::vector<std::size_t>& cells, const NetworkState& state) {
  HOCONV_REQUIRE(!data.dataset.test.sequences.empty(), DataError, "test set is empty");
  HOCONV_REQUIRE(state.spec.output_units() == cells.size(), ConfigError,
                 "checkpoint predicts " + std::to_string(state.spec.output_units()) + " cells but " +
                     std::to_string(cells.size()) + " are selected");
  const ClipData clips = make_clip_data(network_input(concat_movie(data.dataset.test), config.model),
                                        data.test_responses.subset(cells), config.model.first.n_t);
  HOCONV_REQUIRE(clips.clip(0).shape() == state.spec.input, ConfigError,
                 "checkpoint expects clips " + state.spec.input.str() + " but the model config gives " +
                     clips.clip(0).shape().str());
  std::vector<std::size_t> frames(clips.movie.shape().t);
  std::iota(frames.begin(), frames.end(), std::size_t{0});
  const auto pred = predict(state, clips, frames);
  const std::size_t n = cells.size();
  ModelRun run;
  run.predicted.assign(n * frames.size(), 0.0);
  run.trial_mean.assign(n * frames.size(), 0.0);
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (std::size_t c = 0; c < n; ++c) {
      run.predicted[c * frames.size() + f] = pred[f * n + c];
      run.trial_mean[c * frames.size() + f] = clips.targets[f * n + c];
    }
  run.test = correlation_to_mean(run.predicted, run.trial_mean, n);
  return run;
}

ModelRun fit_and_evaluate(const ExperimentConfig& config, const PreparedData& data,
                          const std::vector<std::size_t>& cells, bool higher_order, double fraction) {
  TrainResult trained = train_model(config, data, cells, higher_order, fraction);
  ModelRun run = evaluate_model(config, data, cells, trained.best);
  run.train = std::move(trained);
  return run;
}

std::vector<std::size_t> cells_of_kind(const std::vector<ModelCell>& cells, CellKind kind) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i].kind == kind) out.push_back(i);
  return out;
}

std::vector<std::size_t> select_cells(const ExperimentConfig& config, const ResponseSet& test_responses) {
  const std::string& subset = config.cell_subset;
  const auto of_kind = [&](CellKind kind) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < test_responses.kinds.size(); ++i)
      if (test_responses.kinds[i] == kind) out.push_back(i);
    return out;
  };
  if (subset == "all") {
    std::vector<std::size_t> all(test_responses.n_cells());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  if (subset == "reliable") {
    const auto rel = bootstrap_reliability(test_responses, config.cells.bootstrap_iterations, config.cells.seed);
    return select_reliable_cells(rel, test_responses.cell_ids, std::min(config.n_selected, test_responses.n_cells()));
  }
  const auto expansion = of_kind(CellKind::kExpansion);
  HOCONV_REQUIRE(!expansion.empty(), ConfigError, "cell subset '" + subset + "' needs expansion cells");
  if (subset == "expansion") return expansion;
  if (subset == "control") {
    auto control = of_kind(CellKind::kLinear);
    HOCONV_REQUIRE(control.size() >= expansion.size(), ConfigError,
                   "control subset needs at least as many linear cells as expansion cells");
    control.resize(expansion.size());
    return control;
  }
  throw ConfigError("unknown cell subset '" + subset + "' (expected all, reliable, expansion or control)");
}

ExperimentConfig benchmark_config() {
  ExperimentConfig c;
  c.stimulus.test_sequences = 100;
  c.model.channels1 = 2;
  c.model.channels2 = 4;
  c.train.lr = 2e-3;
  return c;
}

ReadoutEvaluation decode_geometry(const ExperimentConfig& config, const PreparedData& data, const NetworkState& state,
                                  double lambda) {
  const std::size_t tap = conv_block_tap(state.spec, config.readout.tap_block);
  const std::size_t clip = config.model.first.n_t;
  const auto train = build_features(state, network_input(concat_movie(data.dataset.train), config.model),
                                    data.dataset.train, clip, tap, config.readout.per_frame);
  const auto test = build_features(state, network_input(concat_movie(data.dataset.test), config.model),
                                   data.dataset.test, clip, tap, config.readout.per_frame);
  return evaluate_readout(fit_readout(train, lambda), test);
}

double first_layer_w2_rank(const NetworkState& state) {
  if (state.params.empty() || state.spec.layers.front().kind != LayerKind::kHoConv3d) return 0.0;
  const HoKernelBank& k = state.params.front().kernels;
  if (k.order < 2 || k.out_channels == 0) return 0.0;
  const std::size_t m = k.w1.size() / k.out_channels;
  double total = 0.0;
  for (std::size_t c = 0; c < k.out_channels; ++c)
    total += static_cast<double>(numerical_rank_symmetric(k.dense_quadratic(c), m));
  return total / static_cast<double>(k.out_channels);
}

SeedBenchmark run_benchmark_seed(ExperimentConfig config, std::uint64_t seed, double fraction_full,
                                 double fraction_half) {
  const auto start = std::chrono::steady_clock::now();
  apply_master_seed(config, seed);
  const PreparedData data = prepare_data(config);
  const auto subset = [&](const char* name) {
    ExperimentConfig c = config;
    c.cell_subset = name;
    return select_cells(c, data.test_responses);
  };
  const auto all = subset("all");

  SeedBenchmark r;
  r.seed = seed;
  const ModelRun base = fit_and_evaluate(config, data, all, false, fraction_full);
  const ModelRun ho = fit_and_evaluate(config, data, all, true, fraction_full);
  r.rho_baseline = base.test.mean;
  r.rho_hocnn = ho.test.mean;
  r.rho_hocnn_half = fit_and_evaluate(config, data, all, true, fraction_half).test.mean;
  r.w2_rank = first_layer_w2_rank(ho.train.best);

  const double lambda = config.readout.lambda;
  const auto db = decode_geometry(config, data, base.train.best, lambda);
  const auto dh = decode_geometry(config, data, ho.train.best, lambda);
  r.h11_baseline = db.rho[0];
  r.h22_baseline = db.rho[4];
  r.h11_hocnn = dh.rho[0];
  r.h22_hocnn = dh.rho[4];

  const auto expansion = subset("expansion");
  const auto control = subset("control");
  for (int higher = 0; higher < 2; ++higher) {
    auto& out = higher ? r.subset_h11_hocnn : r.subset_h11_baseline;
    out[0] = decode_geometry(config, data, fit_and_evaluate(config, data, expansion, higher, fraction_full).train.best,
                             lambda).rho[0];
    out[1] = (higher ? dh : db).rho[0];
    out[2] = decode_geometry(config, data, fit_and_evaluate(config, data, control, higher, fraction_full).train.best,
                             lambda).rho[0];
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

BenchmarkVerdict judge_benchmark(const std::vector<SeedBenchmark>& runs) {
  HOCONV_REQUIRE(!runs.empty(), ContractError, "judge_benchmark: no runs");
  BenchmarkVerdict v;
  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    v.gap += (r.rho_hocnn - r.rho_baseline) / n;
    v.half_margin += (r.rho_hocnn_half - r.rho_baseline) / n;
    v.h11_gap += (r.h11_hocnn - r.h11_baseline) / n;
    v.h22_gap += (r.h22_hocnn - r.h22_baseline) / n;
    for (std::size_t i = 0; i < 3; ++i) {
      v.subset_hocnn[i] += r.subset_h11_hocnn[i] / n;
      v.subset_baseline[i] += r.subset_h11_baseline[i] / n;
    }
    v.w2_rank += r.w2_rank / n;
  }
  const auto [lo, hi] = std::minmax_element(v.subset_baseline.begin(), v.subset_baseline.end());
  v.baseline_spread = *hi - *lo;
  v.gap_ok = v.gap >= 0.05;
  v.half_ok = v.half_margin >= 0.0;
  v.decode_ok = v.h11_gap >= 0.1 && v.h22_gap >= 0.1;
  v.subset_ok = v.subset_hocnn[0] > v.subset_hocnn[1] && v.subset_hocnn[1] > v.subset_hocnn[2] &&
                v.baseline_spread < 0.05;
  return v;
}

}  // namespace hoconv
