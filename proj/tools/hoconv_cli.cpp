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

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>

#include "hoconv/hoconv.h"

namespace {

// Documented exit codes: 0 success, 2 config, 3 data, 4 numeric; 1 otherwise.
int exit_code(hoconv_status s) {
  switch (s) {
    case HOCONV_OK: return 0;
    case HOCONV_ERR_CONFIG: return 2;
    case HOCONV_ERR_DATA:
    case HOCONV_ERR_IO: return 3;
    case HOCONV_ERR_NUMERIC:
    case HOCONV_ERR_OVERFLOW: return 4;
    default: return 1;
  }
}

int fail(hoconv_status s) {
  std::fprintf(stderr, "hoconv: error: %s\n", hoconv_last_error());
  return exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Higher-order convolutional retina models: stimuli, responses, training, decoding, STA"};
  app.set_version_flag("--version", std::string(hoconv_version()));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out, dataset, responses, checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<double> fraction;
  bool force = false;
  app.add_option("--config", config_path, "JSON configuration file (defaults when omitted)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed, overrides the config");
  app.add_option("--out", out, "output directory, overrides paths.out");
  app.add_flag("--force", force, "overwrite existing outputs");

  app.add_subcommand("generate", "render train and test stimulus sequences");
  auto* simulate = app.add_subcommand("simulate", "simulate model-cell responses to a dataset");
  auto* train = app.add_subcommand("train", "train a baseline or higher-order network");
  auto* eval = app.add_subcommand("eval", "correlation to the trial mean on the test split");
  auto* decode = app.add_subcommand("decode", "linear readout of homography parameters from conv features");
  app.add_subcommand("sta", "spike-triggered averages of the cell bank under binary noise");

  for (auto* sub : {simulate, train, eval, decode})
    sub->add_option("--dataset", dataset, "directory with train.hocv and test.hocv")->required();
  for (auto* sub : {train, eval})
    sub->add_option("--responses", responses, "directory with train.horx and test.horx")->required();
  for (auto* sub : {eval, decode})
    sub->add_option("--checkpoint", checkpoint, "checkpoint file written by train")->required();
  train->add_option("--fraction", fraction, "training fraction in (0, 0.9], taken from the front");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  hoconv_config* config = nullptr;
  hoconv_status s = config_path.empty() ? hoconv_config_new(&config) : hoconv_config_load(config_path.c_str(), &config);
  if (s != HOCONV_OK) return fail(s);
  if (seed && (s = hoconv_config_set_seed(config, *seed)) != HOCONV_OK) {
    hoconv_config_free(config);
    return fail(s);
  }

  hoconv_command_options options{};
  options.out = out.empty() ? nullptr : out.c_str();
  options.force = force ? 1 : 0;
  options.dataset = dataset.empty() ? nullptr : dataset.c_str();
  options.responses = responses.empty() ? nullptr : responses.c_str();
  options.checkpoint = checkpoint.empty() ? nullptr : checkpoint.c_str();
  options.has_fraction = fraction.has_value() ? 1 : 0;
  options.fraction = fraction.value_or(0.0);

  const std::string command = app.get_subcommands().front()->get_name();
  char* summary = nullptr;
  s = hoconv_run_command(command.c_str(), config, &options, &summary);
  hoconv_config_free(config);
  if (s != HOCONV_OK) return fail(s);
  std::printf("%s: %s\n", command.c_str(), summary);
  hoconv_string_free(summary);
  return 0;
}
