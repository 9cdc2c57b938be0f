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

#include "hoconv/hoconv.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "hoconv/commands.hpp"

struct hoconv_config {
  hoconv::ExperimentConfig value;
};

struct hoconv_network {
  hoconv::NetworkState state;
};

namespace {

thread_local std::string g_last_error;

template <class F>
hoconv_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return HOCONV_OK;
  } catch (const hoconv::Error& e) {
    g_last_error = e.what();
    return static_cast<hoconv_status>(static_cast<int>(e.code()));
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return HOCONV_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return HOCONV_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw hoconv::ContractError(std::string(what) + " must not be NULL");
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* hoconv_version(void) { return hoconv::kToolVersion; }

const char* hoconv_last_error(void) { return g_last_error.c_str(); }

void hoconv_string_free(char* s) { std::free(s); }

hoconv_status hoconv_config_new(hoconv_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new hoconv_config{hoconv::config_from_json(nlohmann::json::object())};
  });
}

hoconv_status hoconv_config_load(const char* path, hoconv_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new hoconv_config{hoconv::load_config(path)};
  });
}

hoconv_status hoconv_config_parse(const char* json_text, hoconv_config** out) {
  return guarded([&] {
    require(json_text, "json_text");
    require(out, "out");
    nlohmann::json tree;
    try {
      tree = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
      throw hoconv::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    *out = new hoconv_config{hoconv::config_from_json(tree)};
  });
}

hoconv_status hoconv_config_set_seed(hoconv_config* config, uint64_t seed) {
  return guarded([&] {
    require(config, "config");
    hoconv::apply_master_seed(config->value, seed);
  });
}

hoconv_status hoconv_config_get_seed(const hoconv_config* config, uint64_t* seed) {
  return guarded([&] {
    require(config, "config");
    require(seed, "seed");
    *seed = config->value.seed;
  });
}

hoconv_status hoconv_config_to_json(const hoconv_config* config, char** json_text) {
  return guarded([&] {
    require(config, "config");
    require(json_text, "json_text");
    *json_text = copy_string(hoconv::config_to_json(config->value).dump(2));
  });
}

void hoconv_config_free(hoconv_config* config) { delete config; }

hoconv_status hoconv_run_command(const char* command, const hoconv_config* config,
                                 const hoconv_command_options* options, char** summary) {
  return guarded([&] {
    require(command, "command");
    require(config, "config");
    hoconv::CommandOptions o;
    if (options != nullptr) {
      if (options->out != nullptr) o.out = options->out;
      o.force = options->force != 0;
      if (options->dataset != nullptr) o.dataset = options->dataset;
      if (options->responses != nullptr) o.responses = options->responses;
      if (options->checkpoint != nullptr) o.checkpoint = options->checkpoint;
      if (options->has_fraction) o.fraction = options->fraction;
    }
    const std::string cmd = command;
    hoconv::CommandResult r;
    if (cmd == "generate")
      r = hoconv::cmd_generate(config->value, o);
    else if (cmd == "simulate")
      r = hoconv::cmd_simulate(config->value, o);
    else if (cmd == "train")
      r = hoconv::cmd_train(config->value, o);
    else if (cmd == "eval")
      r = hoconv::cmd_eval(config->value, o);
    else if (cmd == "decode")
      r = hoconv::cmd_decode(config->value, o);
    else if (cmd == "sta")
      r = hoconv::cmd_sta(config->value, o);
    else
      throw hoconv::ConfigError("unknown command '" + cmd + "'");
    if (summary != nullptr) *summary = copy_string(r.summary);
  });
}

hoconv_status hoconv_network_load(const char* path, hoconv_network** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new hoconv_network{hoconv::read_checkpoint(path)};
  });
}

hoconv_status hoconv_network_input_shape(const hoconv_network* net, size_t shape[4]) {
  return guarded([&] {
    require(net, "net");
    require(shape, "shape");
    const hoconv::Shape s = net->state.spec.input;
    shape[0] = s.t;
    shape[1] = s.h;
    shape[2] = s.w;
    shape[3] = s.c;
  });
}

hoconv_status hoconv_network_output_units(const hoconv_network* net, size_t* units) {
  return guarded([&] {
    require(net, "net");
    require(units, "units");
    *units = net->state.spec.output_units();
  });
}

hoconv_status hoconv_network_predict(const hoconv_network* net, const double* clip, size_t clip_len, double* rates,
                                     size_t n_rates) {
  return guarded([&] {
    require(net, "net");
    require(clip, "clip");
    require(rates, "rates");
    const hoconv::Shape s = net->state.spec.input;
    if (clip_len != s.volume())
      throw hoconv::ConfigError("clip has " + std::to_string(clip_len) + " samples, the network expects " +
                                std::to_string(s.volume()) + " (" + s.str() + ")");
    if (n_rates != net->state.spec.output_units())
      throw hoconv::ConfigError("rates buffer holds " + std::to_string(n_rates) + " values, the network has " +
                                std::to_string(net->state.spec.output_units()) + " outputs");
    hoconv::VideoTensor input(s, 0.0);
    std::memcpy(input.values().data(), clip, clip_len * sizeof(double));
    const auto out = hoconv::forward_network(net->state, input);
    std::memcpy(rates, out.data(), n_rates * sizeof(double));
  });
}

void hoconv_network_free(hoconv_network* net) { delete net; }

hoconv_status hoconv_count_monomials(uint64_t n, uint32_t p, uint64_t* count) {
  return guarded([&] {
    require(count, "count");
    *count = hoconv::count_monomials(n, p);
  });
}

hoconv_status hoconv_scale_factor(uint64_t n, uint32_t p, double* factor) {
  return guarded([&] {
    require(factor, "factor");
    *factor = hoconv::scale_factor(n, p);
  });
}

}  // extern "C"
