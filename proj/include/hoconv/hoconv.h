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

#ifndef HOCONV_H
#define HOCONV_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define HOCONV_API __declspec(dllexport)
#else
#define HOCONV_API __attribute__((visibility("default")))
#endif

/* Status codes double as CLI exit codes. */
typedef enum hoconv_status {
  HOCONV_OK = 0,
  HOCONV_ERR_INTERNAL = 1,
  HOCONV_ERR_CONFIG = 2,
  HOCONV_ERR_DATA = 3,
  HOCONV_ERR_NUMERIC = 4,
  HOCONV_ERR_IO = 5,
  HOCONV_ERR_CONTRACT = 6,
  HOCONV_ERR_OVERFLOW = 7
} hoconv_status;

typedef struct hoconv_config hoconv_config;
typedef struct hoconv_network hoconv_network;

HOCONV_API const char* hoconv_version(void);

/* Message of the last failed call on this thread; empty after a success. */
HOCONV_API const char* hoconv_last_error(void);

/* Strings returned through char** are owned by the caller. */
HOCONV_API void hoconv_string_free(char* s);

HOCONV_API hoconv_status hoconv_config_new(hoconv_config** out);
HOCONV_API hoconv_status hoconv_config_load(const char* path, hoconv_config** out);
HOCONV_API hoconv_status hoconv_config_parse(const char* json_text, hoconv_config** out);
/* Re-derives every component seed from the master seed. */
HOCONV_API hoconv_status hoconv_config_set_seed(hoconv_config* config, uint64_t seed);
HOCONV_API hoconv_status hoconv_config_get_seed(const hoconv_config* config, uint64_t* seed);
HOCONV_API hoconv_status hoconv_config_to_json(const hoconv_config* config, char** json_text);
HOCONV_API void hoconv_config_free(hoconv_config* config);

typedef struct hoconv_command_options {
  const char* out;        /* NULL: the config's paths.out */
  int force;              /* overwrite existing outputs */
  const char* dataset;    /* directory with train.hocv and test.hocv */
  const char* responses;  /* directory with train.horx and test.horx */
  const char* checkpoint; /* checkpoint file */
  int has_fraction;
  double fraction;
} hoconv_command_options;

/* command: generate, simulate, train, eval, decode or sta. On success
 * *summary (if non-NULL) receives a one-line description. */
HOCONV_API hoconv_status hoconv_run_command(const char* command, const hoconv_config* config,
                                            const hoconv_command_options* options, char** summary);

HOCONV_API hoconv_status hoconv_network_load(const char* path, hoconv_network** out);
/* (frames, height, width, channels) of one input clip. */
HOCONV_API hoconv_status hoconv_network_input_shape(const hoconv_network* net, size_t shape[4]);
HOCONV_API hoconv_status hoconv_network_output_units(const hoconv_network* net, size_t* units);
/* clip is row-major (frames, height, width, channels). */
HOCONV_API hoconv_status hoconv_network_predict(const hoconv_network* net, const double* clip, size_t clip_len,
                                                double* rates, size_t n_rates);
HOCONV_API void hoconv_network_free(hoconv_network* net);

HOCONV_API hoconv_status hoconv_count_monomials(uint64_t n, uint32_t p, uint64_t* count);
HOCONV_API hoconv_status hoconv_scale_factor(uint64_t n, uint32_t p, double* factor);

#ifdef __cplusplus
}
#endif

#endif
