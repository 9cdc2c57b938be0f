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

#include <cmath>
#include <sstream>

#include "hoconv/hoconv.hpp"

namespace hoconv {

// Direct transcription of the defining sum: for every output sample, gather
// the window patch and walk all i <= j (<= k) products. No blocking, no
// reuse across positions, no linear algebra library.
VideoTensor hoconv_oracle(const VideoTensor& input, const HoKernelBank& kernels,
                          const WindowSpec& window) {
  kernels.check_against(window);
  const Shape& in = input.shape();
  HOCONV_REQUIRE(in.c == kernels.in_channels, ConfigError,
                 "hoconv_oracle: input channel count does not match kernel bank");
  const Shape out_shape = conv_output_shape(in, window, kernels.out_channels);
  const std::size_t m = kernels.taps();
  const std::size_t pairs = m * (m + 1) / 2;
  const std::size_t triples = m * (m + 1) * (m + 2) / 6;
  const double s2 = kernels.order >= 2 ? scale_factor(m, 2) : 0.0;
  const double s3 = kernels.order >= 3 ? scale_factor(m, 3) : 0.0;

  VideoTensor out(out_shape);
  std::vector<double> patch(m);
  for (std::size_t t = 0; t < out_shape.t; ++t) {
    for (std::size_t l = 0; l < out_shape.h; ++l) {
      for (std::size_t mm = 0; mm < out_shape.w; ++mm) {
        std::size_t p = 0;
        for (std::size_t r = 0; r < window.n_t; ++r)
          for (std::size_t i = 0; i < window.n_s; ++i)
            for (std::size_t j = 0; j < window.n_s; ++j)
              for (std::size_t ch = 0; ch < in.c; ++ch) patch[p++] = input.at(t + r, l + i, mm + j, ch);

        for (std::size_t c = 0; c < kernels.out_channels; ++c) {
          double y = kernels.b[c];
          for (std::size_t i = 0; i < m; ++i) y += kernels.w1[c * m + i] * patch[i];
          if (kernels.order >= 2) {
            double quad = 0.0;
            std::size_t idx = 0;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = i; j < m; ++j)
                quad += kernels.w2[c * pairs + idx++] * patch[i] * patch[j];
            y += s2 * quad;
          }
          if (kernels.order >= 3) {
            double cubic = 0.0;
            std::size_t idx = 0;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = i; j < m; ++j)
                for (std::size_t k = j; k < m; ++k)
                  cubic += kernels.w3[c * triples + idx++] * patch[i] * patch[j] * patch[k];
            y += s3 * cubic;
          }
          if (!std::isfinite(y)) {
            std::ostringstream msg;
            msg << "hoconv_oracle: non-finite output at (t=" << t << ", y=" << l << ", x=" << mm
                << ", c=" << c << ")";
            throw NumericError(msg.str());
          }
          out.at(t, l, mm, c) = y;
        }
      }
    }
  }
  return out;
}

}  // namespace hoconv
