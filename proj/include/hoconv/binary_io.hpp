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
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hoconv/error.hpp"

// Little-endian primitives shared by every on-disk format.
namespace hoconv::bin {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::array<unsigned char, sizeof(T)> out{};
    for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = bytes[sizeof(T) - 1 - i];
    return std::bit_cast<T>(out);
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw TruncatedError(std::string("truncated payload while reading ") + what);
  return to_little(v);
}

inline void put_f64_array(std::ostream& os, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) put(os, v);
  }
}

inline std::vector<double> get_f64_array(std::istream& is, std::size_t n, const char* what) {
  std::vector<double> out(n);
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw TruncatedError(std::string("truncated payload while reading ") + what);
  if constexpr (std::endian::native != std::endian::little) {
    for (double& v : out) v = to_little(v);
  }
  return out;
}

// Values must already be float-representable for a lossless round trip.
inline void put_f32_array(std::ostream& os, std::span<const double> values) {
  std::vector<float> buf(values.begin(), values.end());
  for (float& v : buf) v = to_little(v);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline std::vector<double> get_f32_array(std::istream& is, std::size_t n, const char* what) {
  std::vector<float> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw TruncatedError(std::string("truncated payload while reading ") + what);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = to_little(buf[i]);
  return out;
}

inline void put_bytes(std::ostream& os, const std::string& s) {
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw TruncatedError(std::string("truncated payload while reading ") + what);
  return s;
}

}  // namespace hoconv::bin
