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
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

namespace hoconv {

// Shared layout of the HOCV / HORX / HOCK files: 4 magic bytes, u16 version,
// u32 metadata length, metadata text, then a format-specific payload.
struct ContainerHeader {
  std::string magic;
  std::uint16_t version = 0;
  nlohmann::json meta;

  /// Bytes taken by magic, version, length field and metadata text.
  std::size_t byte_size() const;
};

void write_container_header(std::ostream& os, const ContainerHeader& header);

/// Throws FormatError on a wrong magic or unparsable metadata, VersionError on
/// an unsupported version and TruncatedError on a short read.
ContainerHeader read_container_header(std::istream& is, const std::string& expected_magic,
                                      std::uint16_t expected_version);

}  // namespace hoconv
