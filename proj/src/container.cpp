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

#include "hoconv/container.hpp"

#include "hoconv/binary_io.hpp"

namespace hoconv {

std::size_t ContainerHeader::byte_size() const { return 4 + 2 + 4 + meta.dump().size(); }

void write_container_header(std::ostream& os, const ContainerHeader& header) {
  if (header.magic.size() != 4) throw ContractError("container magic must be 4 bytes");
  const std::string text = header.meta.dump();
  bin::put_bytes(os, header.magic);
  bin::put<std::uint16_t>(os, header.version);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  bin::put_bytes(os, text);
}

ContainerHeader read_container_header(std::istream& is, const std::string& expected_magic,
                                      std::uint16_t expected_version) {
  ContainerHeader h;
  h.magic = bin::get_bytes(is, 4, "magic");
  if (h.magic != expected_magic)
    throw FormatError("not a " + expected_magic + " file (bad magic bytes)");
  h.version = bin::get<std::uint16_t>(is, "version");
  if (h.version != expected_version)
    throw VersionError(expected_magic + ": unsupported format version " +
                       std::to_string(h.version) + " (expected " +
                       std::to_string(expected_version) + ")");
  const auto len = bin::get<std::uint32_t>(is, "metadata length");
  if (len > (64u << 20)) throw FormatError(expected_magic + ": implausible metadata length");
  const std::string text = bin::get_bytes(is, len, "metadata");
  h.meta = nlohmann::json::parse(text, nullptr, false);
  if (h.meta.is_discarded() || !h.meta.is_object())
    throw FormatError(expected_magic + ": metadata block is not a JSON object");
  return h;
}

}  // namespace hoconv
