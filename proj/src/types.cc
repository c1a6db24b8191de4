// Copyright 2026 The Softverbs Authors
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

#include "softverbs/types.h"

#include <algorithm>

namespace softverbs {

absl::string_view QpStateName(QpState state) {
  switch (state) {
    case QpState::kReset:
      return "RESET";
    case QpState::kInit:
      return "INIT";
    case QpState::kRtr:
      return "RTR";
    case QpState::kRts:
      return "RTS";
    case QpState::kError:
      return "ERR";
  }
  return "UNKNOWN";
}

std::optional<PathMtu> PathMtuFromBytes(uint32_t bytes) {
  switch (bytes) {
    case 256:
    case 512:
    case 1024:
    case 2048:
    case 4096:
      return static_cast<PathMtu>(bytes);
    default:
      return std::nullopt;
  }
}

bool Gid::IsZero() const {
  return std::all_of(raw.begin(), raw.end(), [](uint8_t b) { return b == 0; });
}

// Link-local prefix fe80::/64 followed by the port GUID.
Gid Gid::FromGuid(uint64_t guid) {
  Gid gid;
  gid.raw[0] = 0xfe;
  gid.raw[1] = 0x80;
  for (int i = 0; i < 8; ++i) {
    gid.raw[15 - i] = static_cast<uint8_t>(guid >> (8 * i));
  }
  return gid;
}

}  // namespace softverbs
