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

#include "softverbs/destination.h"

#include "absl/strings/ascii.h"
#include "absl/strings/escaping.h"
#include "absl/strings/str_format.h"
#include "absl/strings/strip.h"

namespace softverbs {
namespace {

constexpr size_t kLineLength = 4 + 1 + 6 + 1 + 6 + 1 + 32;

int HexValue(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  c = absl::ascii_tolower(static_cast<unsigned char>(c));
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

bool ParseHexField(absl::string_view field, uint32_t* out) {
  uint32_t v = 0;
  for (char c : field) {
    const int d = HexValue(c);
    if (d < 0) return false;
    v = (v << 4) | static_cast<uint32_t>(d);
  }
  *out = v;
  return true;
}

}  // namespace

std::string EncodeDestination(const DestinationInfo& info) {
  std::string gid;
  gid.reserve(32);
  for (uint8_t b : info.gid.raw) absl::StrAppendFormat(&gid, "%02x", b);
  return absl::StrFormat("%04x:%06x:%06x:%s\n", info.lid,
                         info.qpn & kQpnMask, info.psn & Psn::kMask, gid);
}

absl::StatusOr<DestinationInfo> DecodeDestination(absl::string_view line) {
  absl::ConsumeSuffix(&line, "\n");
  if (line.size() != kLineLength || line[4] != ':' || line[11] != ':' ||
      line[18] != ':') {
    return absl::InvalidArgumentError(
        absl::StrFormat("malformed destination line '%s'",
                        absl::CHexEscape(line)));
  }
  DestinationInfo info;
  uint32_t lid = 0;
  if (!ParseHexField(line.substr(0, 4), &lid) ||
      !ParseHexField(line.substr(5, 6), &info.qpn) ||
      !ParseHexField(line.substr(12, 6), &info.psn)) {
    return absl::InvalidArgumentError("non-hex digit in destination line");
  }
  info.lid = static_cast<uint16_t>(lid);
  const absl::string_view gid = line.substr(19);
  for (size_t i = 0; i < info.gid.raw.size(); ++i) {
    const int hi = HexValue(gid[2 * i]);
    const int lo = HexValue(gid[2 * i + 1]);
    if (hi < 0 || lo < 0) {
      return absl::InvalidArgumentError("non-hex digit in gid");
    }
    info.gid.raw[i] = static_cast<uint8_t>(hi << 4 | lo);
  }
  return info;
}

}  // namespace softverbs
