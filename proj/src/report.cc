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

#include <arpa/inet.h>
#include <netinet/in.h>

#include <algorithm>
#include <string>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "softverbs/pingpong.h"

namespace softverbs {

std::string FormatGid(const Gid& gid) {
  char text[INET6_ADDRSTRLEN] = {};
  if (inet_ntop(AF_INET6, gid.raw.data(), text, sizeof(text)) == nullptr) {
    return "?";
  }
  return text;
}

std::string FormatAddress(absl::string_view label, const DestinationInfo& d) {
  return absl::StrFormat("  %-16sLID 0x%04x, QPN 0x%06x, PSN 0x%06x, GID %s\n",
                         absl::StrCat(label, " address:"), d.lid, d.qpn,
                         d.psn, FormatGid(d.gid));
}

std::string FormatStats(const PingpongStats& stats) {
  const double usec =
      std::max(absl::ToDoubleMicroseconds(stats.elapsed), 1.0);
  const double seconds = usec / 1e6;
  return absl::StrFormat(
      "%d bytes in %.2f seconds = %.2f Mbit/sec\n"
      "%d iters in %.2f seconds = %.2f usec/iter\n",
      stats.bytes, seconds, static_cast<double>(stats.bytes) * 8.0 / usec,
      stats.iters, seconds, usec / std::max(stats.iters, 1));
}

}  // namespace softverbs
