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

#ifndef SOFTVERBS_DESTINATION_H_
#define SOFTVERBS_DESTINATION_H_

#include <cstdint>
#include <functional>
#include <string>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"
#include "absl/time/time.h"
#include "softverbs/types.h"

namespace softverbs {

// What one side of a connection must learn about the other before its
// queue pair can leave INIT.
struct DestinationInfo {
  uint16_t lid = 0;
  uint32_t qpn = 0;
  uint32_t psn = 0;
  Gid gid;

  friend bool operator==(const DestinationInfo&,
                         const DestinationInfo&) = default;
};

inline constexpr uint16_t kDefaultOobPort = 18515;

// Fixed-width line "llll:qqqqqq:pppppp:<32 hex gid>\n", lowercase. The GID
// is written in network byte order.
std::string EncodeDestination(const DestinationInfo& info);

// Accepts the line with or without its trailing newline; hex digits are
// case-insensitive. InvalidArgument on any other deviation.
absl::StatusOr<DestinationInfo> DecodeDestination(absl::string_view line);

// Server half of the exchange. The client writes its line first; the server
// reads it, runs `on_peer` (typically to bring its queue pair up), then
// replies with its own line.
class OobListener {
 public:
  using PeerCallback = std::function<absl::Status(const DestinationInfo&)>;

  // Port 0 picks an ephemeral port.
  static absl::StatusOr<OobListener> Bind(uint16_t port);

  OobListener(OobListener&&) noexcept;
  OobListener& operator=(OobListener&&) noexcept;
  ~OobListener();

  uint16_t port() const { return port_; }

  // Serves exactly one client.
  absl::StatusOr<DestinationInfo> Exchange(const DestinationInfo& local,
                                           const PeerCallback& on_peer = {});

 private:
  OobListener(int fd, uint16_t port) : fd_(fd), port_(port) {}

  int fd_ = -1;
  uint16_t port_ = 0;
};

// Client half. Connection attempts repeat until `connect_window` elapses;
// the default makes a single attempt.
absl::StatusOr<DestinationInfo> ExchangeAsClient(
    const std::string& host, uint16_t port, const DestinationInfo& local,
    absl::Duration connect_window = absl::ZeroDuration());

}  // namespace softverbs

#endif  // SOFTVERBS_DESTINATION_H_
