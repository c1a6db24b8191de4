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

#ifndef SOFTVERBS_TRANSPORT_H_
#define SOFTVERBS_TRANSPORT_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"

namespace softverbs {

// Seeded fault injection applied to every frame the fabric emits.
struct FaultProfile {
  double drop_probability = 0.0;
  double duplicate_probability = 0.0;
  double reorder_probability = 0.0;
  uint64_t seed = 0;

  absl::Status Validate() const;
  friend bool operator==(const FaultProfile&, const FaultProfile&) = default;
};

// Parses "drop=<p> dup=<p> reorder=<p> seed=<u64>". Keys may appear in any
// order, separated by spaces or commas; omitted keys keep their defaults.
absl::StatusOr<FaultProfile> ParseFaultSpec(absl::string_view spec);

struct FabricEndpoint {
  uint16_t lid = 0;
  std::string host;
  uint16_t port = 0;

  friend bool operator==(const FabricEndpoint&,
                         const FabricEndpoint&) = default;
};

// Static fabric description for the socket transport:
//
//   lid <decimal> host <name> port <number>
//   faults drop=<p> dup=<p> reorder=<p> seed=<u64>
//
// Blank lines and lines starting with '#' are ignored.
struct FabricConfig {
  std::vector<FabricEndpoint> endpoints;
  std::optional<FaultProfile> faults;
};

absl::StatusOr<FabricConfig> ParseFabricConfig(absl::string_view text);
absl::StatusOr<FabricConfig> LoadFabricConfig(const std::string& path);

// Moves encoded frames between attached ports. Implementations hand
// received frames to the sink installed by Start().
class Transport {
 public:
  using Sink = std::function<void(uint16_t lid, std::vector<uint8_t> bytes)>;

  virtual ~Transport() = default;

  virtual void Start(Sink sink) = 0;
  virtual void Stop() = 0;

  // Activates one local port and returns the LID it answers to.
  virtual absl::StatusOr<uint16_t> AttachPort() = 0;
  virtual void DetachPort(uint16_t lid) = 0;

  // Best effort; undeliverable frames are dropped.
  virtual void Send(uint16_t dest_lid, std::vector<uint8_t> bytes) = 0;
};

// In-process transport: LIDs are assigned from a counter starting at 1 and
// frames are handed straight back to the sink.
std::unique_ptr<Transport> MakeLoopbackTransport();

// Stream-socket transport. AttachPort binds the first configured endpoint
// whose address is free locally; frames travel as self-delimiting records
// over TCP connections opened on demand.
std::unique_ptr<Transport> MakeSocketTransport(FabricConfig config);

}  // namespace softverbs

#endif  // SOFTVERBS_TRANSPORT_H_
