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

#ifndef SOFTVERBS_PINGPONG_H_
#define SOFTVERBS_PINGPONG_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/time/time.h"
#include "softverbs/destination.h"
#include "softverbs/fabric.h"
#include "softverbs/transport.h"
#include "softverbs/types.h"
#include "softverbs/verbs.h"

namespace softverbs {

inline constexpr uint64_t kRecvWrId = 1;
inline constexpr uint64_t kSendWrId = 2;

struct PingpongConfig {
  // Empty on the server side.
  std::string server_name;
  uint16_t port = kDefaultOobPort;
  uint8_t ib_port = 1;
  uint32_t size = 4096;
  int rx_depth = 500;
  int iters = 1000;
  uint8_t sl = 0;
  PathMtu mtu = PathMtu::k1024;
  bool use_events = false;
  // Negative leaves the GID zero and the path non-global.
  int gid_index = -1;
  // Fixes the initial PSN; otherwise it is drawn from a random device.
  std::optional<uint64_t> psn_seed;
};

struct PingpongStats {
  uint64_t bytes = 0;
  int iters = 0;
  absl::Duration elapsed;
};

// The verbs resources one side of the test uses: a page-aligned buffer
// registered for local write, a CQ (optionally with a completion channel)
// and an RC queue pair left in INIT with `rx_depth` receives posted.
class PingpongContext {
 public:
  static absl::StatusOr<std::unique_ptr<PingpongContext>> Create(
      std::shared_ptr<Context> context, const PingpongConfig& config,
      bool is_server);
  ~PingpongContext();

  const DestinationInfo& local() const { return local_; }
  bool is_server() const { return is_server_; }
  const PingpongConfig& config() const { return config_; }
  int initial_routs() const { return initial_routs_; }
  std::span<std::byte> buffer() { return {buffer_.get(), config_.size}; }

  QueuePair& qp() { return *qp_; }
  CompletionQueue& cq() { return *cq_; }
  CompletionChannel* channel() { return channel_.get(); }

  // INIT -> RTR -> RTS toward `remote`.
  absl::Status Connect(const DestinationInfo& remote);

  // Posts up to `n` receives covering the whole buffer; returns how many
  // were accepted.
  int PostRecv(int n);
  absl::Status PostSend();

  // Acknowledges outstanding CQ events, then releases every resource in
  // reverse order of creation.
  absl::Status Destroy();

 private:
  struct AlignedFree {
    void operator()(std::byte* p) const;
  };

  PingpongContext(const PingpongConfig& config, bool is_server)
      : config_(config), is_server_(is_server) {}

  const PingpongConfig config_;
  const bool is_server_;
  std::shared_ptr<Context> context_;
  std::unique_ptr<std::byte[], AlignedFree> buffer_;
  std::shared_ptr<ProtectionDomain> pd_;
  std::shared_ptr<MemoryRegion> mr_;
  std::shared_ptr<CompletionChannel> channel_;
  std::shared_ptr<CompletionQueue> cq_;
  std::shared_ptr<QueuePair> qp_;
  DestinationInfo local_;
  int initial_routs_ = 0;
  bool destroyed_ = false;
};

// Reported on every receive completion.
struct RecvObservation {
  int routs_after_decrement = 0;
  int reposted = 0;
  int routs_after = 0;

  friend bool operator==(const RecvObservation&,
                         const RecvObservation&) = default;
};

// The ping-pong state machine. Step() never blocks, so several loops can be
// interleaved on one thread; Run() blocks until the exchange finishes.
class PingpongLoop {
 public:
  using Observer = std::function<void(const RecvObservation&)>;

  PingpongLoop(PingpongContext& ctx, Observer observer = {});

  // Arms notification in event mode and, on the client, posts the first
  // send. Starts the clock.
  absl::Status Begin();

  // Handles whatever completions are ready. Returns true once `iters`
  // sends and receives have completed.
  absl::StatusOr<bool> Step();
  absl::Status Run();

  bool done() const;
  int rcnt() const { return rcnt_; }
  int scnt() const { return scnt_; }
  int routs() const { return routs_; }
  PingpongStats stats() const;

 private:
  absl::Status HandleCompletion(const WorkCompletion& wc);
  absl::Status Finish();

  PingpongContext& ctx_;
  Observer observer_;
  int routs_;
  int rcnt_ = 0;
  int scnt_ = 0;
  uint64_t pending_ = kRecvWrId;
  int events_since_ack_ = 0;
  absl::Time start_;
  absl::Time end_;
  bool finished_ = false;
};

// "  local address:  LID 0x0001, QPN 0x580048, PSN 0x2a166f, GID ::"
std::string FormatAddress(absl::string_view label, const DestinationInfo& d);
std::string FormatGid(const Gid& gid);
// The two summary lines; elapsed time is clamped to at least 1us.
std::string FormatStats(const PingpongStats& stats);

// Both sides in this process on a loopback fabric, driven on one thread.
// Prints the server's report, then the client's.
absl::Status RunLoopbackPingpong(const PingpongConfig& config,
                                 const FabricOptions& fabric_options,
                                 std::ostream& out);

// One side of a two-process run over the socket fabric.
absl::Status RunSocketPingpong(const PingpongConfig& config,
                               const FabricConfig& fabric_config,
                               std::ostream& out);

// Two endpoints on localhost at oob_port + 1 and oob_port + 2.
FabricConfig DefaultSocketConfig(uint16_t oob_port);

}  // namespace softverbs

#endif  // SOFTVERBS_PINGPONG_H_
