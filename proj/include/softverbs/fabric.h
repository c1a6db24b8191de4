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

#ifndef SOFTVERBS_FABRIC_H_
#define SOFTVERBS_FABRIC_H_

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <thread>
#include <utility>
#include <vector>

#include "absl/status/statusor.h"
#include "absl/synchronization/mutex.h"
#include "absl/time/time.h"
#include "softverbs/frame.h"
#include "softverbs/transport.h"

namespace softverbs {

class Context;
class QueuePair;

// Maps the encoded 5-bit `timeout` and `min_rnr_timer` attributes to
// emulator durations.
struct TimingTables {
  std::array<absl::Duration, 32> timeout;
  std::array<absl::Duration, 32> rnr_delay;

  // timeout(14) = 500ms, doubling per step, 0 = never; rnr_delay(12) = 10ms,
  // doubling every two steps.
  static TimingTables Default();
};

struct FabricOptions {
  FaultProfile faults;
  TimingTables timing = TimingTables::Default();
  // Extra latency for frames selected for reordering.
  absl::Duration reorder_delay = absl::Milliseconds(1);
};

enum class FrameFate : uint8_t { kSent, kDropped, kDuplicated, kDelayed };

struct TraceRecord {
  absl::Duration time;
  uint16_t dest_lid = 0;
  Frame frame;
  FrameFate fate = FrameFate::kSent;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct FabricStats {
  uint64_t frames_emitted = 0;
  uint64_t frames_dropped = 0;
  uint64_t frames_duplicated = 0;
  uint64_t frames_delayed = 0;
  uint64_t frames_delivered = 0;
  uint64_t frames_unroutable = 0;
  uint64_t decode_errors = 0;
};

// The emulated subnet: assigns LIDs, routes frames to bound queue pairs,
// injects faults and runs the single event loop that drives every
// reliable-connection engine attached to it.
//
// The loop is driven either manually on a virtual clock (RunOnce, RunFor,
// RunUntilIdle), which is fully deterministic, or by a background thread
// pacing the clock with wall time (Start/Stop).
class Fabric : public std::enable_shared_from_this<Fabric> {
 public:
  static std::shared_ptr<Fabric> Create(std::unique_ptr<Transport> transport,
                                        FabricOptions options = {});
  static std::shared_ptr<Fabric> CreateLoopback(FabricOptions options = {});

  ~Fabric();
  Fabric(const Fabric&) = delete;
  Fabric& operator=(const Fabric&) = delete;

  // Brings `port` of `context` up and returns its LID.
  absl::StatusOr<uint16_t> Attach(Context& context, uint8_t port);

  absl::Duration Now() const;
  const FabricOptions& options() const { return options_; }

  // Processes the earliest event, advancing the virtual clock to it.
  // Returns false if nothing is queued.
  bool RunOnce();
  // Runs until no events remain or `max_events` were processed. Returns the
  // number processed.
  size_t RunUntilIdle(size_t max_events = 50'000'000);
  // Processes events due within `d` and leaves the clock at now + d.
  void RunFor(absl::Duration d);
  // Runs until `done()` holds. Returns false if the queue drained first.
  bool RunUntil(const std::function<bool()>& done,
                size_t max_events = 50'000'000);
  bool idle() const;

  void Start();
  // Flushes queued transmissions, then stops the loop thread and the
  // transport.
  void Stop();

  // Frames for which the filter returns true are dropped.
  void SetDropFilter(std::function<bool(uint16_t, const Frame&)> filter);
  void EnableTrace(bool enabled);
  std::vector<TraceRecord> Trace() const;
  void ClearTrace();

  // Delivers a frame to `dest_lid` at the current time, bypassing faults.
  void Inject(uint16_t dest_lid, const Frame& frame);

  FabricStats stats() const;

 private:
  friend class Context;
  friend class QueuePair;

  enum class EventType : uint8_t { kTransmit, kDeliver, kTimer };
  struct Event {
    EventType type;
    uint16_t lid = 0;
    std::vector<uint8_t> bytes;
    std::weak_ptr<QueuePair> qp;
    absl::Duration deadline;
  };
  using EventKey = std::pair<absl::Duration, uint64_t>;

  Fabric(std::unique_ptr<Transport> transport, FabricOptions options);

  // Called by queue pairs while their context lock is held.
  void Emit(uint16_t dest_lid, const Frame& frame);
  void ScheduleTimer(std::weak_ptr<QueuePair> qp, absl::Duration deadline);
  void Bind(uint16_t lid, uint32_t qpn, std::weak_ptr<QueuePair> qp);
  void Unbind(uint16_t lid, uint32_t qpn);
  void Detach(uint16_t lid);

  void EnqueueLocked(absl::Duration at, Event event)
      ABSL_EXCLUSIVE_LOCKS_REQUIRED(mu_);
  absl::Duration NowLocked() const ABSL_EXCLUSIVE_LOCKS_REQUIRED(mu_);
  void Dispatch(Event event);
  void Loop();

  const FabricOptions options_;
  const std::unique_ptr<Transport> transport_;

  mutable absl::Mutex mu_;
  absl::CondVar wake_;
  std::map<EventKey, Event> events_ ABSL_GUARDED_BY(mu_);
  uint64_t next_seq_ ABSL_GUARDED_BY(mu_) = 0;
  absl::Duration virtual_now_ ABSL_GUARDED_BY(mu_) = absl::ZeroDuration();
  bool running_ ABSL_GUARDED_BY(mu_) = false;
  bool stopping_ ABSL_GUARDED_BY(mu_) = false;
  std::chrono::steady_clock::time_point wall_epoch_ ABSL_GUARDED_BY(mu_);
  std::map<std::pair<uint16_t, uint32_t>, std::weak_ptr<QueuePair>> routes_
      ABSL_GUARDED_BY(mu_);
  std::map<uint16_t, bool> attached_ ABSL_GUARDED_BY(mu_);
  std::mt19937_64 rng_ ABSL_GUARDED_BY(mu_);
  std::function<bool(uint16_t, const Frame&)> drop_filter_
      ABSL_GUARDED_BY(mu_);
  bool trace_enabled_ ABSL_GUARDED_BY(mu_) = false;
  std::vector<TraceRecord> trace_ ABSL_GUARDED_BY(mu_);
  FabricStats stats_ ABSL_GUARDED_BY(mu_);
  std::thread loop_thread_;
};

}  // namespace softverbs

#endif  // SOFTVERBS_FABRIC_H_
