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

#include "softverbs/fabric.h"

#include <cmath>
#include <utility>

#include "absl/strings/str_format.h"
#include "softverbs/verbs.h"

namespace softverbs {

TimingTables TimingTables::Default() {
  TimingTables t;
  for (int k = 0; k < 32; ++k) {
    // Integer scaling keeps the values on the 14 and 12 anchors exact.
    if (k == 0) {
      t.timeout[k] = absl::ZeroDuration();
    } else if (k >= 14) {
      t.timeout[k] = absl::Milliseconds(500) * (int64_t{1} << (k - 14));
    } else {
      t.timeout[k] = absl::Milliseconds(500) / (int64_t{1} << (14 - k));
    }
    const int steps = static_cast<int>(std::floor((k - 12) / 2.0));
    t.rnr_delay[k] = std::max(
        steps >= 0 ? absl::Milliseconds(10) * (int64_t{1} << steps)
                   : absl::Milliseconds(10) / (int64_t{1} << -steps),
        absl::Milliseconds(1));
  }
  return t;
}

std::shared_ptr<Fabric> Fabric::Create(std::unique_ptr<Transport> transport,
                                       FabricOptions options) {
  std::shared_ptr<Fabric> fabric(
      new Fabric(std::move(transport), std::move(options)));
  std::weak_ptr<Fabric> weak = fabric;
  fabric->transport_->Start([weak](uint16_t lid, std::vector<uint8_t> bytes) {
    std::shared_ptr<Fabric> self = weak.lock();
    if (self == nullptr) return;
    absl::MutexLock lock(&self->mu_);
    Event event{EventType::kDeliver, lid, std::move(bytes), {}, {}};
    self->EnqueueLocked(self->NowLocked(), std::move(event));
  });
  return fabric;
}

std::shared_ptr<Fabric> Fabric::CreateLoopback(FabricOptions options) {
  return Create(MakeLoopbackTransport(), std::move(options));
}

Fabric::Fabric(std::unique_ptr<Transport> transport, FabricOptions options)
    : options_(std::move(options)),
      transport_(std::move(transport)),
      rng_(options_.faults.seed) {}

Fabric::~Fabric() {
  Stop();
  transport_->Stop();
}

absl::StatusOr<uint16_t> Fabric::Attach(Context& context, uint8_t port) {
  absl::MutexLock ctx_lock(&context.mu_);
  if (absl::Status s = context.CheckOpenLocked(); !s.ok()) return s;
  auto it = context.ports_.find(port);
  if (it == context.ports_.end()) {
    return absl::InvalidArgumentError(absl::StrFormat("no port %d", port));
  }
  if (it->second.fabric != nullptr) {
    return absl::FailedPreconditionError(
        absl::StrFormat("port %d already attached", port));
  }
  absl::StatusOr<uint16_t> lid = transport_->AttachPort();
  if (!lid.ok()) return lid.status();
  it->second.attr =
      PortAttributes{*lid, LinkLayer::kInfiniBand, PortState::kActive};
  it->second.fabric = shared_from_this();
  absl::MutexLock lock(&mu_);
  attached_[*lid] = true;
  return *lid;
}

void Fabric::Detach(uint16_t lid) {
  {
    absl::MutexLock lock(&mu_);
    attached_.erase(lid);
    for (auto it = routes_.begin(); it != routes_.end();) {
      it = it->first.first == lid ? routes_.erase(it) : std::next(it);
    }
  }
  transport_->DetachPort(lid);
}

void Fabric::Bind(uint16_t lid, uint32_t qpn, std::weak_ptr<QueuePair> qp) {
  absl::MutexLock lock(&mu_);
  routes_[{lid, qpn}] = std::move(qp);
}

void Fabric::Unbind(uint16_t lid, uint32_t qpn) {
  absl::MutexLock lock(&mu_);
  routes_.erase({lid, qpn});
}

absl::Duration Fabric::Now() const {
  absl::MutexLock lock(&mu_);
  return NowLocked();
}

absl::Duration Fabric::NowLocked() const {
  if (!running_) return virtual_now_;
  return absl::FromChrono(std::chrono::steady_clock::now() - wall_epoch_);
}

void Fabric::EnqueueLocked(absl::Duration at, Event event) {
  events_.emplace(EventKey{at, next_seq_++}, std::move(event));
  if (running_) wake_.Signal();
}

void Fabric::Emit(uint16_t dest_lid, const Frame& frame) {
  absl::StatusOr<std::vector<uint8_t>> bytes = EncodeFrame(frame);
  absl::MutexLock lock(&mu_);
  ++stats_.frames_emitted;
  if (!bytes.ok()) {
    ++stats_.decode_errors;
    return;
  }
  // Three draws per frame regardless of outcome keep the random stream
  // aligned with the emission sequence.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double drop_draw = unit(rng_);
  const double dup_draw = unit(rng_);
  const double reorder_draw = unit(rng_);
  const FaultProfile& faults = options_.faults;
  const absl::Duration now = NowLocked();

  FrameFate fate = FrameFate::kSent;
  if (drop_draw < faults.drop_probability ||
      (drop_filter_ && drop_filter_(dest_lid, frame))) {
    fate = FrameFate::kDropped;
    ++stats_.frames_dropped;
  } else {
    const bool duplicate = dup_draw < faults.duplicate_probability;
    const bool reorder = reorder_draw < faults.reorder_probability;
    const absl::Duration at = reorder ? now + options_.reorder_delay : now;
    EnqueueLocked(at, Event{EventType::kTransmit, dest_lid, *bytes, {}, {}});
    if (duplicate) {
      EnqueueLocked(at, Event{EventType::kTransmit, dest_lid,
                              std::move(*bytes), {}, {}});
      fate = FrameFate::kDuplicated;
      ++stats_.frames_duplicated;
    } else if (reorder) {
      fate = FrameFate::kDelayed;
    }
    if (reorder) ++stats_.frames_delayed;
  }
  if (trace_enabled_) trace_.push_back(TraceRecord{now, dest_lid, frame, fate});
}

void Fabric::ScheduleTimer(std::weak_ptr<QueuePair> qp,
                           absl::Duration deadline) {
  absl::MutexLock lock(&mu_);
  EnqueueLocked(deadline,
                Event{EventType::kTimer, 0, {}, std::move(qp), deadline});
}

void Fabric::Inject(uint16_t dest_lid, const Frame& frame) {
  absl::StatusOr<std::vector<uint8_t>> bytes = EncodeFrame(frame);
  if (!bytes.ok()) return;
  absl::MutexLock lock(&mu_);
  EnqueueLocked(NowLocked(), Event{EventType::kDeliver, dest_lid,
                                   std::move(*bytes), {}, {}});
}

void Fabric::Dispatch(Event event) {
  switch (event.type) {
    case EventType::kTransmit:
      transport_->Send(event.lid, std::move(event.bytes));
      return;
    case EventType::kTimer:
      if (std::shared_ptr<QueuePair> qp = event.qp.lock()) {
        qp->OnTimer(event.deadline);
      }
      return;
    case EventType::kDeliver:
      break;
  }
  absl::StatusOr<Frame> frame = DecodeFrame(event.bytes);
  std::shared_ptr<QueuePair> qp;
  {
    absl::MutexLock lock(&mu_);
    if (!frame.ok()) {
      ++stats_.decode_errors;
      return;
    }
    auto it = routes_.find({event.lid, frame->dest_qpn});
    if (it != routes_.end()) qp = it->second.lock();
    if (qp == nullptr) {
      ++stats_.frames_unroutable;
      return;
    }
    ++stats_.frames_delivered;
  }
  qp->OnFrame(*frame);
}

bool Fabric::RunOnce() {
  Event event;
  {
    absl::MutexLock lock(&mu_);
    if (running_ || events_.empty()) return false;
    auto it = events_.begin();
    virtual_now_ = std::max(virtual_now_, it->first.first);
    event = std::move(it->second);
    events_.erase(it);
  }
  Dispatch(std::move(event));
  return true;
}

size_t Fabric::RunUntilIdle(size_t max_events) {
  size_t n = 0;
  while (n < max_events && RunOnce()) ++n;
  return n;
}

void Fabric::RunFor(absl::Duration d) {
  absl::Duration target;
  {
    absl::MutexLock lock(&mu_);
    target = virtual_now_ + d;
  }
  for (;;) {
    {
      absl::MutexLock lock(&mu_);
      if (running_ || events_.empty() ||
          events_.begin()->first.first > target) {
        break;
      }
    }
    RunOnce();
  }
  absl::MutexLock lock(&mu_);
  if (!running_) virtual_now_ = std::max(virtual_now_, target);
}

bool Fabric::RunUntil(const std::function<bool()>& done, size_t max_events) {
  for (size_t n = 0; !done(); ++n) {
    if (n >= max_events || !RunOnce()) return done();
  }
  return true;
}

bool Fabric::idle() const {
  absl::MutexLock lock(&mu_);
  return events_.empty();
}

void Fabric::Start() {
  absl::MutexLock lock(&mu_);
  if (running_) return;
  running_ = true;
  stopping_ = false;
  wall_epoch_ = std::chrono::steady_clock::now() -
                absl::ToChronoNanoseconds(virtual_now_);
  loop_thread_ = std::thread([this] { Loop(); });
}

void Fabric::Stop() {
  {
    absl::MutexLock lock(&mu_);
    if (!running_) return;
    stopping_ = true;
    wake_.Signal();
  }
  if (loop_thread_.get_id() == std::this_thread::get_id()) {
    loop_thread_.detach();
  } else if (loop_thread_.joinable()) {
    loop_thread_.join();
  }
  absl::MutexLock lock(&mu_);
  virtual_now_ = NowLocked();
  running_ = false;
  stopping_ = false;
}

void Fabric::Loop() {
  absl::MutexLock lock(&mu_);
  while (!stopping_) {
    if (events_.empty()) {
      wake_.Wait(&mu_);
      continue;
    }
    auto it = events_.begin();
    const absl::Duration now = NowLocked();
    if (it->first.first > now) {
      wake_.WaitWithTimeout(&mu_, it->first.first - now);
      continue;
    }
    Event event = std::move(it->second);
    events_.erase(it);
    mu_.Unlock();
    Dispatch(std::move(event));
    mu_.Lock();
  }
  // Push out frames already queued (a final ACK, typically) before the
  // transport goes away.
  std::vector<Event> pending;
  for (auto it = events_.begin(); it != events_.end();) {
    if (it->second.type == EventType::kTransmit) {
      pending.push_back(std::move(it->second));
      it = events_.erase(it);
    } else {
      ++it;
    }
  }
  mu_.Unlock();
  for (Event& event : pending) Dispatch(std::move(event));
  mu_.Lock();
}

void Fabric::SetDropFilter(std::function<bool(uint16_t, const Frame&)> f) {
  absl::MutexLock lock(&mu_);
  drop_filter_ = std::move(f);
}

void Fabric::EnableTrace(bool enabled) {
  absl::MutexLock lock(&mu_);
  trace_enabled_ = enabled;
}

std::vector<TraceRecord> Fabric::Trace() const {
  absl::MutexLock lock(&mu_);
  return trace_;
}

void Fabric::ClearTrace() {
  absl::MutexLock lock(&mu_);
  trace_.clear();
}

FabricStats Fabric::stats() const {
  absl::MutexLock lock(&mu_);
  return stats_;
}

}  // namespace softverbs
