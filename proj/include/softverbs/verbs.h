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

#ifndef SOFTVERBS_VERBS_H_
#define SOFTVERBS_VERBS_H_

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/synchronization/mutex.h"
#include "absl/time/time.h"
#include "softverbs/frame.h"
#include "softverbs/types.h"
#include "softverbs/work_request.h"

namespace softverbs {

class CompletionChannel;
class CompletionQueue;
class Context;
class Fabric;
class MemoryRegion;
class ProtectionDomain;
class QueuePair;

struct Device {
  std::string name;
  uint64_t guid = 0;

  friend bool operator==(const Device&, const Device&) = default;
};

// The set of emulated host channel adapters visible to this process.
class DeviceRegistry {
 public:
  // Fails with AlreadyExists if `name` is taken.
  absl::Status AddDevice(std::string name, uint64_t guid, int num_ports = 1);

  std::vector<Device> GetDeviceList() const;

  // Every call returns an independent context. NotFound if `device` is not
  // registered.
  absl::StatusOr<std::shared_ptr<Context>> OpenDevice(
      const Device& device) const;

 private:
  struct Entry {
    Device device;
    int num_ports;
  };

  mutable absl::Mutex mu_;
  std::vector<Entry> devices_ ABSL_GUARDED_BY(mu_);
};

// An open device. Owns the lock that serializes every operation on the
// resources created under it.
class Context : public std::enable_shared_from_this<Context> {
 public:
  ~Context();
  Context(const Context&) = delete;
  Context& operator=(const Context&) = delete;

  const Device& device() const { return device_; }
  bool is_open() const;

  // Ports are numbered from 1.
  absl::StatusOr<PortAttributes> QueryPort(uint8_t port) const;

  // Index 0 is the GUID-derived link-local GID; it is the only entry.
  absl::StatusOr<Gid> QueryGid(uint8_t port, int index) const;

  absl::StatusOr<std::shared_ptr<ProtectionDomain>> AllocPd();
  absl::StatusOr<std::shared_ptr<CompletionChannel>> CreateCompChannel();

  // `capacity` >= 1. Only completion vector 0 exists. `channel` may be null.
  absl::StatusOr<std::shared_ptr<CompletionQueue>> CreateCq(
      int capacity, void* user_context,
      std::shared_ptr<CompletionChannel> channel, int comp_vector);

  // Rejected with FailedPrecondition while any PD, CQ or channel is alive.
  absl::Status Close();

 private:
  friend class CompletionChannel;
  friend class CompletionQueue;
  friend class DeviceRegistry;
  friend class Fabric;
  friend class MemoryRegion;
  friend class ProtectionDomain;
  friend class QueuePair;

  struct Port {
    PortAttributes attr;
    std::shared_ptr<Fabric> fabric;
  };

  Context(Device device, int num_ports);

  absl::Status CheckOpenLocked() const ABSL_EXCLUSIVE_LOCKS_REQUIRED(mu_);
  void DetachPortsLocked() ABSL_EXCLUSIVE_LOCKS_REQUIRED(mu_);

  mutable absl::Mutex mu_;
  const Device device_;
  std::map<uint8_t, Port> ports_ ABSL_GUARDED_BY(mu_);
  bool open_ ABSL_GUARDED_BY(mu_) = true;

  uint32_t next_pd_handle_ ABSL_GUARDED_BY(mu_) = 1;
  uint32_t next_lkey_ ABSL_GUARDED_BY(mu_) = 1;
  uint32_t next_qpn_ ABSL_GUARDED_BY(mu_) = 0x580048;

  int live_pds_ ABSL_GUARDED_BY(mu_) = 0;
  int live_cqs_ ABSL_GUARDED_BY(mu_) = 0;
  int live_channels_ ABSL_GUARDED_BY(mu_) = 0;

  // lkey -> region. Entries are removed on deregistration.
  std::unordered_map<uint32_t, MemoryRegion*> mrs_ ABSL_GUARDED_BY(mu_);
};

class ProtectionDomain : public std::enable_shared_from_this<ProtectionDomain> {
 public:
  ~ProtectionDomain();

  uint32_t handle() const { return handle_; }
  const std::shared_ptr<Context>& context() const { return context_; }

  // The region must stay valid until deregistration. Fails on an empty
  // region or undefined access bits.
  absl::StatusOr<std::shared_ptr<MemoryRegion>> RegisterMr(
      std::span<std::byte> region, uint32_t access);

  struct QpInitAttr {
    std::shared_ptr<CompletionQueue> send_cq;
    std::shared_ptr<CompletionQueue> recv_cq;
    QueueCaps cap;
    QpType qp_type = QpType::kRc;
  };
  absl::StatusOr<std::shared_ptr<QueuePair>> CreateQp(const QpInitAttr& init);

  // Rejected while memory regions or queue pairs reference this domain.
  absl::Status Dealloc();

 private:
  friend class Context;
  friend class MemoryRegion;
  friend class QueuePair;

  ProtectionDomain(std::shared_ptr<Context> context, uint32_t handle);
  void ReleaseLocked();

  const std::shared_ptr<Context> context_;
  const uint32_t handle_;
  bool alive_ = true;
  int live_mrs_ = 0;
  int live_qps_ = 0;
};

class MemoryRegion {
 public:
  ~MemoryRegion();

  uint32_t lkey() const { return lkey_; }
  uint64_t addr() const { return base_; }
  size_t length() const { return length_; }
  uint32_t access() const { return access_; }
  bool pinned() const;
  const std::shared_ptr<ProtectionDomain>& pd() const { return pd_; }

  absl::Status Deregister();

 private:
  friend class ProtectionDomain;
  friend class QueuePair;

  MemoryRegion(std::shared_ptr<ProtectionDomain> pd, uint64_t base,
               size_t length, uint32_t access, uint32_t lkey);
  void ReleaseLocked();

  const std::shared_ptr<ProtectionDomain> pd_;
  const uint64_t base_;
  const size_t length_;
  const uint32_t access_;
  const uint32_t lkey_;
  bool pinned_ = true;
};

// Delivers one-shot completion notifications from armed CQs.
class CompletionChannel
    : public std::enable_shared_from_this<CompletionChannel> {
 public:
  ~CompletionChannel();

  // Blocks until an armed CQ receives a completion, then returns it and
  // increments its unacked event count. With a timeout, returns
  // DeadlineExceeded on expiry; a zero timeout polls. Returns Cancelled if
  // the channel is destroyed while waiting.
  absl::StatusOr<std::shared_ptr<CompletionQueue>> GetEvent(
      std::optional<absl::Duration> timeout = std::nullopt);

  // Rejected while CQs use the channel. Wakes blocked GetEvent callers.
  absl::Status Destroy();

 private:
  friend class CompletionQueue;
  friend class Context;

  explicit CompletionChannel(std::shared_ptr<Context> context);
  void ReleaseLocked();

  const std::shared_ptr<Context> context_;
  bool alive_ = true;
  int attached_cqs_ = 0;
  std::deque<std::shared_ptr<CompletionQueue>> pending_;
};

enum class CqState : uint8_t { kOk, kError };

class CompletionQueue : public std::enable_shared_from_this<CompletionQueue> {
 public:
  ~CompletionQueue();

  int capacity() const { return capacity_; }
  void* user_context() const { return user_context_; }
  const std::shared_ptr<CompletionChannel>& channel() const {
    return channel_;
  }
  CqState state() const;
  int unacked_events() const;
  size_t size() const;

  // Dequeues up to `out.size()` completions in FIFO order; never blocks.
  // Returns the number written. FailedPrecondition once the CQ overflowed.
  absl::StatusOr<int> Poll(std::span<WorkCompletion> out);

  // Arms a one-shot notification to the attached channel.
  absl::Status RequestNotify();

  // FailedPrecondition if `n` exceeds the unacked event count.
  absl::Status AckEvents(int n);

  // Rejected while queue pairs use this CQ. Blocks until every event
  // returned by the channel has been acknowledged.
  absl::Status Destroy();

 private:
  friend class CompletionChannel;
  friend class Context;
  friend class ProtectionDomain;
  friend class QueuePair;

  CompletionQueue(std::shared_ptr<Context> context, int capacity,
                  void* user_context,
                  std::shared_ptr<CompletionChannel> channel);

  // Appends a completion; latches the error state on overflow.
  void PushLocked(const WorkCompletion& wc);
  void ReleaseLocked();

  const std::shared_ptr<Context> context_;
  const int capacity_;
  void* const user_context_;
  const std::shared_ptr<CompletionChannel> channel_;
  bool alive_ = true;
  CqState state_ = CqState::kOk;
  std::deque<WorkCompletion> entries_;
  int unacked_events_ = 0;
  bool notify_armed_ = false;
  int qp_refs_ = 0;
};

// Read-only view of a queue pair's transport state.
struct QpIntrospection {
  QpState state = QpState::kReset;
  size_t send_queue_depth = 0;
  size_t recv_queue_depth = 0;
  Psn next_psn;
  std::vector<Psn> unacked_psns;
  Psn expected_psn;
  bool rnr_wait = false;
  int head_retries_used = 0;
  int head_rnr_retries_used = 0;
};

class QueuePair : public std::enable_shared_from_this<QueuePair> {
 public:
  ~QueuePair();

  uint32_t qp_num() const { return qpn_; }
  QpType qp_type() const { return type_; }
  const QueueCaps& caps() const { return caps_; }
  const std::shared_ptr<ProtectionDomain>& pd() const { return pd_; }
  const std::shared_ptr<CompletionQueue>& send_cq() const { return send_cq_; }
  const std::shared_ptr<CompletionQueue>& recv_cq() const { return recv_cq_; }

  QpState state() const;
  QpAttributes Query() const;
  QpIntrospection Introspect() const;

  // Applies exactly the fields named by `mask`. When kQpState is set the
  // transition must be legal and the mask must contain the fields that
  // transition requires; otherwise nothing changes.
  absl::Status Modify(const QpAttributes& attr, uint32_t mask);

  // Validates and enqueues each request in order. On failure processing
  // stops, earlier requests stay posted, and `bad_index` (if given) names
  // the failing request.
  absl::Status PostRecv(std::span<const ReceiveWorkRequest> chain,
                        size_t* bad_index = nullptr);
  absl::Status PostRecv(const ReceiveWorkRequest& wr) {
    return PostRecv(std::span<const ReceiveWorkRequest>(&wr, 1));
  }

  // Requires RTS. Payload bytes are copied at post time and transmitted
  // with consecutive PSNs.
  absl::Status PostSend(std::span<const SendWorkRequest> chain,
                        size_t* bad_index = nullptr);
  absl::Status PostSend(const SendWorkRequest& wr) {
    return PostSend(std::span<const SendWorkRequest>(&wr, 1));
  }

  absl::Status Destroy();

 private:
  friend class Fabric;
  friend class ProtectionDomain;

  struct SendWqe {
    uint64_t wr_id;
    bool signaled;
    Psn last_psn;
  };
  struct RecvWqe {
    uint64_t wr_id;
    std::vector<ScatterGatherElement> sg_list;
  };
  struct InFlight {
    Frame frame;
    absl::Duration sent_at;
    int retries_used = 0;
    int rnr_retries_used = 0;
  };
  struct SenderState {
    Psn next_psn;
    std::deque<InFlight> unacked;
    bool rnr_wait = false;
    absl::Duration rnr_resume_at;
  };
  struct ReceiverState {
    Psn expected_psn;
    std::vector<uint8_t> reassembly;
    bool in_message = false;
  };

  QueuePair(std::shared_ptr<ProtectionDomain> pd, uint32_t qpn,
            const ProtectionDomain::QpInitAttr& init);

  absl::Mutex& mu() const { return context_->mu_; }

  // verbs.cc
  absl::Status ValidateAttrsLocked(const QpAttributes& attr,
                                   uint32_t mask) const;
  void ReleaseLocked();
  void UnbindLocked();
  void ClearTransportLocked();

  // work_queue.cc
  absl::Status ValidateSgeLocked(const ScatterGatherElement& sge,
                                 bool needs_local_write) const;
  absl::Status CheckCqsLocked() const;

  // rc_engine.cc: reliable-connection engine, driven by the fabric.
  void TransmitMessageLocked(uint64_t wr_id, bool signaled,
                             std::vector<uint8_t> message);
  void OnFrame(const Frame& frame);
  void OnTimer(absl::Duration deadline);
  void OnDataLocked(const Frame& frame);
  void OnAckLocked(const Frame& frame);
  void OnRnrNakLocked(const Frame& frame);
  void OnTimerLocked(absl::Duration now);
  void RetireThroughLocked(size_t count);
  void RetransmitWindowLocked(absl::Duration now);
  void ArmTimerLocked(absl::Duration deadline);
  void SendControlLocked(FrameKind kind, Psn psn, uint8_t hint = 0);
  bool ScatterLocked(const RecvWqe& wqe, std::span<const uint8_t> data);
  void EnterErrorLocked(std::optional<WcStatus> head_send_status,
                        std::optional<WcStatus> head_recv_status);
  void FlushLocked();
  absl::Duration TimeoutLocked() const;

  const std::shared_ptr<Context> context_;
  const std::shared_ptr<ProtectionDomain> pd_;
  const std::shared_ptr<CompletionQueue> send_cq_;
  const std::shared_ptr<CompletionQueue> recv_cq_;
  const uint32_t qpn_;
  const QpType type_;
  const QueueCaps caps_;

  bool alive_ = true;
  QpAttributes attrs_;
  std::deque<SendWqe> send_queue_;
  std::deque<RecvWqe> recv_queue_;
  SenderState sender_;
  ReceiverState receiver_;

  std::shared_ptr<Fabric> fabric_;
  uint16_t local_lid_ = 0;
  bool bound_ = false;
  std::optional<absl::Duration> armed_timer_;
};

bool IsLegalTransition(QpState from, QpState to);
// Mask a transition into `to` must contain.
uint32_t RequiredMask(QpState to);

}  // namespace softverbs

#endif  // SOFTVERBS_VERBS_H_
