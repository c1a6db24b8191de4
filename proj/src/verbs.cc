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

#include "softverbs/verbs.h"

#include <algorithm>
#include <utility>

#include "absl/status/status.h"
#include "absl/strings/str_format.h"
#include "softverbs/fabric.h"

namespace softverbs {
namespace {

constexpr int kMaxCqCapacity = 1 << 20;
constexpr uint32_t kMaxWr = 1 << 16;
constexpr uint32_t kMaxSge = 32;
constexpr uint8_t kMaxServiceLevel = 15;
constexpr uint8_t kMaxEncodedTimer = 31;
constexpr uint8_t kMaxRetry = 7;

}  // namespace

bool IsLegalTransition(QpState from, QpState to) {
  if (to == QpState::kReset || to == QpState::kError) return true;
  return (from == QpState::kReset && to == QpState::kInit) ||
         (from == QpState::kInit && to == QpState::kRtr) ||
         (from == QpState::kRtr && to == QpState::kRts);
}

uint32_t RequiredMask(QpState to) {
  switch (to) {
    case QpState::kInit:
      return kResetToInitMask;
    case QpState::kRtr:
      return kInitToRtrMask;
    case QpState::kRts:
      return kRtrToRtsMask;
    case QpState::kReset:
    case QpState::kError:
      return kQpState;
  }
  return kQpState;
}

// DeviceRegistry

absl::Status DeviceRegistry::AddDevice(std::string name, uint64_t guid,
                                       int num_ports) {
  if (name.empty()) return absl::InvalidArgumentError("empty device name");
  if (num_ports < 1 || num_ports > 254) {
    return absl::InvalidArgumentError("device needs 1..254 ports");
  }
  absl::MutexLock lock(&mu_);
  for (const Entry& e : devices_) {
    if (e.device.name == name) {
      return absl::AlreadyExistsError(
          absl::StrFormat("device %s already registered", name));
    }
  }
  devices_.push_back(Entry{Device{std::move(name), guid}, num_ports});
  return absl::OkStatus();
}

std::vector<Device> DeviceRegistry::GetDeviceList() const {
  absl::MutexLock lock(&mu_);
  std::vector<Device> out;
  out.reserve(devices_.size());
  for (const Entry& e : devices_) out.push_back(e.device);
  return out;
}

absl::StatusOr<std::shared_ptr<Context>> DeviceRegistry::OpenDevice(
    const Device& device) const {
  absl::MutexLock lock(&mu_);
  for (const Entry& e : devices_) {
    if (e.device == device) {
      return std::shared_ptr<Context>(new Context(e.device, e.num_ports));
    }
  }
  return absl::NotFoundError(
      absl::StrFormat("no such device: %s", device.name));
}

// Context

Context::Context(Device device, int num_ports) : device_(std::move(device)) {
  for (int p = 1; p <= num_ports; ++p) {
    ports_[static_cast<uint8_t>(p)] = Port{};
  }
}

Context::~Context() {
  absl::MutexLock lock(&mu_);
  DetachPortsLocked();
}

bool Context::is_open() const {
  absl::MutexLock lock(&mu_);
  return open_;
}

absl::Status Context::CheckOpenLocked() const {
  if (!open_) return absl::FailedPreconditionError("context is closed");
  return absl::OkStatus();
}

void Context::DetachPortsLocked() {
  for (auto& [num, port] : ports_) {
    if (port.fabric != nullptr) {
      port.fabric->Detach(port.attr.lid);
      port.fabric.reset();
    }
    port.attr = PortAttributes{};
  }
}

absl::StatusOr<PortAttributes> Context::QueryPort(uint8_t port) const {
  absl::MutexLock lock(&mu_);
  if (absl::Status s = CheckOpenLocked(); !s.ok()) return s;
  auto it = ports_.find(port);
  if (it == ports_.end()) {
    return absl::InvalidArgumentError(absl::StrFormat("no port %d", port));
  }
  return it->second.attr;
}

absl::StatusOr<Gid> Context::QueryGid(uint8_t port, int index) const {
  absl::MutexLock lock(&mu_);
  if (absl::Status s = CheckOpenLocked(); !s.ok()) return s;
  if (!ports_.contains(port)) {
    return absl::InvalidArgumentError(absl::StrFormat("no port %d", port));
  }
  if (index != 0) {
    return absl::OutOfRangeError(
        absl::StrFormat("gid index %d out of range", index));
  }
  return Gid::FromGuid(device_.guid);
}

absl::StatusOr<std::shared_ptr<ProtectionDomain>> Context::AllocPd() {
  absl::MutexLock lock(&mu_);
  if (absl::Status s = CheckOpenLocked(); !s.ok()) return s;
  ++live_pds_;
  return std::shared_ptr<ProtectionDomain>(
      new ProtectionDomain(shared_from_this(), next_pd_handle_++));
}

absl::StatusOr<std::shared_ptr<CompletionChannel>>
Context::CreateCompChannel() {
  absl::MutexLock lock(&mu_);
  if (absl::Status s = CheckOpenLocked(); !s.ok()) return s;
  ++live_channels_;
  return std::shared_ptr<CompletionChannel>(
      new CompletionChannel(shared_from_this()));
}

absl::StatusOr<std::shared_ptr<CompletionQueue>> Context::CreateCq(
    int capacity, void* user_context,
    std::shared_ptr<CompletionChannel> channel, int comp_vector) {
  absl::MutexLock lock(&mu_);
  if (absl::Status s = CheckOpenLocked(); !s.ok()) return s;
  if (capacity < 1 || capacity > kMaxCqCapacity) {
    return absl::InvalidArgumentError(
        absl::StrFormat("cq capacity %d out of range", capacity));
  }
  if (comp_vector != 0) {
    return absl::InvalidArgumentError("only completion vector 0 exists");
  }
  if (channel != nullptr) {
    if (channel->context_.get() != this) {
      return absl::InvalidArgumentError("channel belongs to another context");
    }
    if (!channel->alive_) {
      return absl::FailedPreconditionError("channel destroyed");
    }
    ++channel->attached_cqs_;
  }
  ++live_cqs_;
  return std::shared_ptr<CompletionQueue>(new CompletionQueue(
      shared_from_this(), capacity, user_context, std::move(channel)));
}

absl::Status Context::Close() {
  absl::MutexLock lock(&mu_);
  if (absl::Status s = CheckOpenLocked(); !s.ok()) return s;
  if (live_pds_ > 0 || live_cqs_ > 0 || live_channels_ > 0) {
    return absl::FailedPreconditionError(absl::StrFormat(
        "context has live resources: %d pd, %d cq, %d channel", live_pds_,
        live_cqs_, live_channels_));
  }
  DetachPortsLocked();
  open_ = false;
  return absl::OkStatus();
}

// ProtectionDomain

ProtectionDomain::ProtectionDomain(std::shared_ptr<Context> context,
                                   uint32_t handle)
    : context_(std::move(context)), handle_(handle) {}

ProtectionDomain::~ProtectionDomain() {
  absl::MutexLock lock(&context_->mu_);
  if (alive_) ReleaseLocked();
}

void ProtectionDomain::ReleaseLocked() {
  alive_ = false;
  --context_->live_pds_;
}

absl::Status ProtectionDomain::Dealloc() {
  absl::MutexLock lock(&context_->mu_);
  if (!alive_) return absl::FailedPreconditionError("pd already released");
  if (live_mrs_ > 0 || live_qps_ > 0) {
    return absl::FailedPreconditionError(
        absl::StrFormat("pd has %d memory regions and %d queue pairs",
                        live_mrs_, live_qps_));
  }
  ReleaseLocked();
  return absl::OkStatus();
}

absl::StatusOr<std::shared_ptr<MemoryRegion>> ProtectionDomain::RegisterMr(
    std::span<std::byte> region, uint32_t access) {
  absl::MutexLock lock(&context_->mu_);
  if (absl::Status s = context_->CheckOpenLocked(); !s.ok()) return s;
  if (!alive_) return absl::FailedPreconditionError("pd released");
  if (region.empty()) {
    return absl::InvalidArgumentError("memory region length must be > 0");
  }
  if ((access & ~kAccessDefinedBits) != 0) {
    return absl::InvalidArgumentError(
        absl::StrFormat("undefined access bits 0x%x", access));
  }
  uint32_t lkey = context_->next_lkey_++;
  if (lkey == 0) lkey = context_->next_lkey_++;
  auto mr = std::shared_ptr<MemoryRegion>(new MemoryRegion(
      shared_from_this(), reinterpret_cast<uint64_t>(region.data()),
      region.size(), access, lkey));
  context_->mrs_[lkey] = mr.get();
  ++live_mrs_;
  return mr;
}

absl::StatusOr<std::shared_ptr<QueuePair>> ProtectionDomain::CreateQp(
    const QpInitAttr& init) {
  absl::MutexLock lock(&context_->mu_);
  if (absl::Status s = context_->CheckOpenLocked(); !s.ok()) return s;
  if (!alive_) return absl::FailedPreconditionError("pd released");
  if (init.send_cq == nullptr || init.recv_cq == nullptr) {
    return absl::InvalidArgumentError("queue pair needs send and recv CQs");
  }
  for (const auto& cq : {init.send_cq, init.recv_cq}) {
    if (cq->context_ != context_) {
      return absl::InvalidArgumentError("CQ belongs to another context");
    }
    if (!cq->alive_) return absl::FailedPreconditionError("CQ destroyed");
  }
  if (init.qp_type != QpType::kRc) {
    return absl::UnimplementedError("only RC queue pairs are supported");
  }
  const QueueCaps& cap = init.cap;
  if (cap.max_send_wr < 1 || cap.max_recv_wr < 1 || cap.max_send_sge < 1 ||
      cap.max_recv_sge < 1) {
    return absl::InvalidArgumentError("queue capacities must be >= 1");
  }
  if (cap.max_send_wr > kMaxWr || cap.max_recv_wr > kMaxWr ||
      cap.max_send_sge > kMaxSge || cap.max_recv_sge > kMaxSge) {
    return absl::InvalidArgumentError("queue capacities exceed device limits");
  }
  const uint32_t qpn = context_->next_qpn_ & kQpnMask;
  context_->next_qpn_ = (context_->next_qpn_ + 1) & kQpnMask;
  auto qp = std::shared_ptr<QueuePair>(
      new QueuePair(shared_from_this(), qpn, init));
  ++live_qps_;
  ++init.send_cq->qp_refs_;
  ++init.recv_cq->qp_refs_;
  return qp;
}

// MemoryRegion

MemoryRegion::MemoryRegion(std::shared_ptr<ProtectionDomain> pd,
                           uint64_t base, size_t length, uint32_t access,
                           uint32_t lkey)
    : pd_(std::move(pd)),
      base_(base),
      length_(length),
      access_(access),
      lkey_(lkey) {}

MemoryRegion::~MemoryRegion() {
  absl::MutexLock lock(&pd_->context_->mu_);
  if (pinned_) ReleaseLocked();
}

bool MemoryRegion::pinned() const {
  absl::MutexLock lock(&pd_->context_->mu_);
  return pinned_;
}

void MemoryRegion::ReleaseLocked() {
  pinned_ = false;
  pd_->context_->mrs_.erase(lkey_);
  --pd_->live_mrs_;
}

absl::Status MemoryRegion::Deregister() {
  absl::MutexLock lock(&pd_->context_->mu_);
  if (!pinned_) return absl::FailedPreconditionError("region not registered");
  ReleaseLocked();
  return absl::OkStatus();
}

// CompletionChannel

CompletionChannel::CompletionChannel(std::shared_ptr<Context> context)
    : context_(std::move(context)) {}

CompletionChannel::~CompletionChannel() {
  absl::MutexLock lock(&context_->mu_);
  if (alive_) ReleaseLocked();
}

void CompletionChannel::ReleaseLocked() {
  alive_ = false;
  pending_.clear();
  --context_->live_channels_;
}

absl::Status CompletionChannel::Destroy() {
  absl::MutexLock lock(&context_->mu_);
  if (!alive_) return absl::FailedPreconditionError("channel destroyed");
  if (attached_cqs_ > 0) {
    return absl::FailedPreconditionError(
        absl::StrFormat("%d CQs still use the channel", attached_cqs_));
  }
  ReleaseLocked();
  return absl::OkStatus();
}

// CompletionQueue

CompletionQueue::CompletionQueue(std::shared_ptr<Context> context,
                                 int capacity, void* user_context,
                                 std::shared_ptr<CompletionChannel> channel)
    : context_(std::move(context)),
      capacity_(capacity),
      user_context_(user_context),
      channel_(std::move(channel)) {}

CompletionQueue::~CompletionQueue() {
  absl::MutexLock lock(&context_->mu_);
  if (alive_) ReleaseLocked();
}

void CompletionQueue::ReleaseLocked() {
  alive_ = false;
  entries_.clear();
  if (channel_ != nullptr) {
    --channel_->attached_cqs_;
    auto& pending = channel_->pending_;
    pending.erase(std::remove_if(pending.begin(), pending.end(),
                                 [this](const auto& cq) {
                                   return cq.get() == this;
                                 }),
                  pending.end());
  }
  --context_->live_cqs_;
}

absl::Status CompletionQueue::Destroy() {
  absl::MutexLock lock(&context_->mu_);
  if (!alive_) return absl::FailedPreconditionError("CQ destroyed");
  if (qp_refs_ > 0) {
    return absl::FailedPreconditionError(
        absl::StrFormat("%d queue pairs still use the CQ", qp_refs_));
  }
  auto settled = [this]() ABSL_EXCLUSIVE_LOCKS_REQUIRED(context_->mu_) {
    return unacked_events_ == 0 || !alive_;
  };
  context_->mu_.Await(absl::Condition(&settled));
  if (!alive_) return absl::FailedPreconditionError("CQ destroyed");
  ReleaseLocked();
  return absl::OkStatus();
}

CqState CompletionQueue::state() const {
  absl::MutexLock lock(&context_->mu_);
  return state_;
}

int CompletionQueue::unacked_events() const {
  absl::MutexLock lock(&context_->mu_);
  return unacked_events_;
}

size_t CompletionQueue::size() const {
  absl::MutexLock lock(&context_->mu_);
  return entries_.size();
}

// QueuePair

QueuePair::QueuePair(std::shared_ptr<ProtectionDomain> pd, uint32_t qpn,
                     const ProtectionDomain::QpInitAttr& init)
    : context_(pd->context()),
      pd_(std::move(pd)),
      send_cq_(init.send_cq),
      recv_cq_(init.recv_cq),
      qpn_(qpn),
      type_(init.qp_type),
      caps_(init.cap) {}

QueuePair::~QueuePair() {
  absl::MutexLock lock(&mu());
  if (alive_) ReleaseLocked();
}

void QueuePair::ReleaseLocked() {
  UnbindLocked();
  ClearTransportLocked();
  alive_ = false;
  --pd_->live_qps_;
  --send_cq_->qp_refs_;
  --recv_cq_->qp_refs_;
}

void QueuePair::UnbindLocked() {
  if (bound_) {
    fabric_->Unbind(local_lid_, qpn_);
    bound_ = false;
  }
}

void QueuePair::ClearTransportLocked() {
  send_queue_.clear();
  recv_queue_.clear();
  sender_ = SenderState{};
  receiver_ = ReceiverState{};
  armed_timer_.reset();
}

absl::Status QueuePair::Destroy() {
  absl::MutexLock lock(&mu());
  if (!alive_) return absl::FailedPreconditionError("queue pair destroyed");
  ReleaseLocked();
  return absl::OkStatus();
}

QpState QueuePair::state() const {
  absl::MutexLock lock(&mu());
  return attrs_.qp_state;
}

QpAttributes QueuePair::Query() const {
  absl::MutexLock lock(&mu());
  return attrs_;
}

QpIntrospection QueuePair::Introspect() const {
  absl::MutexLock lock(&mu());
  QpIntrospection out;
  out.state = attrs_.qp_state;
  out.send_queue_depth = send_queue_.size();
  out.recv_queue_depth = recv_queue_.size();
  out.next_psn = sender_.next_psn;
  for (const InFlight& f : sender_.unacked) {
    out.unacked_psns.push_back(f.frame.psn);
  }
  out.expected_psn = receiver_.expected_psn;
  out.rnr_wait = sender_.rnr_wait;
  if (!sender_.unacked.empty()) {
    out.head_retries_used = sender_.unacked.front().retries_used;
    out.head_rnr_retries_used = sender_.unacked.front().rnr_retries_used;
  }
  return out;
}

absl::Status QueuePair::ValidateAttrsLocked(const QpAttributes& attr,
                                            uint32_t mask) const {
  if ((mask & kQpState) && static_cast<uint8_t>(attr.qp_state) >
                               static_cast<uint8_t>(QpState::kError)) {
    return absl::InvalidArgumentError("unknown qp state");
  }
  if ((mask & kQpAccessFlags) &&
      (attr.qp_access_flags & ~kAccessDefinedBits) != 0) {
    return absl::InvalidArgumentError("undefined access bits");
  }
  if ((mask & kQpPort) && !context_->ports_.contains(attr.port_num)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("no port %d", attr.port_num));
  }
  if (mask & kQpAv) {
    if (attr.ah.sl > kMaxServiceLevel) {
      return absl::InvalidArgumentError("service level exceeds 4 bits");
    }
    if (!context_->ports_.contains(attr.ah.port_num)) {
      return absl::InvalidArgumentError(
          absl::StrFormat("address handle names no port %d",
                          attr.ah.port_num));
    }
    if (!attr.ah.is_global && !attr.ah.dgid.IsZero()) {
      return absl::InvalidArgumentError("non-global address with a dgid");
    }
  }
  if ((mask & kQpPathMtu) &&
      !PathMtuFromBytes(MtuBytes(attr.path_mtu)).has_value()) {
    return absl::InvalidArgumentError("invalid path mtu");
  }
  if ((mask & kQpDestQpn) && attr.dest_qp_num > kQpnMask) {
    return absl::InvalidArgumentError("dest qpn exceeds 24 bits");
  }
  if (((mask & kQpRqPsn) && attr.rq_psn > Psn::kMask) ||
      ((mask & kQpSqPsn) && attr.sq_psn > Psn::kMask)) {
    return absl::InvalidArgumentError("psn exceeds 24 bits");
  }
  if (((mask & kQpMinRnrTimer) && attr.min_rnr_timer > kMaxEncodedTimer) ||
      ((mask & kQpTimeout) && attr.timeout > kMaxEncodedTimer)) {
    return absl::InvalidArgumentError("timer encoding exceeds 5 bits");
  }
  if (((mask & kQpRetryCnt) && attr.retry_cnt > kMaxRetry) ||
      ((mask & kQpRnrRetry) && attr.rnr_retry > kMaxRetry)) {
    return absl::InvalidArgumentError("retry count exceeds 3 bits");
  }
  return absl::OkStatus();
}

absl::Status QueuePair::Modify(const QpAttributes& attr, uint32_t mask) {
  absl::MutexLock lock(&mu());
  if (!alive_) return absl::FailedPreconditionError("queue pair destroyed");
  if (mask == 0) return absl::InvalidArgumentError("empty attribute mask");
  if ((mask & ~kQpAttrMaskDefinedBits) != 0) {
    return absl::InvalidArgumentError(
        absl::StrFormat("undefined mask bits 0x%x", mask));
  }
  if (absl::Status s = ValidateAttrsLocked(attr, mask); !s.ok()) return s;

  const QpState from = attrs_.qp_state;
  std::optional<QpState> to;
  if (mask & kQpState) {
    to = attr.qp_state;
    if (!IsLegalTransition(from, *to)) {
      return absl::FailedPreconditionError(
          absl::StrFormat("illegal transition %s -> %s", QpStateName(from),
                          QpStateName(*to)));
    }
    const uint32_t required = RequiredMask(*to);
    if ((mask & required) != required) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "transition to %s is missing attributes 0x%x", QpStateName(*to),
          required & ~mask));
    }
  }

  std::shared_ptr<Fabric> fabric;
  uint16_t lid = 0;
  if (to == QpState::kRtr) {
    const uint8_t port = (mask & kQpPort) ? attr.port_num : attrs_.port_num;
    auto it = context_->ports_.find(port);
    if (it == context_->ports_.end() || it->second.fabric == nullptr ||
        it->second.attr.state != PortState::kActive) {
      return absl::FailedPreconditionError(
          absl::StrFormat("port %d is not active", port));
    }
    fabric = it->second.fabric;
    lid = it->second.attr.lid;
  }

  QpAttributes& a = attrs_;
  if (mask & kQpPkeyIndex) a.pkey_index = attr.pkey_index;
  if (mask & kQpPort) a.port_num = attr.port_num;
  if (mask & kQpAccessFlags) a.qp_access_flags = attr.qp_access_flags;
  if (mask & kQpAv) a.ah = attr.ah;
  if (mask & kQpPathMtu) a.path_mtu = attr.path_mtu;
  if (mask & kQpDestQpn) a.dest_qp_num = attr.dest_qp_num;
  if (mask & kQpRqPsn) a.rq_psn = attr.rq_psn;
  if (mask & kQpSqPsn) a.sq_psn = attr.sq_psn;
  if (mask & kQpMaxDestRdAtomic) a.max_dest_rd_atomic = attr.max_dest_rd_atomic;
  if (mask & kQpMaxQpRdAtomic) a.max_rd_atomic = attr.max_rd_atomic;
  if (mask & kQpMinRnrTimer) a.min_rnr_timer = attr.min_rnr_timer;
  if (mask & kQpTimeout) a.timeout = attr.timeout;
  if (mask & kQpRetryCnt) a.retry_cnt = attr.retry_cnt;
  if (mask & kQpRnrRetry) a.rnr_retry = attr.rnr_retry;

  if (!to.has_value()) return absl::OkStatus();
  switch (*to) {
    case QpState::kReset:
      UnbindLocked();
      ClearTransportLocked();
      a.qp_state = QpState::kReset;
      break;
    case QpState::kInit:
      a.qp_state = QpState::kInit;
      break;
    case QpState::kRtr:
      receiver_ = ReceiverState{};
      receiver_.expected_psn = Psn(a.rq_psn);
      fabric_ = std::move(fabric);
      local_lid_ = lid;
      fabric_->Bind(local_lid_, qpn_, weak_from_this());
      bound_ = true;
      a.qp_state = QpState::kRtr;
      break;
    case QpState::kRts:
      sender_ = SenderState{};
      sender_.next_psn = Psn(a.sq_psn);
      a.qp_state = QpState::kRts;
      break;
    case QpState::kError:
      EnterErrorLocked(std::nullopt, std::nullopt);
      break;
  }
  return absl::OkStatus();
}

}  // namespace softverbs
