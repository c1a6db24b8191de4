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

#include <algorithm>
#include <cstring>
#include <utility>

#include "absl/status/status.h"
#include "absl/strings/str_format.h"
#include "softverbs/verbs.h"

namespace softverbs {
namespace {

// Largest message a single send may gather.
constexpr uint64_t kMaxMessageBytes = uint64_t{1} << 30;

}  // namespace

absl::string_view WcStatusName(WcStatus status) {
  switch (status) {
    case WcStatus::kSuccess:
      return "success";
    case WcStatus::kLocalProtectionError:
      return "local protection error";
    case WcStatus::kRetryExceeded:
      return "transport retry counter exceeded";
    case WcStatus::kRnrRetryExceeded:
      return "RNR retry counter exceeded";
    case WcStatus::kWorkRequestFlushed:
      return "work request flushed error";
  }
  return "unknown";
}

// Completion queue

void CompletionQueue::PushLocked(const WorkCompletion& wc) {
  if (!alive_ || state_ == CqState::kError) return;
  if (entries_.size() >= static_cast<size_t>(capacity_)) {
    state_ = CqState::kError;
    return;
  }
  entries_.push_back(wc);
  if (notify_armed_ && channel_ != nullptr && channel_->alive_) {
    notify_armed_ = false;
    channel_->pending_.push_back(shared_from_this());
  }
}

absl::StatusOr<int> CompletionQueue::Poll(std::span<WorkCompletion> out) {
  absl::MutexLock lock(&context_->mu_);
  if (!alive_) return absl::FailedPreconditionError("CQ destroyed");
  if (state_ == CqState::kError) {
    return absl::FailedPreconditionError("CQ overflowed");
  }
  const size_t n = std::min(out.size(), entries_.size());
  for (size_t i = 0; i < n; ++i) {
    out[i] = entries_.front();
    entries_.pop_front();
  }
  return static_cast<int>(n);
}

absl::Status CompletionQueue::RequestNotify() {
  absl::MutexLock lock(&context_->mu_);
  if (!alive_) return absl::FailedPreconditionError("CQ destroyed");
  if (channel_ == nullptr) {
    return absl::FailedPreconditionError("CQ has no completion channel");
  }
  notify_armed_ = true;
  return absl::OkStatus();
}

absl::Status CompletionQueue::AckEvents(int n) {
  absl::MutexLock lock(&context_->mu_);
  if (n < 0 || n > unacked_events_) {
    return absl::FailedPreconditionError(absl::StrFormat(
        "cannot ack %d events, %d outstanding", n, unacked_events_));
  }
  unacked_events_ -= n;
  return absl::OkStatus();
}

// Completion channel

absl::StatusOr<std::shared_ptr<CompletionQueue>> CompletionChannel::GetEvent(
    std::optional<absl::Duration> timeout) {
  absl::MutexLock lock(&context_->mu_);
  if (!alive_) return absl::FailedPreconditionError("channel destroyed");
  auto ready = [this]() ABSL_EXCLUSIVE_LOCKS_REQUIRED(context_->mu_) {
    return !pending_.empty() || !alive_;
  };
  if (timeout.has_value() && *timeout <= absl::ZeroDuration()) {
    if (!ready()) return absl::DeadlineExceededError("no completion event");
  } else if (timeout.has_value()) {
    if (!context_->mu_.AwaitWithTimeout(absl::Condition(&ready), *timeout)) {
      return absl::DeadlineExceededError("no completion event");
    }
  } else {
    context_->mu_.Await(absl::Condition(&ready));
  }
  if (!alive_) return absl::CancelledError("channel destroyed while waiting");
  std::shared_ptr<CompletionQueue> cq = std::move(pending_.front());
  pending_.pop_front();
  ++cq->unacked_events_;
  return cq;
}

// Queue pair posting

absl::Status QueuePair::ValidateSgeLocked(const ScatterGatherElement& sge,
                                          bool needs_local_write) const {
  if (sge.length == 0) {
    return absl::InvalidArgumentError("zero-length sge");
  }
  auto it = context_->mrs_.find(sge.lkey);
  if (it == context_->mrs_.end()) {
    return absl::InvalidArgumentError(
        absl::StrFormat("unknown lkey 0x%x", sge.lkey));
  }
  const MemoryRegion& mr = *it->second;
  if (mr.pd_ != pd_) {
    return absl::InvalidArgumentError(
        absl::StrFormat("lkey 0x%x belongs to another protection domain",
                        sge.lkey));
  }
  if (sge.addr < mr.base_ || sge.addr - mr.base_ > mr.length_ ||
      sge.length > mr.length_ - (sge.addr - mr.base_)) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "sge [0x%x, +%u) outside region lkey 0x%x", sge.addr, sge.length,
        sge.lkey));
  }
  if (needs_local_write && (mr.access_ & kAccessLocalWrite) == 0) {
    return absl::PermissionDeniedError(
        absl::StrFormat("lkey 0x%x lacks local write access", sge.lkey));
  }
  return absl::OkStatus();
}

absl::Status QueuePair::CheckCqsLocked() const {
  if (send_cq_->state_ == CqState::kError ||
      recv_cq_->state_ == CqState::kError) {
    return absl::FailedPreconditionError("attached CQ is in error state");
  }
  return absl::OkStatus();
}

absl::Status QueuePair::PostRecv(std::span<const ReceiveWorkRequest> chain,
                                 size_t* bad_index) {
  absl::MutexLock lock(&mu());
  auto fail = [&](size_t i, absl::Status s) {
    if (bad_index != nullptr) *bad_index = i;
    return s;
  };
  for (size_t i = 0; i < chain.size(); ++i) {
    if (!alive_) return fail(i, absl::FailedPreconditionError("QP destroyed"));
    const QpState st = attrs_.qp_state;
    if (st != QpState::kInit && st != QpState::kRtr && st != QpState::kRts) {
      return fail(i, absl::FailedPreconditionError(absl::StrFormat(
                         "cannot post receives in %s", QpStateName(st))));
    }
    if (absl::Status s = CheckCqsLocked(); !s.ok()) return fail(i, s);
    const ReceiveWorkRequest& wr = chain[i];
    if (recv_queue_.size() >= caps_.max_recv_wr) {
      return fail(i, absl::ResourceExhaustedError("receive queue full"));
    }
    if (wr.sg_list.size() > caps_.max_recv_sge) {
      return fail(i, absl::InvalidArgumentError("too many scatter entries"));
    }
    for (const ScatterGatherElement& sge : wr.sg_list) {
      if (absl::Status s = ValidateSgeLocked(sge, true); !s.ok()) {
        return fail(i, s);
      }
    }
    recv_queue_.push_back(RecvWqe{wr.wr_id, wr.sg_list});
  }
  return absl::OkStatus();
}

absl::Status QueuePair::PostSend(std::span<const SendWorkRequest> chain,
                                 size_t* bad_index) {
  absl::MutexLock lock(&mu());
  auto fail = [&](size_t i, absl::Status s) {
    if (bad_index != nullptr) *bad_index = i;
    return s;
  };
  for (size_t i = 0; i < chain.size(); ++i) {
    if (!alive_) return fail(i, absl::FailedPreconditionError("QP destroyed"));
    if (attrs_.qp_state != QpState::kRts) {
      return fail(i, absl::FailedPreconditionError(
                         absl::StrFormat("cannot post sends in %s",
                                         QpStateName(attrs_.qp_state))));
    }
    if (absl::Status s = CheckCqsLocked(); !s.ok()) return fail(i, s);
    const SendWorkRequest& wr = chain[i];
    if (wr.opcode != WrOpcode::kSend) {
      return fail(i, absl::InvalidArgumentError("unsupported opcode"));
    }
    if (send_queue_.size() >= caps_.max_send_wr) {
      return fail(i, absl::ResourceExhaustedError("send queue full"));
    }
    if (wr.sg_list.size() > caps_.max_send_sge) {
      return fail(i, absl::InvalidArgumentError("too many gather entries"));
    }
    uint64_t total = 0;
    for (const ScatterGatherElement& sge : wr.sg_list) {
      if (absl::Status s = ValidateSgeLocked(sge, false); !s.ok()) {
        return fail(i, s);
      }
      total += sge.length;
    }
    if (total > kMaxMessageBytes) {
      return fail(i, absl::InvalidArgumentError("message too long"));
    }
    std::vector<uint8_t> message(total);
    size_t offset = 0;
    for (const ScatterGatherElement& sge : wr.sg_list) {
      std::memcpy(message.data() + offset,
                  reinterpret_cast<const void*>(sge.addr), sge.length);
      offset += sge.length;
    }
    TransmitMessageLocked(wr.wr_id, (wr.send_flags & kSendSignaled) != 0,
                          std::move(message));
  }
  return absl::OkStatus();
}

}  // namespace softverbs
