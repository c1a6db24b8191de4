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

// Reliable-connection transport engine: segmentation, PSN ordering,
// cumulative ACKs, RNR back-off and go-back-N retransmission. All entry
// points run on the fabric's event loop and take the context lock.

#include <algorithm>
#include <cstring>
#include <utility>

#include "softverbs/fabric.h"
#include "softverbs/verbs.h"

namespace softverbs {

absl::Duration QueuePair::TimeoutLocked() const {
  const absl::Duration t = fabric_->options().timing.timeout[attrs_.timeout];
  return t == absl::ZeroDuration() ? absl::InfiniteDuration() : t;
}

void QueuePair::ArmTimerLocked(absl::Duration deadline) {
  if (deadline == absl::InfiniteDuration()) return;
  // An earlier pending timer re-evaluates and re-arms when it fires.
  if (armed_timer_.has_value() && *armed_timer_ <= deadline) return;
  armed_timer_ = deadline;
  fabric_->ScheduleTimer(weak_from_this(), deadline);
}

void QueuePair::TransmitMessageLocked(uint64_t wr_id, bool signaled,
                                      std::vector<uint8_t> message) {
  std::vector<Frame> frames =
      SegmentMessage(message, MtuBytes(attrs_.path_mtu), attrs_.dest_qp_num,
                     sender_.next_psn);
  sender_.next_psn = sender_.next_psn + static_cast<uint32_t>(frames.size());
  send_queue_.push_back(SendWqe{wr_id, signaled, frames.back().psn});

  const absl::Duration now = fabric_->Now();
  for (Frame& frame : frames) {
    // While backing off after an RNR NAK the whole window is resent on
    // resume, so new frames only join the window.
    if (!sender_.rnr_wait) fabric_->Emit(attrs_.ah.dlid, frame);
    sender_.unacked.push_back(InFlight{std::move(frame), now});
  }
  if (!sender_.rnr_wait) ArmTimerLocked(now + TimeoutLocked());
}

void QueuePair::SendControlLocked(FrameKind kind, Psn psn, uint8_t hint) {
  Frame frame;
  frame.kind = kind;
  frame.seg = Segment::kOnly;
  frame.dest_qpn = attrs_.dest_qp_num;
  frame.psn = psn;
  frame.rnr_delay_hint = hint;
  fabric_->Emit(attrs_.ah.dlid, frame);
}

void QueuePair::OnFrame(const Frame& frame) {
  absl::MutexLock lock(&mu());
  if (!alive_) return;
  const QpState st = attrs_.qp_state;
  if (st != QpState::kRtr && st != QpState::kRts) return;
  switch (frame.kind) {
    case FrameKind::kData:
      OnDataLocked(frame);
      break;
    case FrameKind::kAck:
      if (st == QpState::kRts) OnAckLocked(frame);
      break;
    case FrameKind::kRnrNak:
      if (st == QpState::kRts) OnRnrNakLocked(frame);
      break;
  }
}

void QueuePair::OnDataLocked(const Frame& frame) {
  ReceiverState& rx = receiver_;
  const int32_t distance = SerialDistance(rx.expected_psn, frame.psn);
  if (distance < 0) {
    // Duplicate: re-acknowledge everything received so far.
    SendControlLocked(FrameKind::kAck, rx.expected_psn - 1);
    return;
  }
  if (distance > 0) return;

  const bool starts =
      frame.seg == Segment::kOnly || frame.seg == Segment::kFirst;
  const bool ends = frame.seg == Segment::kOnly || frame.seg == Segment::kLast;
  if (starts) {
    if (recv_queue_.empty()) {
      SendControlLocked(FrameKind::kRnrNak, rx.expected_psn,
                        attrs_.min_rnr_timer);
      return;
    }
    rx.reassembly.clear();
    rx.in_message = true;
  } else if (!rx.in_message) {
    return;
  }
  rx.reassembly.insert(rx.reassembly.end(), frame.payload.begin(),
                       frame.payload.end());
  ++rx.expected_psn;
  if (!ends) return;

  const RecvWqe& wqe = recv_queue_.front();
  if (!ScatterLocked(wqe, rx.reassembly)) {
    EnterErrorLocked(std::nullopt, WcStatus::kLocalProtectionError);
    return;
  }
  const WorkCompletion wc{wqe.wr_id, WcStatus::kSuccess, WcOpcode::kRecv,
                          static_cast<uint32_t>(rx.reassembly.size()), qpn_};
  recv_queue_.pop_front();
  rx.reassembly.clear();
  rx.in_message = false;
  SendControlLocked(FrameKind::kAck, frame.psn);
  recv_cq_->PushLocked(wc);
}

bool QueuePair::ScatterLocked(const RecvWqe& wqe,
                              std::span<const uint8_t> data) {
  uint64_t room = 0;
  for (const ScatterGatherElement& sge : wqe.sg_list) {
    // The region may have been deregistered since the post.
    if (!ValidateSgeLocked(sge, true).ok()) return false;
    room += sge.length;
  }
  if (data.size() > room) return false;
  size_t offset = 0;
  for (const ScatterGatherElement& sge : wqe.sg_list) {
    const size_t n = std::min<size_t>(sge.length, data.size() - offset);
    if (n == 0) break;
    std::memcpy(reinterpret_cast<void*>(sge.addr), data.data() + offset, n);
    offset += n;
  }
  return true;
}

void QueuePair::OnAckLocked(const Frame& frame) {
  auto& window = sender_.unacked;
  if (window.empty()) return;
  const int32_t distance = SerialDistance(window.front().frame.psn, frame.psn);
  if (distance < 0 || static_cast<size_t>(distance) >= window.size()) return;
  RetireThroughLocked(static_cast<size_t>(distance) + 1);
}

void QueuePair::RetireThroughLocked(size_t count) {
  auto& window = sender_.unacked;
  Psn last = window.front().frame.psn;
  for (size_t i = 0; i < count; ++i) {
    last = window.front().frame.psn;
    window.pop_front();
  }
  while (!send_queue_.empty() &&
         SerialDistance(send_queue_.front().last_psn, last) >= 0) {
    const SendWqe wqe = send_queue_.front();
    send_queue_.pop_front();
    if (wqe.signaled) {
      send_cq_->PushLocked(WorkCompletion{wqe.wr_id, WcStatus::kSuccess,
                                          WcOpcode::kSend, 0, qpn_});
    }
  }
  if (!window.empty() && !sender_.rnr_wait) {
    ArmTimerLocked(window.front().sent_at + TimeoutLocked());
  }
}

void QueuePair::OnRnrNakLocked(const Frame& frame) {
  auto& window = sender_.unacked;
  if (window.empty() || sender_.rnr_wait) return;
  const int32_t distance = SerialDistance(window.front().frame.psn, frame.psn);
  if (distance < 0 || static_cast<size_t>(distance) >= window.size()) return;
  // The NAK acknowledges everything before the PSN it names.
  if (distance > 0) RetireThroughLocked(static_cast<size_t>(distance));

  InFlight& head = window.front();
  if (head.rnr_retries_used >= attrs_.rnr_retry) {
    EnterErrorLocked(WcStatus::kRnrRetryExceeded, std::nullopt);
    return;
  }
  ++head.rnr_retries_used;
  sender_.rnr_wait = true;
  const uint8_t hint = std::min<uint8_t>(frame.rnr_delay_hint, 31);
  sender_.rnr_resume_at =
      fabric_->Now() + fabric_->options().timing.rnr_delay[hint];
  ArmTimerLocked(sender_.rnr_resume_at);
}

void QueuePair::OnTimer(absl::Duration deadline) {
  absl::MutexLock lock(&mu());
  if (!alive_ || armed_timer_ != deadline) return;
  armed_timer_.reset();
  OnTimerLocked(deadline);
}

void QueuePair::OnTimerLocked(absl::Duration now) {
  if (attrs_.qp_state != QpState::kRts) return;
  if (sender_.rnr_wait) {
    if (now < sender_.rnr_resume_at) {
      ArmTimerLocked(sender_.rnr_resume_at);
      return;
    }
    sender_.rnr_wait = false;
    RetransmitWindowLocked(now);
    return;
  }
  auto& window = sender_.unacked;
  if (window.empty()) return;
  const absl::Duration timeout = TimeoutLocked();
  if (timeout == absl::InfiniteDuration()) return;
  InFlight& head = window.front();
  const absl::Duration deadline = head.sent_at + timeout;
  if (now < deadline) {
    ArmTimerLocked(deadline);
    return;
  }
  if (head.retries_used >= attrs_.retry_cnt) {
    EnterErrorLocked(WcStatus::kRetryExceeded, std::nullopt);
    return;
  }
  ++head.retries_used;
  RetransmitWindowLocked(now);
}

void QueuePair::RetransmitWindowLocked(absl::Duration now) {
  if (sender_.unacked.empty()) return;
  for (InFlight& f : sender_.unacked) {
    f.sent_at = now;
    fabric_->Emit(attrs_.ah.dlid, f.frame);
  }
  ArmTimerLocked(now + TimeoutLocked());
}

void QueuePair::EnterErrorLocked(std::optional<WcStatus> head_send_status,
                                 std::optional<WcStatus> head_recv_status) {
  attrs_.qp_state = QpState::kError;
  UnbindLocked();
  if (head_send_status.has_value() && !send_queue_.empty()) {
    send_cq_->PushLocked(WorkCompletion{send_queue_.front().wr_id,
                                        *head_send_status, WcOpcode::kSend, 0,
                                        qpn_});
    send_queue_.pop_front();
  }
  if (head_recv_status.has_value() && !recv_queue_.empty()) {
    recv_cq_->PushLocked(WorkCompletion{recv_queue_.front().wr_id,
                                        *head_recv_status, WcOpcode::kRecv, 0,
                                        qpn_});
    recv_queue_.pop_front();
  }
  FlushLocked();
  sender_ = SenderState{};
  receiver_ = ReceiverState{};
  armed_timer_.reset();
}

void QueuePair::FlushLocked() {
  for (const SendWqe& wqe : send_queue_) {
    send_cq_->PushLocked(WorkCompletion{
        wqe.wr_id, WcStatus::kWorkRequestFlushed, WcOpcode::kSend, 0, qpn_});
  }
  send_queue_.clear();
  for (const RecvWqe& wqe : recv_queue_) {
    recv_cq_->PushLocked(WorkCompletion{
        wqe.wr_id, WcStatus::kWorkRequestFlushed, WcOpcode::kRecv, 0, qpn_});
  }
  recv_queue_.clear();
}

}  // namespace softverbs
