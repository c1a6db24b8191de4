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

#ifndef SOFTVERBS_FRAME_H_
#define SOFTVERBS_FRAME_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"
#include "softverbs/types.h"

namespace softverbs {

enum class FrameKind : uint8_t { kData = 0, kAck = 1, kRnrNak = 2 };
enum class Segment : uint8_t { kOnly = 0, kFirst = 1, kMiddle = 2, kLast = 3 };

absl::string_view FrameKindName(FrameKind kind);

// The unit carried by the fabric. Wire layout, big-endian:
//
//   magic 0x5642 (2) | kind (1) | seg (1) | dest_qpn (3) | psn (3) |
//   payload_len (4) | payload
//
// RNR_NAK frames carry `rnr_delay_hint` in the low byte of payload_len and
// no payload bytes. ACK frames carry neither.
struct Frame {
  FrameKind kind = FrameKind::kData;
  Segment seg = Segment::kOnly;
  uint32_t dest_qpn = 0;
  Psn psn;
  std::vector<uint8_t> payload;
  uint8_t rnr_delay_hint = 0;

  friend bool operator==(const Frame&, const Frame&) = default;
};

inline constexpr uint16_t kFrameMagic = 0x5642;
inline constexpr size_t kFrameHeaderSize = 14;
inline constexpr size_t kMaxFramePayload = 4096;

// Fails with InvalidArgument when the payload exceeds `max_payload`, when an
// ACK/RNR_NAK carries payload bytes, or when qpn does not fit in 24 bits.
absl::StatusOr<std::vector<uint8_t>> EncodeFrame(
    const Frame& frame, size_t max_payload = kMaxFramePayload);

// Error codes: InvalidArgument for bad magic or unknown kind/segment,
// OutOfRange for truncated input, DataLoss for trailing bytes.
absl::StatusOr<Frame> DecodeFrame(std::span<const uint8_t> bytes);

// Number of bytes that follow a frame header on a stream.
absl::StatusOr<size_t> FrameBodyLength(std::span<const uint8_t> header);

// Splits a message into DATA frames of at most `mtu` bytes with consecutive
// PSNs. An empty message produces a single ONLY frame.
std::vector<Frame> SegmentMessage(std::span<const uint8_t> message,
                                  uint32_t mtu, uint32_t dest_qpn,
                                  Psn first_psn);

std::string DescribeFrame(const Frame& frame);

}  // namespace softverbs

#endif  // SOFTVERBS_FRAME_H_
