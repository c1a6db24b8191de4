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

#include "softverbs/frame.h"

#include <algorithm>

#include "absl/status/status.h"
#include "absl/strings/str_format.h"

namespace softverbs {
namespace {

void PutU24(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t GetU24(std::span<const uint8_t> in) {
  return (uint32_t{in[0]} << 16) | (uint32_t{in[1]} << 8) | uint32_t{in[2]};
}

uint32_t GetU32(std::span<const uint8_t> in) {
  return (uint32_t{in[0]} << 24) | (uint32_t{in[1]} << 16) |
         (uint32_t{in[2]} << 8) | uint32_t{in[3]};
}

struct Header {
  FrameKind kind;
  Segment seg;
  uint32_t dest_qpn;
  uint32_t psn;
  uint32_t length_field;
};

absl::StatusOr<Header> ParseHeader(std::span<const uint8_t> bytes) {
  if (bytes.size() < 2) {
    return absl::OutOfRangeError("truncated frame header");
  }
  const uint16_t magic = static_cast<uint16_t>((bytes[0] << 8) | bytes[1]);
  if (magic != kFrameMagic) {
    return absl::InvalidArgumentError(
        absl::StrFormat("bad magic 0x%04x", magic));
  }
  if (bytes.size() < kFrameHeaderSize) {
    return absl::OutOfRangeError("truncated frame header");
  }
  Header h;
  if (bytes[2] > static_cast<uint8_t>(FrameKind::kRnrNak)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("unknown frame kind %d", bytes[2]));
  }
  if (bytes[3] > static_cast<uint8_t>(Segment::kLast)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("unknown segment marker %d", bytes[3]));
  }
  h.kind = static_cast<FrameKind>(bytes[2]);
  h.seg = static_cast<Segment>(bytes[3]);
  h.dest_qpn = GetU24(bytes.subspan(4, 3));
  h.psn = GetU24(bytes.subspan(7, 3));
  h.length_field = GetU32(bytes.subspan(10, 4));
  if (h.kind == FrameKind::kData) {
    if (h.length_field > kMaxFramePayload) {
      return absl::InvalidArgumentError(
          absl::StrFormat("payload length %u exceeds %u", h.length_field,
                          kMaxFramePayload));
    }
  } else if (h.kind == FrameKind::kAck ? h.length_field != 0
                                       : h.length_field > 0xff) {
    return absl::InvalidArgumentError("malformed control frame length");
  }
  return h;
}

}  // namespace

absl::string_view FrameKindName(FrameKind kind) {
  switch (kind) {
    case FrameKind::kData:
      return "DATA";
    case FrameKind::kAck:
      return "ACK";
    case FrameKind::kRnrNak:
      return "RNR_NAK";
  }
  return "UNKNOWN";
}

absl::StatusOr<std::vector<uint8_t>> EncodeFrame(const Frame& frame,
                                                 size_t max_payload) {
  if (frame.dest_qpn > kQpnMask) {
    return absl::InvalidArgumentError("dest_qpn exceeds 24 bits");
  }
  if (frame.kind != FrameKind::kData && !frame.payload.empty()) {
    return absl::InvalidArgumentError("control frames carry no payload");
  }
  const size_t limit = std::min(max_payload, kMaxFramePayload);
  if (frame.payload.size() > limit) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "payload of %u bytes exceeds limit %u", frame.payload.size(), limit));
  }
  std::vector<uint8_t> out;
  out.reserve(kFrameHeaderSize + frame.payload.size());
  out.push_back(static_cast<uint8_t>(kFrameMagic >> 8));
  out.push_back(static_cast<uint8_t>(kFrameMagic & 0xff));
  out.push_back(static_cast<uint8_t>(frame.kind));
  out.push_back(static_cast<uint8_t>(frame.seg));
  PutU24(out, frame.dest_qpn);
  PutU24(out, frame.psn.value());
  const uint32_t length_field =
      frame.kind == FrameKind::kRnrNak
          ? frame.rnr_delay_hint
          : static_cast<uint32_t>(frame.payload.size());
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<uint8_t>(length_field >> shift));
  }
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

absl::StatusOr<Frame> DecodeFrame(std::span<const uint8_t> bytes) {
  absl::StatusOr<Header> header = ParseHeader(bytes);
  if (!header.ok()) return header.status();

  Frame frame;
  frame.kind = header->kind;
  frame.seg = header->seg;
  frame.dest_qpn = header->dest_qpn;
  frame.psn = Psn(header->psn);
  size_t body = 0;
  if (frame.kind == FrameKind::kData) {
    body = header->length_field;
  } else if (frame.kind == FrameKind::kRnrNak) {
    frame.rnr_delay_hint = static_cast<uint8_t>(header->length_field);
  }
  const size_t available = bytes.size() - kFrameHeaderSize;
  if (available < body) {
    return absl::OutOfRangeError(absl::StrFormat(
        "truncated payload: have %u of %u bytes", available, body));
  }
  if (available > body) {
    return absl::DataLossError(
        absl::StrFormat("%u trailing bytes after frame", available - body));
  }
  auto payload = bytes.subspan(kFrameHeaderSize);
  frame.payload.assign(payload.begin(), payload.end());
  return frame;
}

absl::StatusOr<size_t> FrameBodyLength(std::span<const uint8_t> header) {
  absl::StatusOr<Header> h = ParseHeader(header);
  if (!h.ok()) return h.status();
  return h->kind == FrameKind::kData ? size_t{h->length_field} : size_t{0};
}

std::vector<Frame> SegmentMessage(std::span<const uint8_t> message,
                                  uint32_t mtu, uint32_t dest_qpn,
                                  Psn first_psn) {
  const size_t count =
      message.empty() ? 1 : (message.size() + mtu - 1) / mtu;
  std::vector<Frame> frames;
  frames.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    Frame frame;
    frame.kind = FrameKind::kData;
    if (count == 1) {
      frame.seg = Segment::kOnly;
    } else if (i == 0) {
      frame.seg = Segment::kFirst;
    } else if (i + 1 == count) {
      frame.seg = Segment::kLast;
    } else {
      frame.seg = Segment::kMiddle;
    }
    frame.dest_qpn = dest_qpn;
    frame.psn = first_psn + static_cast<uint32_t>(i);
    const size_t begin = i * mtu;
    const size_t end = std::min(message.size(), begin + mtu);
    if (begin < end) {
      frame.payload.assign(message.begin() + begin, message.begin() + end);
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::string DescribeFrame(const Frame& frame) {
  static constexpr absl::string_view kSegNames[] = {"ONLY", "FIRST", "MIDDLE",
                                                   "LAST"};
  return absl::StrFormat("%s qpn=0x%06x psn=0x%06x seg=%s len=%u hint=%u",
                         FrameKindName(frame.kind), frame.dest_qpn,
                         frame.psn.value(),
                         kSegNames[static_cast<int>(frame.seg)],
                         frame.payload.size(), frame.rnr_delay_hint);
}

}  // namespace softverbs
