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

#ifndef SOFTVERBS_TYPES_H_
#define SOFTVERBS_TYPES_H_

#include <array>
#include <compare>
#include <cstdint>
#include <optional>

#include "absl/strings/string_view.h"

namespace softverbs {

// Memory region access rights. Values match the verbs ABI.
enum AccessFlags : uint32_t {
  kAccessLocalWrite = 1,
  kAccessRemoteWrite = 1 << 1,
  kAccessRemoteRead = 1 << 2,
  kAccessRemoteAtomic = 1 << 3,
  kAccessMwBind = 1 << 4,
};
inline constexpr uint32_t kAccessDefinedBits = 0x1f;

enum class QpState : uint8_t { kReset, kInit, kRtr, kRts, kError };
inline constexpr std::array<QpState, 5> kAllQpStates = {
    QpState::kReset, QpState::kInit, QpState::kRtr, QpState::kRts,
    QpState::kError};
absl::string_view QpStateName(QpState state);

enum class QpType : uint8_t { kRc, kUc, kUd };

// Bits naming the QpAttributes fields a modify call applies. Bit positions
// follow the verbs ABI; positions not listed here are rejected.
enum QpAttrMask : uint32_t {
  kQpState = 1 << 0,
  kQpAccessFlags = 1 << 3,
  kQpPkeyIndex = 1 << 4,
  kQpPort = 1 << 5,
  kQpAv = 1 << 7,
  kQpPathMtu = 1 << 8,
  kQpTimeout = 1 << 9,
  kQpRetryCnt = 1 << 10,
  kQpRnrRetry = 1 << 11,
  kQpRqPsn = 1 << 12,
  kQpMaxQpRdAtomic = 1 << 13,
  kQpMinRnrTimer = 1 << 15,
  kQpSqPsn = 1 << 16,
  kQpMaxDestRdAtomic = 1 << 17,
  kQpDestQpn = 1 << 20,
};
inline constexpr uint32_t kQpAttrMaskDefinedBits =
    kQpState | kQpAccessFlags | kQpPkeyIndex | kQpPort | kQpAv | kQpPathMtu |
    kQpTimeout | kQpRetryCnt | kQpRnrRetry | kQpRqPsn | kQpMaxQpRdAtomic |
    kQpMinRnrTimer | kQpSqPsn | kQpMaxDestRdAtomic | kQpDestQpn;

// Minimum masks for each forward transition.
inline constexpr uint32_t kResetToInitMask =
    kQpState | kQpPkeyIndex | kQpPort | kQpAccessFlags;
inline constexpr uint32_t kInitToRtrMask =
    kQpState | kQpAv | kQpPathMtu | kQpDestQpn | kQpRqPsn |
    kQpMaxDestRdAtomic | kQpMinRnrTimer;
inline constexpr uint32_t kRtrToRtsMask = kQpState | kQpTimeout | kQpRetryCnt |
                                          kQpRnrRetry | kQpSqPsn |
                                          kQpMaxQpRdAtomic;

enum class PathMtu : uint16_t {
  k256 = 256,
  k512 = 512,
  k1024 = 1024,
  k2048 = 2048,
  k4096 = 4096,
};
std::optional<PathMtu> PathMtuFromBytes(uint32_t bytes);
inline constexpr uint32_t MtuBytes(PathMtu mtu) {
  return static_cast<uint32_t>(mtu);
}

inline constexpr uint32_t kQpnMask = 0xffffff;

// 24-bit packet sequence number with modular arithmetic.
class Psn {
 public:
  static constexpr uint32_t kModulus = 1u << 24;
  static constexpr uint32_t kMask = kModulus - 1;
  static constexpr uint32_t kHalfRange = 1u << 23;

  constexpr Psn() = default;
  constexpr explicit Psn(uint32_t value) : value_(value & kMask) {}

  constexpr uint32_t value() const { return value_; }

  constexpr Psn operator+(uint32_t n) const { return Psn(value_ + n); }
  constexpr Psn operator-(uint32_t n) const { return Psn(value_ - n); }
  constexpr Psn& operator++() {
    value_ = (value_ + 1) & kMask;
    return *this;
  }

  friend constexpr bool operator==(Psn a, Psn b) = default;

 private:
  uint32_t value_ = 0;
};

// Serial-number distance from `from` to `to` in [-2^23, 2^23). Positive means
// `to` lies ahead of `from`.
constexpr int32_t SerialDistance(Psn from, Psn to) {
  const uint32_t d = (to.value() - from.value()) & Psn::kMask;
  return d >= Psn::kHalfRange ? static_cast<int32_t>(d) -
                                    static_cast<int32_t>(Psn::kModulus)
                              : static_cast<int32_t>(d);
}

// 128-bit global endport identifier.
struct Gid {
  std::array<uint8_t, 16> raw{};

  bool IsZero() const;
  static Gid FromGuid(uint64_t guid);

  friend bool operator==(const Gid&, const Gid&) = default;
};

struct AddressHandle {
  uint16_t dlid = 0;
  uint8_t sl = 0;
  uint8_t src_path_bits = 0;
  uint8_t port_num = 0;
  bool is_global = false;
  Gid dgid;

  friend bool operator==(const AddressHandle&, const AddressHandle&) = default;
};

// Queue pair attributes. Only the fields named in a modify mask are applied.
// `timeout` and `min_rnr_timer` hold encoded 5-bit values; the fabric maps
// them to durations.
struct QpAttributes {
  QpState qp_state = QpState::kReset;
  uint16_t pkey_index = 0;
  uint8_t port_num = 0;
  uint32_t qp_access_flags = 0;
  PathMtu path_mtu = PathMtu::k1024;
  uint32_t dest_qp_num = 0;
  uint32_t rq_psn = 0;
  uint32_t sq_psn = 0;
  uint8_t max_dest_rd_atomic = 0;
  uint8_t max_rd_atomic = 0;
  uint8_t min_rnr_timer = 0;
  uint8_t timeout = 0;
  uint8_t retry_cnt = 0;
  uint8_t rnr_retry = 0;
  AddressHandle ah;

  friend bool operator==(const QpAttributes&, const QpAttributes&) = default;
};

struct QueueCaps {
  uint32_t max_send_wr = 1;
  uint32_t max_recv_wr = 1;
  uint32_t max_send_sge = 1;
  uint32_t max_recv_sge = 1;

  friend bool operator==(const QueueCaps&, const QueueCaps&) = default;
};

enum class LinkLayer : uint8_t { kInfiniBand };
enum class PortState : uint8_t { kDown, kActive };

struct PortAttributes {
  uint16_t lid = 0;
  LinkLayer link_layer = LinkLayer::kInfiniBand;
  PortState state = PortState::kDown;
};

}  // namespace softverbs

#endif  // SOFTVERBS_TYPES_H_
