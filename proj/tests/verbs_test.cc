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

#include <bit>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "softverbs/fabric.h"
#include "test_util.h"

namespace softverbs {
namespace {

using ::softverbs::testing::BedOptions;
using ::softverbs::testing::IsOk;
using ::softverbs::testing::StatusIs;
using ::softverbs::testing::TestBed;
using ::softverbs::testing::ValueOrDie;
using ::testing::Each;
using ::testing::Field;
using ::testing::SizeIs;

TEST(DeviceRegistryTest, ListsDevicesInRegistrationOrder) {
  DeviceRegistry registry;
  ASSERT_THAT(registry.AddDevice("mlx_a", 1), IsOk());
  ASSERT_THAT(registry.AddDevice("mlx_b", 2), IsOk());
  const std::vector<Device> devices = registry.GetDeviceList();
  ASSERT_THAT(devices, SizeIs(2));
  EXPECT_EQ(devices[0].name, "mlx_a");
  EXPECT_EQ(devices[1].guid, 2u);
}

TEST(DeviceRegistryTest, NamesAreUnique) {
  DeviceRegistry registry;
  ASSERT_THAT(registry.AddDevice("dev", 1), IsOk());
  EXPECT_THAT(registry.AddDevice("dev", 2),
              StatusIs(absl::StatusCode::kAlreadyExists));
  EXPECT_THAT(registry.AddDevice("", 3),
              StatusIs(absl::StatusCode::kInvalidArgument));
}

TEST(DeviceRegistryTest, OpenUnknownDeviceFails) {
  DeviceRegistry registry;
  EXPECT_THAT(registry.OpenDevice(Device{"nope", 0}),
              StatusIs(absl::StatusCode::kNotFound));
}

class ContextTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_THAT(registry_.AddDevice("sv0", 0xabc), IsOk());
    context_ = ValueOrDie(registry_.OpenDevice(registry_.GetDeviceList()[0]));
  }

  DeviceRegistry registry_;
  std::shared_ptr<Context> context_;
};

TEST_F(ContextTest, PortIsDownUntilAttached) {
  PortAttributes port = ValueOrDie(context_->QueryPort(1));
  EXPECT_EQ(port.state, PortState::kDown);
  EXPECT_EQ(port.lid, 0);

  std::shared_ptr<Fabric> fabric = Fabric::CreateLoopback();
  const uint16_t lid = ValueOrDie(fabric->Attach(*context_, 1));
  port = ValueOrDie(context_->QueryPort(1));
  EXPECT_EQ(port.state, PortState::kActive);
  EXPECT_EQ(port.lid, lid);
  EXPECT_NE(lid, 0);
  EXPECT_EQ(port.link_layer, LinkLayer::kInfiniBand);

  EXPECT_THAT(fabric->Attach(*context_, 1),
              StatusIs(absl::StatusCode::kFailedPrecondition));
  EXPECT_THAT(context_->QueryPort(2),
              StatusIs(absl::StatusCode::kInvalidArgument));
}

TEST_F(ContextTest, LidsAreUniqueAndNonzero) {
  std::shared_ptr<Fabric> fabric = Fabric::CreateLoopback();
  std::vector<std::shared_ptr<Context>> contexts;
  std::set<uint16_t> lids;
  for (int i = 0; i < 50; ++i) {
    contexts.push_back(
        ValueOrDie(registry_.OpenDevice(registry_.GetDeviceList()[0])));
    const uint16_t lid = ValueOrDie(fabric->Attach(*contexts.back(), 1));
    EXPECT_NE(lid, 0);
    EXPECT_TRUE(lids.insert(lid).second) << lid;
  }
}

TEST_F(ContextTest, GidTableHasOneEntry) {
  const Gid gid = ValueOrDie(context_->QueryGid(1, 0));
  EXPECT_EQ(gid, Gid::FromGuid(0xabc));
  EXPECT_THAT(context_->QueryGid(1, 1),
              StatusIs(absl::StatusCode::kOutOfRange));
  EXPECT_THAT(context_->QueryGid(3, 0),
              StatusIs(absl::StatusCode::kInvalidArgument));
}

TEST_F(ContextTest, CloseRejectedWhileChildrenLive) {
  auto pd = ValueOrDie(context_->AllocPd());
  auto channel = ValueOrDie(context_->CreateCompChannel());
  auto cq = ValueOrDie(context_->CreateCq(4, nullptr, channel, 0));
  EXPECT_THAT(context_->Close(),
              StatusIs(absl::StatusCode::kFailedPrecondition));
  ASSERT_THAT(pd->Dealloc(), IsOk());
  EXPECT_THAT(context_->Close(),
              StatusIs(absl::StatusCode::kFailedPrecondition));
  ASSERT_THAT(cq->Destroy(), IsOk());
  ASSERT_THAT(channel->Destroy(), IsOk());
  EXPECT_THAT(context_->Close(), IsOk());
  EXPECT_FALSE(context_->is_open());
  EXPECT_THAT(context_->AllocPd(),
              StatusIs(absl::StatusCode::kFailedPrecondition));
  EXPECT_THAT(context_->Close(),
              StatusIs(absl::StatusCode::kFailedPrecondition));
}

TEST_F(ContextTest, PdHandlesAreUnique) {
  std::set<uint32_t> handles;
  std::vector<std::shared_ptr<ProtectionDomain>> pds;
  for (int i = 0; i < 20; ++i) {
    pds.push_back(ValueOrDie(context_->AllocPd()));
    EXPECT_TRUE(handles.insert(pds.back()->handle()).second);
  }
}

TEST_F(ContextTest, PdDeallocRejectedWhileRegionsLive) {
  auto pd = ValueOrDie(context_->AllocPd());
  std::vector<std::byte> buf(64);
  auto mr = ValueOrDie(pd->RegisterMr(buf, kAccessLocalWrite));
  EXPECT_THAT(pd->Dealloc(), StatusIs(absl::StatusCode::kFailedPrecondition));
  ASSERT_THAT(mr->Deregister(), IsOk());
  EXPECT_THAT(pd->Dealloc(), IsOk());
  EXPECT_THAT(pd->Dealloc(), StatusIs(absl::StatusCode::kFailedPrecondition));
  EXPECT_THAT(pd->RegisterMr(buf, 0),
              StatusIs(absl::StatusCode::kFailedPrecondition));
}

TEST_F(ContextTest, MemoryRegionLifecycle) {
  auto pd = ValueOrDie(context_->AllocPd());
  std::vector<std::byte> buf(4096);
  auto mr = ValueOrDie(pd->RegisterMr(buf, kAccessLocalWrite));
  EXPECT_TRUE(mr->pinned());
  EXPECT_EQ(mr->length(), 4096u);
  EXPECT_EQ(mr->addr(), reinterpret_cast<uint64_t>(buf.data()));
  EXPECT_NE(mr->lkey(), 0u);
  ASSERT_THAT(mr->Deregister(), IsOk());
  EXPECT_FALSE(mr->pinned());
  EXPECT_THAT(mr->Deregister(),
              StatusIs(absl::StatusCode::kFailedPrecondition));
}

TEST_F(ContextTest, MemoryRegionValidation) {
  auto pd = ValueOrDie(context_->AllocPd());
  std::vector<std::byte> buf(16);
  EXPECT_THAT(pd->RegisterMr({}, kAccessLocalWrite),
              StatusIs(absl::StatusCode::kInvalidArgument));
  EXPECT_THAT(pd->RegisterMr(buf, 0x20),
              StatusIs(absl::StatusCode::kInvalidArgument));
  EXPECT_THAT(pd->RegisterMr(buf, kAccessDefinedBits), IsOk());
}

TEST_F(ContextTest, LkeysAreUniqueAcrossDomains) {
  auto pd1 = ValueOrDie(context_->AllocPd());
  auto pd2 = ValueOrDie(context_->AllocPd());
  std::vector<std::byte> buf(16);
  std::set<uint32_t> lkeys;
  std::vector<std::shared_ptr<MemoryRegion>> mrs;
  for (int i = 0; i < 40; ++i) {
    mrs.push_back(ValueOrDie((i % 2 ? pd1 : pd2)->RegisterMr(buf, 0)));
    EXPECT_TRUE(lkeys.insert(mrs.back()->lkey()).second);
  }
}

TEST_F(ContextTest, CqValidation) {
  EXPECT_THAT(context_->CreateCq(0, nullptr, nullptr, 0),
              StatusIs(absl::StatusCode::kInvalidArgument));
  EXPECT_THAT(context_->CreateCq(4, nullptr, nullptr, 1),
              StatusIs(absl::StatusCode::kInvalidArgument));
  int tag = 0;
  auto cq = ValueOrDie(context_->CreateCq(4, &tag, nullptr, 0));
  EXPECT_EQ(cq->capacity(), 4);
  EXPECT_EQ(cq->user_context(), &tag);
  EXPECT_EQ(cq->state(), CqState::kOk);
  EXPECT_THAT(cq->RequestNotify(),
              StatusIs(absl::StatusCode::kFailedPrecondition));
}

TEST_F(ContextTest, ChannelDestroyRejectedWhileCqAttached) {
  auto channel = ValueOrDie(context_->CreateCompChannel());
  auto cq = ValueOrDie(context_->CreateCq(4, nullptr, channel, 0));
  EXPECT_THAT(channel->Destroy(),
              StatusIs(absl::StatusCode::kFailedPrecondition));
  ASSERT_THAT(cq->Destroy(), IsOk());
  EXPECT_THAT(channel->Destroy(), IsOk());
  EXPECT_THAT(context_->CreateCq(4, nullptr, channel, 0),
              StatusIs(absl::StatusCode::kFailedPrecondition));
}

TEST_F(ContextTest, CqFromAnotherContextRejected) {
  auto other = ValueOrDie(registry_.OpenDevice(registry_.GetDeviceList()[0]));
  auto pd = ValueOrDie(context_->AllocPd());
  auto cq = ValueOrDie(context_->CreateCq(4, nullptr, nullptr, 0));
  auto foreign = ValueOrDie(other->CreateCq(4, nullptr, nullptr, 0));
  ProtectionDomain::QpInitAttr init{cq, foreign, {}, QpType::kRc};
  EXPECT_THAT(pd->CreateQp(init),
              StatusIs(absl::StatusCode::kInvalidArgument));
  auto other_channel = ValueOrDie(other->CreateCompChannel());
  EXPECT_THAT(context_->CreateCq(4, nullptr, other_channel, 0),
              StatusIs(absl::StatusCode::kInvalidArgument));
}

TEST_F(ContextTest, QpCreationValidation) {
  auto pd = ValueOrDie(context_->AllocPd());
  auto cq = ValueOrDie(context_->CreateCq(4, nullptr, nullptr, 0));
  ProtectionDomain::QpInitAttr init{cq, cq, {}, QpType::kRc};
  init.cap.max_recv_wr = 0;
  EXPECT_THAT(pd->CreateQp(init),
              StatusIs(absl::StatusCode::kInvalidArgument));
  init.cap = {};
  init.qp_type = QpType::kUd;
  EXPECT_THAT(pd->CreateQp(init), StatusIs(absl::StatusCode::kUnimplemented));
  init.qp_type = QpType::kRc;
  init.send_cq = nullptr;
  EXPECT_THAT(pd->CreateQp(init),
              StatusIs(absl::StatusCode::kInvalidArgument));
}

TEST_F(ContextTest, QpNumbersStartAtBaseAndAreNeverReused) {
  auto pd = ValueOrDie(context_->AllocPd());
  auto cq = ValueOrDie(context_->CreateCq(4, nullptr, nullptr, 0));
  ProtectionDomain::QpInitAttr init{cq, cq, {}, QpType::kRc};
  std::set<uint32_t> seen;
  for (int i = 0; i < 10; ++i) {
    auto qp = ValueOrDie(pd->CreateQp(init));
    if (i == 0) EXPECT_EQ(qp->qp_num(), 0x580048u);
    EXPECT_TRUE(seen.insert(qp->qp_num()).second);
    EXPECT_EQ(qp->state(), QpState::kReset);
    ASSERT_THAT(qp->Destroy(), IsOk());
  }
  EXPECT_THAT(cq->Destroy(), IsOk());
}

TEST_F(ContextTest, CqDestroyRejectedWhileQpAttached) {
  auto pd = ValueOrDie(context_->AllocPd());
  auto cq = ValueOrDie(context_->CreateCq(4, nullptr, nullptr, 0));
  auto qp = ValueOrDie(pd->CreateQp({cq, cq, {}, QpType::kRc}));
  EXPECT_THAT(cq->Destroy(), StatusIs(absl::StatusCode::kFailedPrecondition));
  EXPECT_THAT(pd->Dealloc(), StatusIs(absl::StatusCode::kFailedPrecondition));
  ASSERT_THAT(qp->Destroy(), IsOk());
  EXPECT_THAT(qp->Destroy(), StatusIs(absl::StatusCode::kFailedPrecondition));
  EXPECT_THAT(cq->Destroy(), IsOk());
  EXPECT_THAT(pd->Dealloc(), IsOk());
}

TEST_F(ContextTest, RtrNeedsAnActivePort) {
  auto pd = ValueOrDie(context_->AllocPd());
  auto cq = ValueOrDie(context_->CreateCq(4, nullptr, nullptr, 0));
  auto qp = ValueOrDie(pd->CreateQp({cq, cq, {}, QpType::kRc}));
  QpAttributes attr;
  attr.qp_state = QpState::kInit;
  attr.port_num = 1;
  ASSERT_THAT(qp->Modify(attr, kResetToInitMask), IsOk());
  attr.qp_state = QpState::kRtr;
  attr.ah.dlid = 2;
  attr.ah.port_num = 1;
  EXPECT_THAT(qp->Modify(attr, kInitToRtrMask),
              StatusIs(absl::StatusCode::kFailedPrecondition));
  EXPECT_EQ(qp->state(), QpState::kInit);
}

// --- State machine --------------------------------------------------------

// Written out independently of the library's own tables.
bool ExpectedLegal(QpState from, QpState to) {
  static const std::set<std::pair<QpState, QpState>> kForward = {
      {QpState::kReset, QpState::kInit},
      {QpState::kInit, QpState::kRtr},
      {QpState::kRtr, QpState::kRts}};
  return to == QpState::kReset || to == QpState::kError ||
         kForward.contains({from, to});
}

uint32_t ExpectedRequired(QpState to) {
  switch (to) {
    case QpState::kInit:
      return kQpState | kQpPkeyIndex | kQpPort | kQpAccessFlags;
    case QpState::kRtr:
      return kQpState | kQpAv | kQpPathMtu | kQpDestQpn | kQpRqPsn |
             kQpMaxDestRdAtomic | kQpMinRnrTimer;
    case QpState::kRts:
      return kQpState | kQpTimeout | kQpRetryCnt | kQpRnrRetry | kQpSqPsn |
             kQpMaxQpRdAtomic;
    default:
      return kQpState;
  }
}

class StateMachineTest : public ::testing::Test {
 protected:
  StateMachineTest() : bed_(BedOptions{.connect = false}) {}

  // A fresh QP on side a, driven to `state` along the legal path.
  std::shared_ptr<QueuePair> QpIn(QpState state) {
    Side& a = bed_.a();
    auto qp = ValueOrDie(a.pd->CreateQp(
        {a.send_cq, a.recv_cq, bed_.options().caps, QpType::kRc}));
    if (state == QpState::kReset) return qp;
    if (state == QpState::kError) {
      QpAttributes attr;
      attr.qp_state = QpState::kError;
      testing::CheckOk(qp->Modify(attr, kQpState));
      return qp;
    }
    testing::CheckOk(qp->Modify(bed_.InitAttrs(), kResetToInitMask));
    if (state == QpState::kInit) return qp;
    testing::CheckOk(qp->Modify(bed_.RtrAttrs(bed_.b()), kInitToRtrMask));
    if (state == QpState::kRtr) return qp;
    testing::CheckOk(qp->Modify(bed_.RtsAttrs(a), kRtrToRtsMask));
    return qp;
  }

  // Valid values for every field.
  QpAttributes FullAttrs(QpState to) {
    QpAttributes attr = bed_.RtrAttrs(bed_.b());
    const QpAttributes init = bed_.InitAttrs();
    const QpAttributes rts = bed_.RtsAttrs(bed_.a());
    attr.port_num = init.port_num;
    attr.qp_access_flags = init.qp_access_flags;
    attr.timeout = rts.timeout;
    attr.retry_cnt = rts.retry_cnt;
    attr.rnr_retry = rts.rnr_retry;
    attr.sq_psn = rts.sq_psn;
    attr.max_rd_atomic = rts.max_rd_atomic;
    attr.qp_state = to;
    return attr;
  }

  using Side = testing::Side;
  TestBed bed_;
};

TEST_F(StateMachineTest, AllPairsWithCompleteAndMissingMasks) {
  int cases = 0;
  for (QpState from : kAllQpStates) {
    for (QpState to : kAllQpStates) {
      const uint32_t required = ExpectedRequired(to);
      std::vector<uint32_t> masks = {required};
      // Dropping the state bit would turn the call into a plain
      // attribute update, so only the other required fields are removed.
      for (uint32_t bit = 1; bit != 0; bit <<= 1) {
        if ((required & bit) && bit != kQpState) {
          masks.push_back(required & ~bit);
        }
      }
      for (size_t m = 0; m < masks.size(); ++m) {
        const bool complete = m == 0;
        auto qp = QpIn(from);
        ASSERT_EQ(qp->state(), from);
        const QpAttributes before = qp->Query();
        const absl::Status s = qp->Modify(FullAttrs(to), masks[m]);
        ++cases;
        const bool expect_ok = complete && ExpectedLegal(from, to);
        EXPECT_EQ(s.ok(), expect_ok)
            << QpStateName(from) << "->" << QpStateName(to) << " mask 0x"
            << std::hex << masks[m] << ": " << s;
        if (expect_ok) {
          EXPECT_EQ(qp->state(), to);
        } else {
          EXPECT_EQ(qp->state(), from);
          EXPECT_EQ(qp->Query(), before);
        }
      }
    }
  }
  EXPECT_GE(cases, 25);
}

TEST_F(StateMachineTest, IllegalTransitionIsFailedPrecondition) {
  auto qp = QpIn(QpState::kReset);
  EXPECT_THAT(qp->Modify(FullAttrs(QpState::kRts), kRtrToRtsMask),
              StatusIs(absl::StatusCode::kFailedPrecondition));
  EXPECT_THAT(qp->Modify(FullAttrs(QpState::kInit), kResetToInitMask & ~kQpPort),
              StatusIs(absl::StatusCode::kInvalidArgument));
}

TEST_F(StateMachineTest, EmptyAndUndefinedMasksRejected) {
  auto qp = QpIn(QpState::kInit);
  EXPECT_THAT(qp->Modify(FullAttrs(QpState::kInit), 0),
              StatusIs(absl::StatusCode::kInvalidArgument));
  EXPECT_THAT(qp->Modify(FullAttrs(QpState::kInit), 1u << 2),
              StatusIs(absl::StatusCode::kInvalidArgument));
}

TEST_F(StateMachineTest, LibraryTablesAgreeWithReference) {
  for (QpState from : kAllQpStates) {
    for (QpState to : kAllQpStates) {
      EXPECT_EQ(IsLegalTransition(from, to), ExpectedLegal(from, to));
    }
    EXPECT_EQ(RequiredMask(from), ExpectedRequired(from));
  }
}

TEST_F(StateMachineTest, PostSendRejectedOutsideRts) {
  Side& a = bed_.a();
  for (QpState st : kAllQpStates) {
    auto qp = QpIn(st);
    SendWorkRequest wr;
    wr.wr_id = 1;
    wr.sg_list = {a.Sge(0, 8)};
    size_t bad = 99;
    const absl::Status s =
        qp->PostSend(std::span<const SendWorkRequest>(&wr, 1), &bad);
    if (st == QpState::kRts) {
      EXPECT_THAT(s, IsOk());
    } else {
      EXPECT_THAT(s, StatusIs(absl::StatusCode::kFailedPrecondition))
          << QpStateName(st);
      EXPECT_EQ(bad, 0u);
    }
  }
}

TEST_F(StateMachineTest, PostRecvAllowedFromInitThroughRts) {
  Side& a = bed_.a();
  for (QpState st : kAllQpStates) {
    auto qp = QpIn(st);
    ReceiveWorkRequest wr{1, {a.Sge(0, 8)}};
    const bool allowed = st == QpState::kInit || st == QpState::kRtr ||
                         st == QpState::kRts;
    EXPECT_EQ(qp->PostRecv(wr).ok(), allowed) << QpStateName(st);
  }
}

TEST_F(StateMachineTest, ErrorFlushesOutstandingWork) {
  Side& a = bed_.a();
  auto qp = QpIn(QpState::kRtr);
  for (uint64_t id = 1; id <= 3; ++id) {
    ASSERT_THAT(qp->PostRecv(ReceiveWorkRequest{id, {a.Sge(0, 8)}}), IsOk());
  }
  QpAttributes attr;
  attr.qp_state = QpState::kError;
  ASSERT_THAT(qp->Modify(attr, kQpState), IsOk());
  const std::vector<WorkCompletion> wcs = TestBed::Drain(*a.recv_cq);
  ASSERT_THAT(wcs, SizeIs(3));
  for (size_t i = 0; i < wcs.size(); ++i) {
    EXPECT_EQ(wcs[i].wr_id, i + 1);
    EXPECT_EQ(wcs[i].status, WcStatus::kWorkRequestFlushed);
    EXPECT_EQ(wcs[i].opcode, WcOpcode::kRecv);
    EXPECT_EQ(wcs[i].qp_num, qp->qp_num());
  }
}

TEST_F(StateMachineTest, ResetDiscardsWorkSilentlyAndKeepsAttributes) {
  Side& a = bed_.a();
  auto qp = QpIn(QpState::kRts);
  ASSERT_THAT(qp->PostRecv(ReceiveWorkRequest{1, {a.Sge(0, 8)}}), IsOk());
  const QpAttributes before = qp->Query();
  QpAttributes attr;
  attr.qp_state = QpState::kReset;
  ASSERT_THAT(qp->Modify(attr, kQpState), IsOk());
  EXPECT_THAT(TestBed::Drain(*a.recv_cq), SizeIs(0));
  EXPECT_EQ(qp->Introspect().recv_queue_depth, 0u);
  QpAttributes after = qp->Query();
  EXPECT_EQ(after.qp_state, QpState::kReset);
  after.qp_state = before.qp_state;
  EXPECT_EQ(after, before);
}

// Property: a modify without the state bit applies exactly the masked
// fields, or (for an out-of-range value) changes nothing at all.
TEST_F(StateMachineTest, PropertyMaskedFieldsOnly) {
  std::mt19937_64 gen(7);
  static constexpr uint32_t kFieldBits[] = {
      kQpAccessFlags, kQpPkeyIndex, kQpPort,     kQpAv,
      kQpPathMtu,     kQpTimeout,   kQpRetryCnt, kQpRnrRetry,
      kQpRqPsn,       kQpMaxQpRdAtomic, kQpMinRnrTimer, kQpSqPsn,
      kQpMaxDestRdAtomic, kQpDestQpn};
  static constexpr PathMtu kMtus[] = {PathMtu::k256, PathMtu::k512,
                                      PathMtu::k1024, PathMtu::k2048,
                                      PathMtu::k4096};
  auto qp = QpIn(QpState::kInit);
  for (int iter = 0; iter < 2000; ++iter) {
    uint32_t mask = 0;
    for (uint32_t bit : kFieldBits) {
      if (gen() % 3 == 0) mask |= bit;
    }
    if (mask == 0) mask = kQpTimeout;
    const bool make_invalid = gen() % 4 == 0;

    QpAttributes attr;
    attr.qp_access_flags = static_cast<uint32_t>(gen()) & kAccessDefinedBits;
    attr.pkey_index = static_cast<uint16_t>(gen() % 64);
    attr.port_num = 1;
    attr.ah.dlid = static_cast<uint16_t>(gen());
    attr.ah.sl = static_cast<uint8_t>(gen() % 16);
    attr.ah.port_num = 1;
    attr.path_mtu = kMtus[gen() % 5];
    attr.timeout = static_cast<uint8_t>(gen() % 32);
    attr.retry_cnt = static_cast<uint8_t>(gen() % 8);
    attr.rnr_retry = static_cast<uint8_t>(gen() % 8);
    attr.rq_psn = static_cast<uint32_t>(gen()) & 0xffffff;
    attr.sq_psn = static_cast<uint32_t>(gen()) & 0xffffff;
    attr.max_rd_atomic = static_cast<uint8_t>(gen() % 16);
    attr.max_dest_rd_atomic = static_cast<uint8_t>(gen() % 16);
    attr.min_rnr_timer = static_cast<uint8_t>(gen() % 32);
    attr.dest_qp_num = static_cast<uint32_t>(gen()) & 0xffffff;

    if (make_invalid) {
      // Corrupt one masked field beyond its range.
      std::vector<uint32_t> present;
      for (uint32_t bit : kFieldBits) {
        if (mask & bit) present.push_back(bit);
      }
      switch (present[gen() % present.size()]) {
        case kQpAccessFlags: attr.qp_access_flags = 0x40; break;
        case kQpPort: attr.port_num = 9; break;
        case kQpAv: attr.ah.sl = 16; break;
        case kQpPathMtu: attr.path_mtu = static_cast<PathMtu>(300); break;
        case kQpTimeout: attr.timeout = 32; break;
        case kQpRetryCnt: attr.retry_cnt = 8; break;
        case kQpRnrRetry: attr.rnr_retry = 8; break;
        case kQpRqPsn: attr.rq_psn = 1u << 24; break;
        case kQpMinRnrTimer: attr.min_rnr_timer = 32; break;
        case kQpSqPsn: attr.sq_psn = 1u << 24; break;
        case kQpDestQpn: attr.dest_qp_num = 1u << 24; break;
        default: mask |= kQpTimeout; attr.timeout = 40; break;
      }
    }

    const QpAttributes before = qp->Query();
    QpAttributes expected = before;
    if (mask & kQpAccessFlags) expected.qp_access_flags = attr.qp_access_flags;
    if (mask & kQpPkeyIndex) expected.pkey_index = attr.pkey_index;
    if (mask & kQpPort) expected.port_num = attr.port_num;
    if (mask & kQpAv) expected.ah = attr.ah;
    if (mask & kQpPathMtu) expected.path_mtu = attr.path_mtu;
    if (mask & kQpTimeout) expected.timeout = attr.timeout;
    if (mask & kQpRetryCnt) expected.retry_cnt = attr.retry_cnt;
    if (mask & kQpRnrRetry) expected.rnr_retry = attr.rnr_retry;
    if (mask & kQpRqPsn) expected.rq_psn = attr.rq_psn;
    if (mask & kQpMaxQpRdAtomic) expected.max_rd_atomic = attr.max_rd_atomic;
    if (mask & kQpMinRnrTimer) expected.min_rnr_timer = attr.min_rnr_timer;
    if (mask & kQpSqPsn) expected.sq_psn = attr.sq_psn;
    if (mask & kQpMaxDestRdAtomic) {
      expected.max_dest_rd_atomic = attr.max_dest_rd_atomic;
    }
    if (mask & kQpDestQpn) expected.dest_qp_num = attr.dest_qp_num;

    const absl::Status s = qp->Modify(attr, mask);
    if (make_invalid) {
      ASSERT_THAT(s, StatusIs(absl::StatusCode::kInvalidArgument))
          << "mask 0x" << std::hex << mask;
      ASSERT_EQ(qp->Query(), before);
    } else {
      ASSERT_THAT(s, IsOk()) << "mask 0x" << std::hex << mask;
      ASSERT_EQ(qp->Query(), expected);
    }
    ASSERT_EQ(qp->state(), QpState::kInit);
  }
}

TEST_F(StateMachineTest, NonGlobalAddressMustHaveZeroDgid) {
  auto qp = QpIn(QpState::kInit);
  QpAttributes attr = FullAttrs(QpState::kRtr);
  attr.ah.dgid = Gid::FromGuid(5);
  EXPECT_THAT(qp->Modify(attr, kInitToRtrMask),
              StatusIs(absl::StatusCode::kInvalidArgument));
  attr.ah.is_global = true;
  EXPECT_THAT(qp->Modify(attr, kInitToRtrMask), IsOk());
}

}  // namespace
}  // namespace softverbs
