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

#include "softverbs/pingpong.h"

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "absl/status/status.h"
#include "absl/strings/match.h"
#include "absl/strings/str_split.h"
#include "absl/time/time.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "softverbs/fabric.h"
#include "softverbs/verbs.h"
#include "pingpong_harness.h"
#include "test_util.h"

namespace softverbs {
namespace {

using ::softverbs::testing::Harness;
using ::softverbs::testing::IsOk;
using ::softverbs::testing::StatusIs;
using ::softverbs::testing::ValueOrDie;
using ::testing::ElementsAreArray;
using ::testing::HasSubstr;
using ::testing::SizeIs;

PingpongConfig Small(int iters, int rx_depth = 8, uint32_t size = 4096) {
  PingpongConfig config;
  config.iters = iters;
  config.rx_depth = rx_depth;
  config.size = size;
  return config;
}

TEST(PingpongContextTest, ValidatesConfig) {
  DeviceRegistry registry;
  ASSERT_THAT(registry.AddDevice("sv0", 1), IsOk());
  auto ctx = ValueOrDie(registry.OpenDevice(registry.GetDeviceList()[0]));
  EXPECT_THAT(PingpongContext::Create(ctx, Small(1, 0), true),
              StatusIs(absl::StatusCode::kInvalidArgument));
  EXPECT_THAT(PingpongContext::Create(ctx, Small(0), true),
              StatusIs(absl::StatusCode::kInvalidArgument));
  EXPECT_THAT(PingpongContext::Create(ctx, Small(1, 8, 0), true),
              StatusIs(absl::StatusCode::kInvalidArgument));
}

TEST(PingpongContextTest, SetupLeavesQpInInitWithReceivesPosted) {
  DeviceRegistry registry;
  ASSERT_THAT(registry.AddDevice("sv0", 1), IsOk());
  auto ctx = ValueOrDie(registry.OpenDevice(registry.GetDeviceList()[0]));
  std::shared_ptr<Fabric> fabric = Fabric::CreateLoopback();
  const uint16_t lid = ValueOrDie(fabric->Attach(*ctx, 1));
  auto pp = ValueOrDie(PingpongContext::Create(ctx, Small(1, 5), false));
  EXPECT_EQ(pp->qp().state(), QpState::kInit);
  EXPECT_EQ(pp->initial_routs(), 5);
  EXPECT_EQ(pp->qp().Introspect().recv_queue_depth, 5u);
  EXPECT_EQ(pp->qp().caps(), (QueueCaps{1, 5, 1, 1}));
  EXPECT_EQ(pp->cq().capacity(), 6);
  EXPECT_EQ(pp->local().lid, lid);
  EXPECT_EQ(pp->local().qpn, pp->qp().qp_num());
  EXPECT_LE(pp->local().psn, 0xffffffu);
  EXPECT_TRUE(pp->local().gid.IsZero());
  EXPECT_EQ(reinterpret_cast<uintptr_t>(pp->buffer().data()) %
                static_cast<uintptr_t>(sysconf(_SC_PAGESIZE)),
            0u);
  EXPECT_THAT(pp->Destroy(), IsOk());
  EXPECT_THAT(ctx->Close(), IsOk());
}

TEST(PingpongContextTest, SeededPsnIsReproducible) {
  DeviceRegistry registry;
  ASSERT_THAT(registry.AddDevice("sv0", 1), IsOk());
  auto ctx = ValueOrDie(registry.OpenDevice(registry.GetDeviceList()[0]));
  PingpongConfig config = Small(1);
  config.psn_seed = 99;
  auto first = ValueOrDie(PingpongContext::Create(ctx, config, true));
  auto second = ValueOrDie(PingpongContext::Create(ctx, config, true));
  EXPECT_EQ(first->local().psn, second->local().psn);
  EXPECT_NE(first->local().qpn, second->local().qpn);
}

TEST(PingpongContextTest, GidIndexOutOfRange) {
  DeviceRegistry registry;
  ASSERT_THAT(registry.AddDevice("sv0", 1), IsOk());
  auto ctx = ValueOrDie(registry.OpenDevice(registry.GetDeviceList()[0]));
  PingpongConfig config = Small(1);
  config.gid_index = 1;
  EXPECT_THAT(PingpongContext::Create(ctx, config, true),
              StatusIs(absl::StatusCode::kOutOfRange));
}

TEST(PingpongLoopTest, CountsMatchIterations) {
  for (int iters : {1, 2, 7, 100}) {
    Harness h(Small(iters));
    ASSERT_THAT(h.Run(), IsOk()) << iters;
    EXPECT_EQ(h.server_loop().rcnt(), iters);
    EXPECT_EQ(h.server_loop().scnt(), iters);
    EXPECT_EQ(h.client_loop().rcnt(), iters);
    EXPECT_EQ(h.client_loop().scnt(), iters);
    EXPECT_EQ(h.client_loop().stats().bytes, uint64_t{4096} * iters * 2);
  }
}

TEST(PingpongLoopTest, SingleIterationIsOneMessageEachWay) {
  PingpongConfig config = Small(1, 4, 1000);
  Harness h(config);
  h.fabric().EnableTrace(true);
  ASSERT_THAT(h.Run(), IsOk());
  int data = 0;
  for (const TraceRecord& r : h.fabric().Trace()) {
    data += r.frame.kind == FrameKind::kData;
  }
  EXPECT_EQ(data, 2);
}

TEST(PingpongLoopTest, EventModeMatchesPollingMode) {
  PingpongConfig polled = Small(50, 4);
  PingpongConfig evented = polled;
  evented.use_events = true;
  FabricOptions options;
  options.faults = {0.1, 0.05, 0.1, 21};
  Harness a(polled, options);
  Harness b(evented, options);
  a.fabric().EnableTrace(true);
  b.fabric().EnableTrace(true);
  ASSERT_THAT(a.Run(), IsOk());
  ASSERT_THAT(b.Run(), IsOk());
  EXPECT_EQ(b.client_loop().rcnt(), 50);
  EXPECT_EQ(b.server_loop().scnt(), 50);
  EXPECT_EQ(a.fabric().Trace(), b.fabric().Trace());
  EXPECT_EQ(b.server().cq().unacked_events(), 0);
  EXPECT_EQ(b.client().cq().unacked_events(), 0);
}

// Reference model of the receive-replenish rule.
std::vector<RecvObservation> ExpectedObservations(int rx_depth, int iters) {
  std::vector<RecvObservation> out;
  int routs = rx_depth;
  for (int i = 0; i < iters; ++i) {
    RecvObservation obs;
    obs.routs_after_decrement = --routs;
    if (routs <= 1) {
      obs.reposted = rx_depth - routs;
      routs = rx_depth;
    }
    obs.routs_after = routs;
    out.push_back(obs);
  }
  return out;
}

TEST(PingpongLoopTest, ReceiveReplenishFollowsModel) {
  for (int rx_depth : {1, 2, 3, 8, 33}) {
    std::vector<RecvObservation> server_obs;
    std::vector<RecvObservation> client_obs;
    Harness h(Small(40, rx_depth, 64));
    ASSERT_THAT(h.Run([&](const RecvObservation& o) { server_obs.push_back(o); },
                      [&](const RecvObservation& o) { client_obs.push_back(o); }),
                IsOk())
        << rx_depth;
    const std::vector<RecvObservation> want = ExpectedObservations(rx_depth, 40);
    EXPECT_EQ(server_obs, want) << rx_depth;
    EXPECT_EQ(client_obs, want) << rx_depth;
    for (const RecvObservation& o : client_obs) {
      EXPECT_GE(o.routs_after, 1);
      EXPECT_LE(o.routs_after, rx_depth);
    }
  }
}

// Both sides use one buffer for sending and receiving, so the server's
// reply echoes what the client sent.
TEST(PingpongLoopTest, PayloadBytes) {
  Harness h(Small(3, 4, 16));
  EXPECT_EQ(h.client().buffer()[0], std::byte{0x7b});
  EXPECT_EQ(h.server().buffer()[0], std::byte{0x7c});
  std::vector<std::byte> client_first;
  std::vector<std::byte> server_first;
  ASSERT_THAT(
      h.Run(
          [&](const RecvObservation&) {
            if (server_first.empty()) {
              auto b = h.server().buffer();
              server_first.assign(b.begin(), b.end());
            }
          },
          [&](const RecvObservation&) {
            if (client_first.empty()) {
              auto b = h.client().buffer();
              client_first.assign(b.begin(), b.end());
            }
          }),
      IsOk());
  EXPECT_THAT(server_first, ::testing::Each(std::byte{0x7b}));
  EXPECT_THAT(client_first, ::testing::Each(std::byte{0x7b}));
}

TEST(PingpongLoopTest, GlobalAddressingWorks) {
  PingpongConfig config = Small(5);
  config.gid_index = 0;
  Harness h(config);
  EXPECT_FALSE(h.client().local().gid.IsZero());
  EXPECT_EQ(h.client().qp().Query().ah.is_global, true);
  ASSERT_THAT(h.Run(), IsOk());
}

TEST(ReportTest, AddressLine) {
  DestinationInfo d{1, 0x580048, 0x2a166f, Gid{}};
  EXPECT_EQ(FormatAddress("local", d),
            "  local address:  LID 0x0001, QPN 0x580048, PSN 0x2a166f, GID ::\n");
  EXPECT_EQ(FormatAddress("remote", d),
            "  remote address: LID 0x0001, QPN 0x580048, PSN 0x2a166f, GID ::\n");
}

TEST(ReportTest, GidText) {
  EXPECT_EQ(FormatGid(Gid{}), "::");
  EXPECT_EQ(FormatGid(Gid::FromGuid(0x0002c90300a1b2c3)),
            "fe80::2:c903:a1:b2c3");
}

TEST(ReportTest, StatsLines) {
  EXPECT_EQ(FormatStats({8192000, 1000, absl::Seconds(2)}),
            "8192000 bytes in 2.00 seconds = 32.77 Mbit/sec\n"
            "1000 iters in 2.00 seconds = 2000.00 usec/iter\n");
  EXPECT_EQ(FormatStats({100, 4, absl::ZeroDuration()}),
            "100 bytes in 0.00 seconds = 800.00 Mbit/sec\n"
            "4 iters in 0.00 seconds = 0.25 usec/iter\n");
}

TEST(LoopbackPingpongTest, PrintsBothReports) {
  std::ostringstream out;
  ASSERT_THAT(RunLoopbackPingpong(Small(1000, 500), {}, out), IsOk());
  const std::vector<std::string> lines =
      absl::StrSplit(out.str(), '\n', absl::SkipEmpty());
  ASSERT_THAT(lines, SizeIs(8));
  const std::regex address(
      "  (local|remote) address: +LID 0x[0-9a-f]{4}, QPN 0x[0-9a-f]{6}, "
      "PSN 0x[0-9a-f]{6}, GID .+");
  const std::regex bytes(
      "8192000 bytes in [0-9]+\\.[0-9]{2} seconds = [0-9]+\\.[0-9]{2} "
      "Mbit/sec");
  const std::regex iters(
      "1000 iters in [0-9]+\\.[0-9]{2} seconds = [0-9]+\\.[0-9]{2} usec/iter");
  for (int side = 0; side < 2; ++side) {
    EXPECT_TRUE(std::regex_match(lines[side * 4 + 0], address));
    EXPECT_THAT(lines[side * 4 + 0], HasSubstr("local address"));
    EXPECT_TRUE(std::regex_match(lines[side * 4 + 1], address));
    EXPECT_THAT(lines[side * 4 + 1], HasSubstr("remote address"));
    EXPECT_TRUE(std::regex_match(lines[side * 4 + 2], bytes))
        << lines[side * 4 + 2];
    EXPECT_TRUE(std::regex_match(lines[side * 4 + 3], iters))
        << lines[side * 4 + 3];
  }
}

TEST(LoopbackPingpongTest, SurvivesFaults) {
  FabricOptions options;
  options.faults = {0.1, 0.05, 0.1, 3};
  PingpongConfig config = Small(200, 16);
  config.use_events = true;
  std::ostringstream out;
  EXPECT_THAT(RunLoopbackPingpong(config, options, out), IsOk());
  EXPECT_THAT(out.str(), HasSubstr("200 iters in"));
}

uint16_t FreePort() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

TEST(SocketPingpongTest, ServerAndClientThreads) {
  FabricConfig fabric;
  fabric.endpoints = {{1, "127.0.0.1", FreePort()},
                      {2, "127.0.0.1", FreePort()}};
  PingpongConfig server_config = Small(100, 16, 2048);
  server_config.port = FreePort();
  PingpongConfig client_config = server_config;
  client_config.server_name = "127.0.0.1";

  std::ostringstream server_out;
  absl::Status server_status;
  std::thread server([&] {
    server_status = RunSocketPingpong(server_config, fabric, server_out);
  });
  // The client makes a single connection attempt, like the original tool.
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  std::ostringstream client_out;
  const absl::Status client_status =
      RunSocketPingpong(client_config, fabric, client_out);
  server.join();
  ASSERT_THAT(client_status, IsOk());
  ASSERT_THAT(server_status, IsOk());
  EXPECT_THAT(server_out.str(), HasSubstr("409600 bytes in"));
  EXPECT_THAT(client_out.str(), HasSubstr("100 iters in"));
  EXPECT_THAT(server_out.str(), HasSubstr("  local address:  LID 0x0001"));
  EXPECT_THAT(client_out.str(), HasSubstr("  remote address: LID 0x0001"));
}

}  // namespace
}  // namespace softverbs
