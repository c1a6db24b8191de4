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

// Reliable-connection ping-pong over the emulated fabric, with the command
// line and report of ibv_rc_pingpong.
//
//   softverbs_pingpong                       # both sides, in-process
//   softverbs_pingpong --fabric socket       # server
//   softverbs_pingpong --fabric socket HOST  # client

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "softverbs/destination.h"
#include "softverbs/fabric.h"
#include "softverbs/pingpong.h"
#include "softverbs/transport.h"
#include "softverbs/types.h"

namespace {

int Fail(const absl::Status& status) {
  std::cerr << status.message() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  using softverbs::PingpongConfig;

  CLI::App app{"Ping-pong over an emulated RC queue pair"};
  PingpongConfig config;
  int ib_port = config.ib_port;
  int sl = config.sl;
  int mtu = 1024;
  std::string faults;
  std::string fabric_mode = "loopback";
  std::string fabric_config_path;
  std::optional<uint64_t> psn_seed;

  app.add_option("servername", config.server_name,
                 "Server to connect to (socket fabric only)");
  app.add_option("-p,--port", config.port,
                 "Listen on / connect to this port for the exchange")
      ->capture_default_str();
  app.add_option("-i,--ib-port", ib_port, "Use this port of the device")
      ->capture_default_str()
      ->check(CLI::Range(1, 254));
  app.add_option("-s,--size", config.size, "Size of message to exchange")
      ->capture_default_str()
      ->check(CLI::Range(1u, 1u << 30));
  app.add_option("-r,--rx-depth", config.rx_depth,
                 "Number of receives to post at a time")
      ->capture_default_str()
      ->check(CLI::Range(1, 1 << 16));
  app.add_option("-n,--iters", config.iters, "Number of exchanges")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("-l,--sl", sl, "Service level value")
      ->capture_default_str()
      ->check(CLI::Range(0, 15));
  app.add_option("-m,--mtu", mtu, "Path MTU")
      ->capture_default_str()
      ->check(CLI::IsMember({256, 512, 1024, 2048, 4096}));
  app.add_flag("-e,--events", config.use_events,
               "Sleep on CQ events instead of polling");
  app.add_option("-g,--gid-idx", config.gid_index, "Local port GID index")
      ->capture_default_str();
  app.add_option("--faults", faults,
                 "Fault injection, e.g. \"drop=0.1 dup=0.05 reorder=0.1 "
                 "seed=7\"");
  app.add_option("--fabric", fabric_mode, "loopback or socket")
      ->capture_default_str()
      ->check(CLI::IsMember({"loopback", "socket"}));
  app.add_option("--fabric-config", fabric_config_path,
                 "Endpoint table for the socket fabric");
  app.add_option("--psn-seed", psn_seed, "Seed for the initial PSN");
  CLI11_PARSE(app, argc, argv);

  config.ib_port = static_cast<uint8_t>(ib_port);
  config.sl = static_cast<uint8_t>(sl);
  config.mtu = *softverbs::PathMtuFromBytes(static_cast<uint32_t>(mtu));
  config.psn_seed = psn_seed;

  std::optional<softverbs::FaultProfile> fault_profile;
  if (!faults.empty()) {
    absl::StatusOr<softverbs::FaultProfile> parsed =
        softverbs::ParseFaultSpec(faults);
    if (!parsed.ok()) return Fail(parsed.status());
    fault_profile = *parsed;
  }

  if (fabric_mode == "loopback") {
    softverbs::FabricOptions options;
    if (fault_profile.has_value()) options.faults = *fault_profile;
    absl::Status s =
        softverbs::RunLoopbackPingpong(config, options, std::cout);
    return s.ok() ? 0 : Fail(s);
  }

  softverbs::FabricConfig fabric_config =
      softverbs::DefaultSocketConfig(config.port);
  if (!fabric_config_path.empty()) {
    absl::StatusOr<softverbs::FabricConfig> loaded =
        softverbs::LoadFabricConfig(fabric_config_path);
    if (!loaded.ok()) return Fail(loaded.status());
    fabric_config = *std::move(loaded);
  }
  if (fault_profile.has_value()) fabric_config.faults = fault_profile;
  absl::Status s =
      softverbs::RunSocketPingpong(config, fabric_config, std::cout);
  return s.ok() ? 0 : Fail(s);
}
