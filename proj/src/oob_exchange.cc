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

#include <unistd.h>

#include <string>
#include <thread>
#include <utility>

#include "absl/strings/str_format.h"
#include "absl/time/clock.h"
#include "socket_util.h"
#include "softverbs/destination.h"

namespace softverbs {
namespace {

constexpr size_t kMaxLine = 128;

absl::Status SendLine(int fd, const DestinationInfo& info) {
  const std::string line = EncodeDestination(info);
  return WriteAll(fd, std::span(reinterpret_cast<const uint8_t*>(line.data()),
                                line.size()));
}

absl::StatusOr<DestinationInfo> ReceiveLine(int fd) {
  absl::StatusOr<std::string> line = ReadLine(fd, kMaxLine);
  if (!line.ok()) return line.status();
  return DecodeDestination(*line);
}

}  // namespace

absl::StatusOr<OobListener> OobListener::Bind(uint16_t port) {
  absl::StatusOr<UniqueFd> fd = ListenTcp("", port);
  if (!fd.ok()) return fd.status();
  absl::StatusOr<uint16_t> bound = LocalPort(fd->get());
  if (!bound.ok()) return bound.status();
  return OobListener(fd->Release(), *bound);
}

OobListener::OobListener(OobListener&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), port_(other.port_) {}

OobListener& OobListener::operator=(OobListener&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    port_ = other.port_;
  }
  return *this;
}

OobListener::~OobListener() {
  if (fd_ >= 0) ::close(fd_);
}

absl::StatusOr<DestinationInfo> OobListener::Exchange(
    const DestinationInfo& local, const PeerCallback& on_peer) {
  if (fd_ < 0) return absl::FailedPreconditionError("listener closed");
  absl::StatusOr<UniqueFd> conn = AcceptTcp(fd_);
  if (!conn.ok()) return conn.status();
  absl::StatusOr<DestinationInfo> remote = ReceiveLine(conn->get());
  if (!remote.ok()) return remote.status();
  if (on_peer) {
    if (absl::Status s = on_peer(*remote); !s.ok()) return s;
  }
  if (absl::Status s = SendLine(conn->get(), local); !s.ok()) return s;
  return remote;
}

absl::StatusOr<DestinationInfo> ExchangeAsClient(
    const std::string& host, uint16_t port, const DestinationInfo& local,
    absl::Duration connect_window) {
  const absl::Time give_up = absl::Now() + connect_window;
  absl::StatusOr<UniqueFd> conn = ConnectTcp(host, port);
  while (!conn.ok() && absl::Now() < give_up) {
    absl::SleepFor(absl::Milliseconds(20));
    conn = ConnectTcp(host, port);
  }
  if (!conn.ok()) return conn.status();
  if (absl::Status s = SendLine(conn->get(), local); !s.ok()) return s;
  return ReceiveLine(conn->get());
}

}  // namespace softverbs
