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

#ifndef SOFTVERBS_SRC_SOCKET_UTIL_H_
#define SOFTVERBS_SRC_SOCKET_UTIL_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "absl/status/status.h"
#include "absl/status/statusor.h"

namespace softverbs {

// Owns a file descriptor and closes it on destruction.
class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  ~UniqueFd() { Reset(); }
  UniqueFd(UniqueFd&& other) noexcept : fd_(other.Release()) {}
  UniqueFd& operator=(UniqueFd&& other) noexcept {
    if (this != &other) Reset(other.Release());
    return *this;
  }
  UniqueFd(const UniqueFd&) = delete;
  UniqueFd& operator=(const UniqueFd&) = delete;

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int Release() {
    const int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void Reset(int fd = -1);

 private:
  int fd_ = -1;
};

absl::Status WriteAll(int fd, std::span<const uint8_t> bytes);

// Fails with OutOfRange if the peer closes the stream first.
absl::Status ReadExact(int fd, std::span<uint8_t> out);

// Reads up to and including '\n', returned without the terminator.
absl::StatusOr<std::string> ReadLine(int fd, size_t max_length);

absl::StatusOr<UniqueFd> ConnectTcp(const std::string& host, uint16_t port);

// Port 0 binds an ephemeral port.
absl::StatusOr<UniqueFd> ListenTcp(const std::string& host, uint16_t port);

absl::StatusOr<uint16_t> LocalPort(int fd);

absl::StatusOr<UniqueFd> AcceptTcp(int listen_fd);

// Wakes any thread blocked in accept/read on `fd` without closing it.
void ShutdownSocket(int fd);

}  // namespace softverbs

#endif  // SOFTVERBS_SRC_SOCKET_UTIL_H_
