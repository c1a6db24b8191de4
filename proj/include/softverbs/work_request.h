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

#ifndef SOFTVERBS_WORK_REQUEST_H_
#define SOFTVERBS_WORK_REQUEST_H_

#include <cstdint>
#include <vector>

#include "absl/strings/string_view.h"

namespace softverbs {

// A slice of registered memory. `addr` is a process virtual address inside
// the memory region named by `lkey`.
struct ScatterGatherElement {
  uint64_t addr = 0;
  uint32_t length = 0;
  uint32_t lkey = 0;
};

enum class WrOpcode : uint8_t { kSend };

enum SendFlags : uint32_t {
  kSendSignaled = 1,
};

struct SendWorkRequest {
  uint64_t wr_id = 0;
  std::vector<ScatterGatherElement> sg_list;
  WrOpcode opcode = WrOpcode::kSend;
  uint32_t send_flags = kSendSignaled;
};

struct ReceiveWorkRequest {
  uint64_t wr_id = 0;
  std::vector<ScatterGatherElement> sg_list;
};

enum class WcStatus : uint8_t {
  kSuccess,
  kLocalProtectionError,
  kRetryExceeded,
  kRnrRetryExceeded,
  kWorkRequestFlushed,
};
absl::string_view WcStatusName(WcStatus status);

enum class WcOpcode : uint8_t { kSend, kRecv };

struct WorkCompletion {
  uint64_t wr_id = 0;
  WcStatus status = WcStatus::kSuccess;
  WcOpcode opcode = WcOpcode::kSend;
  // Bytes received; zero for send completions.
  uint32_t byte_len = 0;
  uint32_t qp_num = 0;

  friend bool operator==(const WorkCompletion&,
                         const WorkCompletion&) = default;
};

}  // namespace softverbs

#endif  // SOFTVERBS_WORK_REQUEST_H_
