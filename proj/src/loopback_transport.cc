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

#include <set>
#include <utility>

#include "absl/synchronization/mutex.h"
#include "softverbs/transport.h"

namespace softverbs {
namespace {

class LoopbackTransport : public Transport {
 public:
  void Start(Sink sink) override {
    absl::MutexLock lock(&mu_);
    sink_ = std::move(sink);
  }

  void Stop() override {
    absl::MutexLock lock(&mu_);
    sink_ = nullptr;
  }

  absl::StatusOr<uint16_t> AttachPort() override {
    absl::MutexLock lock(&mu_);
    if (next_lid_ == 0xc000) {
      return absl::ResourceExhaustedError("unicast LID space exhausted");
    }
    const uint16_t lid = next_lid_++;
    attached_.insert(lid);
    return lid;
  }

  void DetachPort(uint16_t lid) override {
    absl::MutexLock lock(&mu_);
    attached_.erase(lid);
  }

  void Send(uint16_t dest_lid, std::vector<uint8_t> bytes) override {
    Sink sink;
    {
      absl::MutexLock lock(&mu_);
      if (!attached_.contains(dest_lid) || !sink_) return;
      sink = sink_;
    }
    sink(dest_lid, std::move(bytes));
  }

 private:
  absl::Mutex mu_;
  Sink sink_ ABSL_GUARDED_BY(mu_);
  uint16_t next_lid_ ABSL_GUARDED_BY(mu_) = 1;
  std::set<uint16_t> attached_ ABSL_GUARDED_BY(mu_);
};

}  // namespace

std::unique_ptr<Transport> MakeLoopbackTransport() {
  return std::make_unique<LoopbackTransport>();
}

}  // namespace softverbs
