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

#include <list>
#include <map>
#include <memory>
#include <thread>
#include <utility>
#include <vector>

#include "absl/strings/str_format.h"
#include "absl/synchronization/mutex.h"
#include "socket_util.h"
#include "softverbs/frame.h"
#include "softverbs/transport.h"

namespace softverbs {
namespace {

// Each attached port owns a listening socket. Peers open one outbound
// connection per destination LID and write encoded frames back to back;
// the frame header carries the body length, so no extra framing is needed.
class SocketTransport : public Transport {
 public:
  explicit SocketTransport(FabricConfig config) : config_(std::move(config)) {}
  ~SocketTransport() override { Stop(); }

  void Start(Sink sink) override {
    absl::MutexLock lock(&mu_);
    sink_ = std::move(sink);
  }

  void Stop() override {
    std::vector<std::thread> threads;
    {
      absl::MutexLock lock(&mu_);
      stopped_ = true;
      sink_ = nullptr;
      for (auto& [lid, listener] : listeners_) {
        ShutdownSocket(listener->fd.get());
        threads.push_back(std::move(listener->thread));
      }
      for (auto& reader : readers_) {
        ShutdownSocket(reader->fd.get());
        threads.push_back(std::move(reader->thread));
      }
    }
    JoinAll(threads);
    {
      absl::MutexLock lock(&mu_);
      listeners_.clear();
      readers_.clear();
    }
    absl::MutexLock lock(&send_mu_);
    outbound_.clear();
  }

  absl::StatusOr<uint16_t> AttachPort() override {
    absl::MutexLock lock(&mu_);
    if (stopped_) return absl::FailedPreconditionError("transport stopped");
    absl::Status last = absl::UnavailableError("fabric config is empty");
    for (const FabricEndpoint& ep : config_.endpoints) {
      if (listeners_.contains(ep.lid)) continue;
      absl::StatusOr<UniqueFd> fd = ListenTcp(ep.host, ep.port);
      if (!fd.ok()) {
        last = fd.status();
        continue;
      }
      auto listener = std::make_unique<Listener>();
      listener->fd = std::move(*fd);
      const int raw = listener->fd.get();
      const uint16_t lid = ep.lid;
      listener->thread = std::thread([this, lid, raw] { AcceptLoop(lid, raw); });
      listeners_[lid] = std::move(listener);
      return lid;
    }
    return absl::UnavailableError(absl::StrFormat(
        "no configured endpoint is free locally (last error: %s)",
        last.message()));
  }

  void DetachPort(uint16_t lid) override {
    std::vector<std::thread> threads;
    std::unique_ptr<Listener> listener;
    std::list<std::unique_ptr<Reader>> readers;
    {
      absl::MutexLock lock(&mu_);
      auto it = listeners_.find(lid);
      if (it == listeners_.end()) return;
      listener = std::move(it->second);
      listeners_.erase(it);
      ShutdownSocket(listener->fd.get());
      threads.push_back(std::move(listener->thread));
      for (auto r = readers_.begin(); r != readers_.end();) {
        if ((*r)->lid == lid) {
          ShutdownSocket((*r)->fd.get());
          threads.push_back(std::move((*r)->thread));
          readers.push_back(std::move(*r));
          r = readers_.erase(r);
        } else {
          ++r;
        }
      }
    }
    JoinAll(threads);
  }

  void Send(uint16_t dest_lid, std::vector<uint8_t> bytes) override {
    const FabricEndpoint* ep = nullptr;
    for (const FabricEndpoint& e : config_.endpoints) {
      if (e.lid == dest_lid) ep = &e;
    }
    if (ep == nullptr) return;
    absl::MutexLock lock(&send_mu_);
    // A cached connection may have gone stale; retry once on a fresh one.
    for (int attempt = 0; attempt < 2; ++attempt) {
      UniqueFd& conn = outbound_[dest_lid];
      if (!conn.valid()) {
        absl::StatusOr<UniqueFd> fd = ConnectTcp(ep->host, ep->port);
        if (!fd.ok()) return;
        conn = std::move(*fd);
      }
      if (WriteAll(conn.get(), bytes).ok()) return;
      conn.Reset();
    }
  }

 private:
  struct Listener {
    UniqueFd fd;
    std::thread thread;
  };
  struct Reader {
    uint16_t lid = 0;
    UniqueFd fd;
    std::thread thread;
  };

  static void JoinAll(std::vector<std::thread>& threads) {
    for (std::thread& t : threads) {
      if (t.joinable()) t.join();
    }
  }

  void AcceptLoop(uint16_t lid, int listen_fd) {
    for (;;) {
      absl::StatusOr<UniqueFd> conn = AcceptTcp(listen_fd);
      if (!conn.ok()) return;
      absl::MutexLock lock(&mu_);
      if (stopped_ || !listeners_.contains(lid)) return;
      auto reader = std::make_unique<Reader>();
      reader->lid = lid;
      reader->fd = std::move(*conn);
      const int raw = reader->fd.get();
      reader->thread = std::thread([this, lid, raw] { ReadLoop(lid, raw); });
      readers_.push_back(std::move(reader));
    }
  }

  void ReadLoop(uint16_t lid, int fd) {
    for (;;) {
      std::vector<uint8_t> bytes(kFrameHeaderSize);
      if (!ReadExact(fd, bytes).ok()) return;
      absl::StatusOr<size_t> body = FrameBodyLength(bytes);
      if (!body.ok()) return;
      bytes.resize(kFrameHeaderSize + *body);
      if (!ReadExact(fd, std::span(bytes).subspan(kFrameHeaderSize)).ok()) {
        return;
      }
      Sink sink;
      {
        absl::MutexLock lock(&mu_);
        if (stopped_) return;
        sink = sink_;
      }
      if (sink) sink(lid, std::move(bytes));
    }
  }

  const FabricConfig config_;

  absl::Mutex mu_;
  Sink sink_ ABSL_GUARDED_BY(mu_);
  bool stopped_ ABSL_GUARDED_BY(mu_) = false;
  std::map<uint16_t, std::unique_ptr<Listener>> listeners_ ABSL_GUARDED_BY(mu_);
  std::list<std::unique_ptr<Reader>> readers_ ABSL_GUARDED_BY(mu_);

  absl::Mutex send_mu_;
  std::map<uint16_t, UniqueFd> outbound_ ABSL_GUARDED_BY(send_mu_);
};

}  // namespace

std::unique_ptr<Transport> MakeSocketTransport(FabricConfig config) {
  return std::make_unique<SocketTransport>(std::move(config));
}

}  // namespace softverbs
