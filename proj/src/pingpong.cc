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

#include <unistd.h>

#include <cstdlib>
#include <cstring>
#include <random>
#include <sstream>
#include <thread>
#include <utility>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "absl/time/clock.h"

namespace softverbs {
namespace {

constexpr uint64_t kDeviceGuidBase = 0x0002c90300a1b200;

uint32_t InitialPsn(const std::optional<uint64_t>& seed) {
  std::mt19937 gen(seed.has_value() ? *seed : std::random_device{}());
  return gen() & Psn::kMask;
}

absl::Status Annotate(const absl::Status& s, absl::string_view what) {
  return absl::Status(s.code(), absl::StrCat(what, ": ", s.message()));
}

}  // namespace

void PingpongContext::AlignedFree::operator()(std::byte* p) const {
  std::free(p);
}

absl::StatusOr<std::unique_ptr<PingpongContext>> PingpongContext::Create(
    std::shared_ptr<Context> context, const PingpongConfig& config,
    bool is_server) {
  if (config.size < 1) return absl::InvalidArgumentError("size must be >= 1");
  if (config.rx_depth < 1) {
    return absl::InvalidArgumentError("rx-depth must be >= 1");
  }
  if (config.iters < 1) return absl::InvalidArgumentError("iters must be >= 1");

  std::unique_ptr<PingpongContext> ctx(new PingpongContext(config, is_server));
  ctx->context_ = std::move(context);

  const size_t page = static_cast<size_t>(sysconf(_SC_PAGESIZE));
  const size_t rounded = (config.size + page - 1) / page * page;
  ctx->buffer_.reset(static_cast<std::byte*>(std::aligned_alloc(page, rounded)));
  if (ctx->buffer_ == nullptr) {
    return absl::ResourceExhaustedError("Couldn't allocate work buf");
  }
  // The two sides start with distinguishable contents.
  std::memset(ctx->buffer_.get(), 0x7b + (is_server ? 1 : 0), rounded);

  absl::StatusOr<std::shared_ptr<ProtectionDomain>> pd =
      ctx->context_->AllocPd();
  if (!pd.ok()) return Annotate(pd.status(), "Couldn't allocate PD");
  ctx->pd_ = *std::move(pd);

  absl::StatusOr<std::shared_ptr<MemoryRegion>> mr =
      ctx->pd_->RegisterMr(ctx->buffer(), kAccessLocalWrite);
  if (!mr.ok()) return Annotate(mr.status(), "Couldn't register MR");
  ctx->mr_ = *std::move(mr);

  if (config.use_events) {
    absl::StatusOr<std::shared_ptr<CompletionChannel>> channel =
        ctx->context_->CreateCompChannel();
    if (!channel.ok()) {
      return Annotate(channel.status(), "Couldn't create completion channel");
    }
    ctx->channel_ = *std::move(channel);
  }

  absl::StatusOr<std::shared_ptr<CompletionQueue>> cq =
      ctx->context_->CreateCq(config.rx_depth + 1, nullptr, ctx->channel_, 0);
  if (!cq.ok()) return Annotate(cq.status(), "Couldn't create CQ");
  ctx->cq_ = *std::move(cq);

  ProtectionDomain::QpInitAttr init;
  init.send_cq = ctx->cq_;
  init.recv_cq = ctx->cq_;
  init.cap = QueueCaps{1, static_cast<uint32_t>(config.rx_depth), 1, 1};
  init.qp_type = QpType::kRc;
  absl::StatusOr<std::shared_ptr<QueuePair>> qp = ctx->pd_->CreateQp(init);
  if (!qp.ok()) return Annotate(qp.status(), "Couldn't create QP");
  ctx->qp_ = *std::move(qp);

  QpAttributes attr;
  attr.qp_state = QpState::kInit;
  attr.pkey_index = 0;
  attr.port_num = config.ib_port;
  attr.qp_access_flags = 0;
  if (absl::Status s = ctx->qp_->Modify(attr, kResetToInitMask); !s.ok()) {
    return Annotate(s, "Failed to modify QP to INIT");
  }

  ctx->initial_routs_ = ctx->PostRecv(config.rx_depth);
  if (ctx->initial_routs_ < config.rx_depth) {
    return absl::InternalError(
        absl::StrFormat("Couldn't post receive (%d)", ctx->initial_routs_));
  }

  absl::StatusOr<PortAttributes> port =
      ctx->context_->QueryPort(config.ib_port);
  if (!port.ok()) return Annotate(port.status(), "Couldn't get port info");
  ctx->local_.lid = port->lid;
  if (config.gid_index >= 0) {
    absl::StatusOr<Gid> gid =
        ctx->context_->QueryGid(config.ib_port, config.gid_index);
    if (!gid.ok()) {
      return Annotate(gid.status(), absl::StrFormat("can't read sgid of index %d",
                                                    config.gid_index));
    }
    ctx->local_.gid = *gid;
  }
  ctx->local_.qpn = ctx->qp_->qp_num();
  ctx->local_.psn = InitialPsn(config.psn_seed);
  return ctx;
}

PingpongContext::~PingpongContext() { Destroy().IgnoreError(); }

absl::Status PingpongContext::Connect(const DestinationInfo& remote) {
  QpAttributes attr;
  attr.qp_state = QpState::kRtr;
  attr.path_mtu = config_.mtu;
  attr.dest_qp_num = remote.qpn;
  attr.rq_psn = remote.psn;
  attr.max_dest_rd_atomic = 1;
  attr.min_rnr_timer = 12;
  attr.ah.dlid = remote.lid;
  attr.ah.sl = config_.sl;
  attr.ah.src_path_bits = 0;
  attr.ah.port_num = config_.ib_port;
  if (!remote.gid.IsZero()) {
    attr.ah.is_global = true;
    attr.ah.dgid = remote.gid;
  }
  if (absl::Status s = qp_->Modify(attr, kInitToRtrMask); !s.ok()) {
    return Annotate(s, "Failed to modify QP to RTR");
  }
  attr.qp_state = QpState::kRts;
  attr.timeout = 14;
  attr.retry_cnt = 7;
  attr.rnr_retry = 7;
  attr.sq_psn = local_.psn;
  attr.max_rd_atomic = 1;
  if (absl::Status s = qp_->Modify(attr, kRtrToRtsMask); !s.ok()) {
    return Annotate(s, "Failed to modify QP to RTS");
  }
  return absl::OkStatus();
}

int PingpongContext::PostRecv(int n) {
  const ReceiveWorkRequest wr{
      kRecvWrId,
      {ScatterGatherElement{reinterpret_cast<uint64_t>(buffer_.get()),
                            config_.size, mr_->lkey()}}};
  int i = 0;
  for (; i < n; ++i) {
    if (!qp_->PostRecv(wr).ok()) break;
  }
  return i;
}

absl::Status PingpongContext::PostSend() {
  const SendWorkRequest wr{
      kSendWrId,
      {ScatterGatherElement{reinterpret_cast<uint64_t>(buffer_.get()),
                            config_.size, mr_->lkey()}},
      WrOpcode::kSend,
      kSendSignaled};
  return qp_->PostSend(wr);
}

absl::Status PingpongContext::Destroy() {
  if (destroyed_) return absl::OkStatus();
  destroyed_ = true;
  if (cq_ != nullptr) {
    if (absl::Status s = cq_->AckEvents(cq_->unacked_events()); !s.ok()) {
      return s;
    }
  }
  if (qp_ != nullptr) {
    if (absl::Status s = qp_->Destroy(); !s.ok()) {
      return Annotate(s, "Couldn't destroy QP");
    }
  }
  if (mr_ != nullptr) {
    if (absl::Status s = mr_->Deregister(); !s.ok()) {
      return Annotate(s, "Couldn't deregister MR");
    }
  }
  if (cq_ != nullptr) {
    if (absl::Status s = cq_->Destroy(); !s.ok()) {
      return Annotate(s, "Couldn't destroy CQ");
    }
  }
  if (channel_ != nullptr) {
    if (absl::Status s = channel_->Destroy(); !s.ok()) {
      return Annotate(s, "Couldn't destroy completion channel");
    }
  }
  if (pd_ != nullptr) {
    if (absl::Status s = pd_->Dealloc(); !s.ok()) {
      return Annotate(s, "Couldn't deallocate PD");
    }
  }
  return absl::OkStatus();
}

// PingpongLoop

PingpongLoop::PingpongLoop(PingpongContext& ctx, Observer observer)
    : ctx_(ctx),
      observer_(std::move(observer)),
      routs_(ctx.initial_routs()) {}

absl::Status PingpongLoop::Begin() {
  if (ctx_.config().use_events) {
    if (absl::Status s = ctx_.cq().RequestNotify(); !s.ok()) {
      return Annotate(s, "Couldn't request CQ notification");
    }
  }
  if (!ctx_.is_server()) {
    if (absl::Status s = ctx_.PostSend(); !s.ok()) {
      return Annotate(s, "Couldn't post send");
    }
    pending_ |= kSendWrId;
  }
  start_ = absl::Now();
  return absl::OkStatus();
}

bool PingpongLoop::done() const {
  return rcnt_ >= ctx_.config().iters && scnt_ >= ctx_.config().iters;
}

absl::Status PingpongLoop::HandleCompletion(const WorkCompletion& wc) {
  if (wc.status != WcStatus::kSuccess) {
    return absl::InternalError(absl::StrFormat(
        "Failed status %s (%d) for wr_id %d", WcStatusName(wc.status),
        static_cast<int>(wc.status), wc.wr_id));
  }
  const int rx_depth = ctx_.config().rx_depth;
  switch (wc.wr_id) {
    case kSendWrId:
      ++scnt_;
      break;
    case kRecvWrId: {
      RecvObservation obs;
      obs.routs_after_decrement = --routs_;
      if (routs_ <= 1) {
        obs.reposted = ctx_.PostRecv(rx_depth - routs_);
        routs_ += obs.reposted;
        if (routs_ < rx_depth) {
          return absl::InternalError(
              absl::StrFormat("Couldn't post receive (%d)", routs_));
        }
      }
      obs.routs_after = routs_;
      ++rcnt_;
      if (observer_) observer_(obs);
      break;
    }
    default:
      return absl::InternalError(
          absl::StrFormat("Completion for unknown wr_id %d", wc.wr_id));
  }
  pending_ &= ~wc.wr_id;
  if (scnt_ < ctx_.config().iters && pending_ == 0) {
    if (absl::Status s = ctx_.PostSend(); !s.ok()) {
      return Annotate(s, "Couldn't post send");
    }
    pending_ = kRecvWrId | kSendWrId;
  }
  return absl::OkStatus();
}

absl::StatusOr<bool> PingpongLoop::Step() {
  if (finished_) return true;
  if (ctx_.config().use_events) {
    absl::StatusOr<std::shared_ptr<CompletionQueue>> cq =
        ctx_.channel()->GetEvent(absl::ZeroDuration());
    if (absl::IsDeadlineExceeded(cq.status())) return false;
    if (!cq.ok()) return Annotate(cq.status(), "Failed to get cq_event");
    if (cq->get() != &ctx_.cq()) {
      return absl::InternalError("CQ event for unknown CQ");
    }
    // Events are acknowledged in batches; acking is comparatively costly
    // on real hardware.
    if (++events_since_ack_ >= ctx_.config().rx_depth) {
      if (absl::Status s = ctx_.cq().AckEvents(events_since_ack_); !s.ok()) {
        return s;
      }
      events_since_ack_ = 0;
    }
    if (absl::Status s = ctx_.cq().RequestNotify(); !s.ok()) {
      return Annotate(s, "Couldn't request CQ notification");
    }
  }
  WorkCompletion wc[2];
  absl::StatusOr<int> n = ctx_.cq().Poll(wc);
  if (!n.ok()) return Annotate(n.status(), "poll CQ failed");
  for (int i = 0; i < *n; ++i) {
    if (absl::Status s = HandleCompletion(wc[i]); !s.ok()) return s;
  }
  if (done()) {
    if (absl::Status s = Finish(); !s.ok()) return s;
    return true;
  }
  return false;
}

absl::Status PingpongLoop::Run() {
  for (;;) {
    if (ctx_.config().use_events && !finished_) {
      // Block for the next event, then let Step consume it.
      absl::StatusOr<std::shared_ptr<CompletionQueue>> cq =
          ctx_.channel()->GetEvent();
      if (!cq.ok()) return Annotate(cq.status(), "Failed to get cq_event");
      if (cq->get() != &ctx_.cq()) {
        return absl::InternalError("CQ event for unknown CQ");
      }
      ++events_since_ack_;
      if (absl::Status s = ctx_.cq().RequestNotify(); !s.ok()) {
        return Annotate(s, "Couldn't request CQ notification");
      }
      WorkCompletion wc[2];
      absl::StatusOr<int> n = ctx_.cq().Poll(wc);
      if (!n.ok()) return Annotate(n.status(), "poll CQ failed");
      for (int i = 0; i < *n; ++i) {
        if (absl::Status s = HandleCompletion(wc[i]); !s.ok()) return s;
      }
      if (events_since_ack_ >= ctx_.config().rx_depth) {
        if (absl::Status s = ctx_.cq().AckEvents(events_since_ack_);
            !s.ok()) {
          return s;
        }
        events_since_ack_ = 0;
      }
      if (done()) return Finish();
      continue;
    }
    const int before = rcnt_ + scnt_;
    absl::StatusOr<bool> finished = Step();
    if (!finished.ok()) return finished.status();
    if (*finished) return absl::OkStatus();
    if (rcnt_ + scnt_ == before) std::this_thread::yield();
  }
}

absl::Status PingpongLoop::Finish() {
  end_ = absl::Now();
  finished_ = true;
  if (events_since_ack_ > 0) {
    if (absl::Status s = ctx_.cq().AckEvents(events_since_ack_); !s.ok()) {
      return s;
    }
    events_since_ack_ = 0;
  }
  return absl::OkStatus();
}

PingpongStats PingpongLoop::stats() const {
  PingpongStats stats;
  stats.iters = ctx_.config().iters;
  stats.bytes = uint64_t{ctx_.config().size} * stats.iters * 2;
  stats.elapsed = (finished_ ? end_ : absl::Now()) - start_;
  return stats;
}

// Drivers

FabricConfig DefaultSocketConfig(uint16_t oob_port) {
  FabricConfig config;
  config.endpoints.push_back(
      FabricEndpoint{1, "localhost", static_cast<uint16_t>(oob_port + 1)});
  config.endpoints.push_back(
      FabricEndpoint{2, "localhost", static_cast<uint16_t>(oob_port + 2)});
  return config;
}

absl::Status RunLoopbackPingpong(const PingpongConfig& config,
                                 const FabricOptions& fabric_options,
                                 std::ostream& out) {
  DeviceRegistry registry;
  if (absl::Status s = registry.AddDevice("sv0", kDeviceGuidBase); !s.ok()) {
    return s;
  }
  if (absl::Status s = registry.AddDevice("sv1", kDeviceGuidBase + 1);
      !s.ok()) {
    return s;
  }
  const std::vector<Device> devices = registry.GetDeviceList();
  std::shared_ptr<Fabric> fabric = Fabric::CreateLoopback(fabric_options);

  std::unique_ptr<PingpongContext> sides[2];
  std::ostringstream reports[2];
  for (int i = 0; i < 2; ++i) {
    absl::StatusOr<std::shared_ptr<Context>> context =
        registry.OpenDevice(devices[i]);
    if (!context.ok()) {
      return Annotate(context.status(), "Couldn't get context");
    }
    absl::StatusOr<uint16_t> lid = fabric->Attach(**context, config.ib_port);
    if (!lid.ok()) return Annotate(lid.status(), "Couldn't get port info");
    PingpongConfig side_config = config;
    const bool is_server = i == 0;
    if (is_server) {
      side_config.server_name.clear();
    } else if (config.psn_seed.has_value()) {
      side_config.psn_seed = *config.psn_seed + 1;
    }
    absl::StatusOr<std::unique_ptr<PingpongContext>> side =
        PingpongContext::Create(*context, side_config, is_server);
    if (!side.ok()) return side.status();
    sides[i] = *std::move(side);
    reports[i] << FormatAddress("local", sides[i]->local());
  }
  PingpongContext& server = *sides[0];
  PingpongContext& client = *sides[1];

  // Same order as over the wire: the server connects before it replies.
  if (absl::Status s = server.Connect(client.local()); !s.ok()) return s;
  if (absl::Status s = client.Connect(server.local()); !s.ok()) return s;
  reports[0] << FormatAddress("remote", client.local());
  reports[1] << FormatAddress("remote", server.local());

  PingpongLoop loops[2] = {PingpongLoop(server), PingpongLoop(client)};
  for (PingpongLoop& loop : loops) {
    if (absl::Status s = loop.Begin(); !s.ok()) return s;
  }
  int idle_rounds = 0;
  for (;;) {
    const int before = loops[0].rcnt() + loops[0].scnt() + loops[1].rcnt() +
                       loops[1].scnt();
    bool all_done = true;
    for (PingpongLoop& loop : loops) {
      absl::StatusOr<bool> finished = loop.Step();
      if (!finished.ok()) return finished.status();
      all_done = all_done && *finished;
    }
    if (all_done) break;
    const int after = loops[0].rcnt() + loops[0].scnt() + loops[1].rcnt() +
                      loops[1].scnt();
    if (fabric->RunOnce() || after != before) {
      idle_rounds = 0;
    } else if (++idle_rounds > 4) {
      return absl::InternalError("ping-pong stalled: no events pending");
    }
  }
  // Deliver trailing ACKs so neither side holds unacknowledged frames.
  fabric->RunUntilIdle();

  for (int i = 0; i < 2; ++i) {
    reports[i] << FormatStats(loops[i].stats());
    out << reports[i].str();
  }
  for (auto& side : sides) {
    if (absl::Status s = side->Destroy(); !s.ok()) return s;
  }
  return absl::OkStatus();
}

absl::Status RunSocketPingpong(const PingpongConfig& config,
                               const FabricConfig& fabric_config,
                               std::ostream& out) {
  const bool is_server = config.server_name.empty();
  DeviceRegistry registry;
  if (absl::Status s = registry.AddDevice(
          "sv0", kDeviceGuidBase + (is_server ? 0 : 1));
      !s.ok()) {
    return s;
  }
  absl::StatusOr<std::shared_ptr<Context>> context =
      registry.OpenDevice(registry.GetDeviceList().front());
  if (!context.ok()) return Annotate(context.status(), "Couldn't get context");

  FabricOptions options;
  options.faults = fabric_config.faults.value_or(FaultProfile{});
  std::shared_ptr<Fabric> fabric =
      Fabric::Create(MakeSocketTransport(fabric_config), options);
  absl::StatusOr<uint16_t> lid = fabric->Attach(**context, config.ib_port);
  if (!lid.ok()) return Annotate(lid.status(), "Couldn't get port info");
  fabric->Start();

  absl::StatusOr<std::unique_ptr<PingpongContext>> created =
      PingpongContext::Create(*context, config, is_server);
  if (!created.ok()) return created.status();
  PingpongContext& pp = **created;

  std::optional<OobListener> listener;
  if (is_server) {
    absl::StatusOr<OobListener> bound = OobListener::Bind(config.port);
    if (!bound.ok()) {
      return Annotate(bound.status(),
                      absl::StrFormat("Couldn't listen to port %d",
                                      config.port));
    }
    listener.emplace(*std::move(bound));
  }
  out << FormatAddress("local", pp.local()) << std::flush;

  absl::StatusOr<DestinationInfo> remote;
  if (is_server) {
    remote = listener->Exchange(pp.local(), [&pp](const DestinationInfo& r) {
      return pp.Connect(r);
    });
  } else {
    remote = ExchangeAsClient(config.server_name, config.port, pp.local());
    if (remote.ok()) {
      if (absl::Status s = pp.Connect(*remote); !s.ok()) return s;
    }
  }
  if (!remote.ok()) {
    return Annotate(remote.status(), "Couldn't exchange destination info");
  }
  out << FormatAddress("remote", *remote) << std::flush;

  PingpongLoop loop(pp);
  if (absl::Status s = loop.Begin(); !s.ok()) return s;
  if (absl::Status s = loop.Run(); !s.ok()) return s;
  out << FormatStats(loop.stats()) << std::flush;

  // Stopping flushes the final ACK before the transport closes.
  fabric->Stop();
  return pp.Destroy();
}

}  // namespace softverbs
