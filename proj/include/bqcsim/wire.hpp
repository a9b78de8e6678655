#pragma once

#include <array>
#include <coroutine>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bqcsim/angle.hpp"
#include "bqcsim/qstate.hpp"
#include "bqcsim/random.hpp"

namespace bqcsim {

enum class PartyId : int {
  Client = 0,
  Server1 = 1,
  Server2 = 2,
  Server3 = 3,
  TrustedCenter = 4,
};

constexpr std::array<PartyId, 5> kAllParties = {
    PartyId::Client, PartyId::Server1, PartyId::Server2, PartyId::Server3,
    PartyId::TrustedCenter};

inline const char* to_string(PartyId p) {
  switch (p) {
    case PartyId::Client: return "Client";
    case PartyId::Server1: return "Server1";
    case PartyId::Server2: return "Server2";
    case PartyId::Server3: return "Server3";
    case PartyId::TrustedCenter: return "TrustedCenter";
  }
  return "?";
}

enum class ChannelKind { Classical, Quantum };

struct ChannelSpec {
  PartyId from = PartyId::Client;
  PartyId to = PartyId::Client;
  ChannelKind kind = ChannelKind::Classical;
  bool is_private = false;
  friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

enum class MsgKind : std::size_t {
  AngleList = 0,
  BitList = 1,
  DeltaMsg = 2,
  MeasureReply = 3,
  QubitTransfer = 4,
  SecretPackage = 5,
};

inline const char* to_string(MsgKind k) {
  switch (k) {
    case MsgKind::AngleList: return "AngleList";
    case MsgKind::BitList: return "BitList";
    case MsgKind::DeltaMsg: return "DeltaMsg";
    case MsgKind::MeasureReply: return "MeasureReply";
    case MsgKind::QubitTransfer: return "QubitTransfer";
    case MsgKind::SecretPackage: return "SecretPackage";
  }
  return "?";
}

struct DeltaPayload {
  std::uint32_t index = 0;
  Angle angle;
  friend bool operator==(const DeltaPayload&, const DeltaPayload&) = default;
};

struct ReplyPayload {
  std::uint32_t index = 0;
  std::uint8_t bit = 0;
  friend bool operator==(const ReplyPayload&, const ReplyPayload&) = default;
};

struct SecretPackage {
  std::vector<std::uint8_t> x, z;      // per-pair corrections
  std::vector<std::uint32_t> perm;     // perm[i] = P(i), 0-based
  friend bool operator==(const SecretPackage&, const SecretPackage&) = default;
};

using Payload =
    std::variant<std::vector<Angle>, std::vector<std::uint8_t>, DeltaPayload,
                 ReplyPayload, std::vector<QubitId>, SecretPackage>;

struct Message {
  std::uint64_t seq = 0;
  ChannelSpec channel;
  MsgKind kind = MsgKind::AngleList;
  Payload payload;
};

using Transcript = std::vector<Message>;

struct CustodyEvent {
  std::uint64_t seq = 0;  // transfer message seq (0 for initial allocation)
  QubitId qubit;
  PartyId from = PartyId::Client;
  PartyId to = PartyId::Client;
};

class DeadlockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reliable, in-order, lossless message fabric plus qubit custody tracking.
// A Network instance belongs to a single run.
class Network {
 public:
  Network(RegisterPool& pool, std::vector<ChannelSpec> topology,
          bool record_transcript = true)
      : pool_(&pool),
        topology_(std::move(topology)),
        record_(record_transcript) {}

  RegisterPool& pool() { return *pool_; }

  bool has_channel(PartyId from, PartyId to, ChannelKind kind) const {
    return find_channel(from, to, kind) != nullptr;
  }

  const ChannelSpec& channel(PartyId from, PartyId to,
                             ChannelKind kind) const {
    const ChannelSpec* c = find_channel(from, to, kind);
    if (!c)
      throw ConfigError(std::string("unregistered channel ") +
                        to_string(from) + " -> " + to_string(to));
    return *c;
  }

  void send(PartyId from, PartyId to, MsgKind kind, Payload payload) {
    if (static_cast<std::size_t>(kind) != payload.index())
      throw ContractViolation("send: payload type does not match kind");
    const ChannelKind need = kind == MsgKind::QubitTransfer
                                 ? ChannelKind::Quantum
                                 : ChannelKind::Classical;
    const ChannelSpec& ch = channel(from, to, need);
    Message msg{next_seq_++, ch, kind, std::move(payload)};
    if (kind == MsgKind::QubitTransfer) {
      for (QubitId q : std::get<std::vector<QubitId>>(msg.payload)) {
        require_custody(q, from, "send");
        custody_[q.value] = to;
        custody_log_.push_back({msg.seq, q, from, to});
      }
    }
    auto& queue = queues_[key(from, to)];
    if (record_) transcript_.push_back(msg);
    queue.push_back(std::move(msg));
  }

  bool has_message(PartyId from, PartyId to) const {
    const auto it = queues_.find(key(from, to));
    return it != queues_.end() && !it->second.empty();
  }

  Message pop_message(PartyId from, PartyId to) {
    auto& queue = queues_.at(key(from, to));
    Message m = std::move(queue.front());
    queue.pop_front();
    return m;
  }

  void assign_custody(QubitId q, PartyId owner) {
    custody_[q.value] = owner;
    custody_log_.push_back({0, q, owner, owner});
  }

  PartyId custody(QubitId q) const { return custody_.at(q.value); }

  void require_custody(QubitId q, PartyId p, const char* op) const {
    const auto it = custody_.find(q.value);
    if (it == custody_.end() || it->second != p)
      throw ContractViolation(std::string(op) + ": " + to_string(p) +
                              " does not hold qubit " +
                              std::to_string(q.value));
  }

  const Transcript& transcript() const { return transcript_; }
  const std::vector<CustodyEvent>& custody_log() const { return custody_log_; }

 private:
  static std::pair<int, int> key(PartyId from, PartyId to) {
    return {static_cast<int>(from), static_cast<int>(to)};
  }

  const ChannelSpec* find_channel(PartyId from, PartyId to,
                                  ChannelKind kind) const {
    for (const auto& c : topology_)
      if (c.from == from && c.to == to && c.kind == kind) return &c;
    return nullptr;
  }

  RegisterPool* pool_;
  std::vector<ChannelSpec> topology_;
  bool record_;
  std::map<std::pair<int, int>, std::deque<Message>> queues_;
  Transcript transcript_;
  std::map<std::uint32_t, PartyId> custody_;
  std::vector<CustodyEvent> custody_log_;
  std::uint64_t next_seq_ = 0;
};

// Coroutine handle for a party state machine. A machine suspends only at
// recv points; the scheduler resumes it when the awaited message is there.
class Proc {
 public:
  struct promise_type {
    std::string waiting;
    std::function<bool()> ready;
    std::exception_ptr error;

    Proc get_return_object() {
      return Proc(std::coroutine_handle<promise_type>::from_promise(*this));
    }
    std::suspend_always initial_suspend() noexcept { return {}; }
    std::suspend_always final_suspend() noexcept { return {}; }
    void return_void() {}
    void unhandled_exception() { error = std::current_exception(); }
  };

  using Handle = std::coroutine_handle<promise_type>;

  explicit Proc(Handle h) : h_(h) {}
  Proc(Proc&& other) noexcept : h_(std::exchange(other.h_, {})) {}
  Proc& operator=(Proc&& other) noexcept {
    if (this != &other) {
      if (h_) h_.destroy();
      h_ = std::exchange(other.h_, {});
    }
    return *this;
  }
  Proc(const Proc&) = delete;
  Proc& operator=(const Proc&) = delete;
  ~Proc() {
    if (h_) h_.destroy();
  }

  bool done() const { return h_.done(); }

  bool runnable() const {
    if (h_.done()) return false;
    const auto& p = h_.promise();
    return !p.ready || p.ready();
  }

  const std::string& waiting_on() const { return h_.promise().waiting; }

  void resume() {
    h_.resume();
    if (h_.promise().error) std::rethrow_exception(h_.promise().error);
  }

 private:
  Handle h_;
};

// One party's capabilities: custody-checked quantum operations plus typed
// send/recv on registered channels.
class PartyContext {
 public:
  PartyContext(PartyId self, Network& net, RandomSource& secrets,
               RandomSource& quantum)
      : self_(self), net_(&net), secrets_(&secrets), quantum_(&quantum) {}

  PartyId self() const { return self_; }
  Network& net() { return *net_; }
  RandomSource& secrets() { return *secrets_; }

  QubitId alloc_plus_theta(Angle theta) {
    QubitId q = net_->pool().alloc_plus_theta(theta);
    net_->assign_custody(q, self_);
    return q;
  }

  std::pair<QubitId, QubitId> alloc_bell(int x, int z) {
    auto pair = net_->pool().alloc_bell(x, z);
    net_->assign_custody(pair.first, self_);
    net_->assign_custody(pair.second, self_);
    return pair;
  }

  void apply_cz(QubitId a, QubitId b) {
    net_->require_custody(a, self_, "apply_cz");
    net_->require_custody(b, self_, "apply_cz");
    net_->pool().apply_cz(a, b);
  }

  int measure_angle(QubitId q, Angle theta) {
    net_->require_custody(q, self_, "measure_angle");
    return net_->pool().measure_angle(q, theta, *quantum_);
  }

  std::pair<int, int> measure_bell(QubitId a, QubitId b) {
    net_->require_custody(a, self_, "measure_bell");
    net_->require_custody(b, self_, "measure_bell");
    return net_->pool().measure_bell(a, b, *quantum_);
  }

  int measure_z(QubitId q) {
    net_->require_custody(q, self_, "measure_z");
    return net_->pool().measure_z(q, *quantum_);
  }

  void send(PartyId to, MsgKind kind, Payload payload) {
    net_->send(self_, to, kind, std::move(payload));
  }

  struct RecvAwaiter {
    PartyContext* ctx;
    PartyId from;
    MsgKind expect;
    Proc::Handle handle{};

    bool await_ready() const {
      return ctx->net_->has_message(from, ctx->self_);
    }
    void await_suspend(Proc::Handle h) {
      handle = h;
      auto& p = h.promise();
      p.waiting = std::string(to_string(ctx->self_)) + " waiting for " +
                  to_string(expect) + " from " + to_string(from);
      p.ready = [this] { return ctx->net_->has_message(from, ctx->self_); };
    }
    Message await_resume() {
      if (handle) {
        handle.promise().waiting.clear();
        handle.promise().ready = nullptr;
      }
      Message m = ctx->net_->pop_message(from, ctx->self_);
      if (m.kind != expect)
        throw ContractViolation(std::string("recv: ") + to_string(ctx->self_) +
                                " expected " + to_string(expect) + ", got " +
                                to_string(m.kind));
      return m;
    }
  };

  RecvAwaiter recv(PartyId from, MsgKind expect) {
    return RecvAwaiter{this, from, expect};
  }

 private:
  PartyId self_;
  Network* net_;
  RandomSource* secrets_;
  RandomSource* quantum_;
};

// Round-robin driver in PartyId order. A machine runs until it blocks on a
// missing message; terminates when all machines finish. A full round with no
// runnable machine is a deadlock and reports every waiting condition.
inline void run_schedule(std::map<PartyId, Proc>& parties) {
  while (true) {
    bool progressed = false;
    bool all_done = true;
    for (auto& [pid, proc] : parties) {
      while (proc.runnable()) {
        proc.resume();
        progressed = true;
      }
      if (!proc.done()) all_done = false;
    }
    if (all_done) return;
    if (!progressed) {
      std::string diag = "deadlock:";
      for (auto& [pid, proc] : parties)
        if (!proc.done())
          diag += " [" + (proc.waiting_on().empty()
                              ? std::string(to_string(pid)) + " not runnable"
                              : proc.waiting_on()) +
                  "]";
      throw DeadlockError(diag);
    }
  }
}

// Messages a coalition observes: anything it sent or received, plus all
// traffic on non-private channels.
inline Transcript adversary_view(const Transcript& transcript,
                                 const std::set<PartyId>& coalition) {
  Transcript view;
  for (const auto& m : transcript) {
    const bool member = coalition.contains(m.channel.from) ||
                        coalition.contains(m.channel.to);
    if (member || !m.channel.is_private) view.push_back(m);
  }
  return view;
}

inline nlohmann::json payload_to_json(MsgKind kind, const Payload& payload) {
  switch (kind) {
    case MsgKind::AngleList: {
      nlohmann::json arr = nlohmann::json::array();
      for (Angle a : std::get<std::vector<Angle>>(payload))
        arr.push_back(a.eighths());
      return arr;
    }
    case MsgKind::BitList: {
      nlohmann::json arr = nlohmann::json::array();
      for (auto b : std::get<std::vector<std::uint8_t>>(payload))
        arr.push_back(static_cast<int>(b));
      return arr;
    }
    case MsgKind::DeltaMsg: {
      const auto& d = std::get<DeltaPayload>(payload);
      return {{"index", d.index}, {"angle_eighths", d.angle.eighths()}};
    }
    case MsgKind::MeasureReply: {
      const auto& r = std::get<ReplyPayload>(payload);
      return {{"index", r.index}, {"bit", static_cast<int>(r.bit)}};
    }
    case MsgKind::QubitTransfer: {
      nlohmann::json arr = nlohmann::json::array();
      for (QubitId q : std::get<std::vector<QubitId>>(payload))
        arr.push_back(q.value);
      return arr;
    }
    case MsgKind::SecretPackage: {
      const auto& s = std::get<SecretPackage>(payload);
      nlohmann::json x = nlohmann::json::array();
      nlohmann::json z = nlohmann::json::array();
      nlohmann::json perm = nlohmann::json::array();
      for (auto v : s.x) x.push_back(static_cast<int>(v));
      for (auto v : s.z) z.push_back(static_cast<int>(v));
      for (auto v : s.perm) perm.push_back(v);
      return {{"x", x}, {"z", z}, {"perm", perm}};
    }
  }
  return nullptr;
}

inline nlohmann::json transcript_to_json(const Transcript& transcript) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& m : transcript) {
    out.push_back({{"seq", m.seq},
                   {"from", to_string(m.channel.from)},
                   {"to", to_string(m.channel.to)},
                   {"kind", to_string(m.kind)},
                   {"private", m.channel.is_private},
                   {"payload", payload_to_json(m.kind, m.payload)}});
  }
  return out;
}

// Equality of (from, to, kind, payload) sequences; channel attributes such
// as privacy flags are topology metadata and excluded.
inline bool transcripts_equal_messages(const Transcript& a,
                                       const Transcript& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].channel.from != b[i].channel.from ||
        a[i].channel.to != b[i].channel.to || a[i].kind != b[i].kind ||
        a[i].payload != b[i].payload)
      return false;
  }
  return true;
}

// Equality of (kind, payload) sequences only; used to compare the merged
// single-server variant against the two-server run.
inline bool transcripts_equal_payloads(const Transcript& a,
                                       const Transcript& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].kind != b[i].kind || a[i].payload != b[i].payload) return false;
  return true;
}

}  // namespace bqcsim
