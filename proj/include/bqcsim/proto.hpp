#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bqcsim/angle.hpp"
#include "bqcsim/mbqc.hpp"
#include "bqcsim/qstate.hpp"
#include "bqcsim/random.hpp"
#include "bqcsim/wire.hpp"

namespace bqcsim {

enum class Protocol {
  Single,
  BfkDouble,
  MfDouble,
  Triple,
  NewDouble,
  NewSingle,
};

inline const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Single: return "single";
    case Protocol::BfkDouble: return "bfk-double";
    case Protocol::MfDouble: return "mf-double";
    case Protocol::Triple: return "triple";
    case Protocol::NewDouble: return "new-double";
    case Protocol::NewSingle: return "new-single";
  }
  return "?";
}

inline std::optional<Protocol> protocol_from_name(const std::string& name) {
  for (Protocol p : {Protocol::Single, Protocol::BfkDouble, Protocol::MfDouble,
                     Protocol::Triple, Protocol::NewDouble,
                     Protocol::NewSingle})
    if (name == protocol_name(p)) return p;
  return std::nullopt;
}

// Clean protocol-level abort (the triple protocol ran out of usable pairs);
// distinct from contract violations and config errors.
class ProtocolAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TripleConfig {
  int target_pairs = 2;             // m
  double overhead_factor = 2.0;     // the delta in n = (2+delta)m
  double forward_probability = 0.5;

  int total_pairs() const {
    if (overhead_factor < 0.0)
      throw ConfigError("triple: overhead_factor must be >= 0");
    const double n = (2.0 + overhead_factor) * target_pairs;
    return static_cast<int>(std::ceil(n - 1e-12));
  }
};

struct ClientSecret {
  std::vector<Angle> theta_tilde;
  std::vector<std::uint8_t> r;  // in measurement order
  std::vector<std::uint8_t> x, z;
  std::vector<std::uint32_t> perm;  // perm[i] = P(i), 0-based
};

// Test-only inspection hooks.
struct StageProbe {
  const RegisterPool* pool;
  std::span<const QubitId> qubits;   // Server2 position order
  std::span<const Angle> effective;  // expected |+_theta> angles
};

struct SwapProbe {
  const RegisterPool* pool;
  std::span<const std::pair<QubitId, QubitId>> pairs;  // (B1_{s_i}, B2_{t_i})
  std::span<const std::pair<int, int>> labels;         // (x_i, z_i)
};

struct ProtocolOptions {
  bool record_transcript = true;
  bool gossip = false;                 // Server1 forwards its view mid-run
  bool force_trivial_secrets = false;  // zero corrections, identity perm
  bool force_zero_xz = false;
  bool leak_stage1_privacy = false;    // Client<->Server1 channel made public
  bool corrupt_first_z = false;        // center flips z_0 after reporting it
  bool force_zero_theta = false;
  bool force_zero_r = false;
  TripleConfig triple;
  std::function<void(const StageProbe&)> pre_graph_probe;
  std::function<void(const SwapProbe&)> post_swap_probe;
};

// Client-side bookkeeping, exposed for instrumentation and analyses.
struct ClientRecord {
  ClientSecret secret;
  std::vector<Angle> effective;  // per pattern vertex
  std::vector<Angle> deltas;     // in measurement order
  std::vector<int> raw_replies;  // b, in measurement order
  std::vector<int> corrected;    // m = b xor r
  std::vector<std::uint32_t> s_positions, t_positions;  // triple
  std::vector<std::pair<int, int>> swap_outcomes;       // triple
};

struct RunOutcome {
  Protocol protocol = Protocol::Single;
  RegisterPool pool;
  Transcript transcript;
  std::vector<CustodyEvent> custody_log;
  std::vector<QubitId> outputs;  // pattern output order
  std::vector<int> x_corr, z_corr;
  ClientRecord client;
  bool aborted = false;
  std::string abort_reason;
};

struct RunRandoms {
  RandomSource* client;
  RandomSource* tc;
  RandomSource* quantum;
};

// Seed splitting: stream 0 = client secrets, 1 = trusted-center secrets,
// 2 = quantum outcomes, 3 = readout; trial t runs on derive_seed(m, 16+t).
struct SeedPlan {
  std::uint64_t master = 0;
  std::uint64_t client() const { return derive_seed(master, 0); }
  std::uint64_t center() const { return derive_seed(master, 1); }
  std::uint64_t quantum() const { return derive_seed(master, 2); }
  std::uint64_t readout() const { return derive_seed(master, 3); }
  static std::uint64_t trial(std::uint64_t master, std::uint64_t index) {
    return derive_seed(master, 16 + index);
  }
};

// The paper's channel layout per protocol.
inline std::vector<ChannelSpec> standard_topology(
    Protocol proto, const ProtocolOptions& opts) {
  using P = PartyId;
  using K = ChannelKind;
  std::vector<ChannelSpec> t;
  auto cc = [&](P a, P b, bool priv) {
    t.push_back({a, b, K::Classical, priv});
    t.push_back({b, a, K::Classical, priv});
  };
  switch (proto) {
    case Protocol::Single:
      t.push_back({P::Client, P::Server1, K::Quantum, false});
      cc(P::Client, P::Server1, false);
      break;
    case Protocol::BfkDouble:
    case Protocol::MfDouble: {
      const bool priv = !opts.leak_stage1_privacy;
      t.push_back({P::TrustedCenter, P::Client, K::Classical, true});
      t.push_back({P::TrustedCenter, P::Server1, K::Quantum, false});
      t.push_back({P::TrustedCenter, P::Server2, K::Quantum, false});
      cc(P::Client, P::Server1, priv);
      cc(P::Client, P::Server2, false);
      break;
    }
    case Protocol::NewDouble:
      t.push_back({P::TrustedCenter, P::Client, K::Classical, true});
      t.push_back({P::TrustedCenter, P::Server1, K::Quantum, false});
      t.push_back({P::TrustedCenter, P::Server2, K::Quantum, false});
      cc(P::Client, P::Server1, false);
      cc(P::Client, P::Server2, false);
      cc(P::Server1, P::Server2, false);
      break;
    case Protocol::NewSingle:
      t.push_back({P::TrustedCenter, P::Client, K::Classical, true});
      t.push_back({P::TrustedCenter, P::Server1, K::Quantum, false});
      cc(P::Client, P::Server1, false);
      break;
    case Protocol::Triple:
      t.push_back({P::TrustedCenter, P::Client, K::Quantum, false});
      t.push_back({P::TrustedCenter, P::Server1, K::Quantum, false});
      t.push_back({P::TrustedCenter, P::Server2, K::Quantum, false});
      t.push_back({P::Client, P::Server3, K::Quantum, false});
      cc(P::Client, P::Server1, true);
      cc(P::Client, P::Server2, false);
      cc(P::Client, P::Server3, false);
      cc(P::Server1, P::Server2, false);
      cc(P::Server1, P::Server3, false);
      cc(P::Server2, P::Server3, false);
      break;
  }
  return t;
}

// Rejects layouts the protocol forbids, e.g. a Server1<->Server2 link in the
// BFK double protocol or a quantum channel to the classical client.
inline void validate_topology(Protocol proto,
                              std::span<const ChannelSpec> topology) {
  auto has_any = [&](PartyId a, PartyId b) {
    for (const auto& c : topology)
      if ((c.from == a && c.to == b) || (c.from == b && c.to == a))
        return true;
    return false;
  };
  switch (proto) {
    case Protocol::BfkDouble:
    case Protocol::MfDouble:
      if (has_any(PartyId::Server1, PartyId::Server2))
        throw ConfigError(
            "double-server protocol forbids a Server1<->Server2 channel");
      break;
    case Protocol::NewDouble:
    case Protocol::NewSingle:
      for (const auto& c : topology)
        if (c.kind == ChannelKind::Quantum &&
            (c.from == PartyId::Client || c.to == PartyId::Client))
          throw ConfigError(
              "the client is classical: no quantum channel to Client");
      break;
    case Protocol::Triple: {
      bool tc_client = false, client_s3 = false;
      for (const auto& c : topology)
        if (c.kind == ChannelKind::Quantum) {
          if (c.from == PartyId::TrustedCenter && c.to == PartyId::Client)
            tc_client = true;
          if (c.from == PartyId::Client && c.to == PartyId::Server3)
            client_s3 = true;
        }
      if (!tc_client || !client_s3)
        throw ConfigError("triple protocol requires the client quantum links");
      break;
    }
    case Protocol::Single:
      break;
  }
}

namespace detail {

struct DoubleMode {
  bool sample_xz = false;
  bool sample_perm = false;
  bool merged = false;
};

inline DoubleMode double_mode(Protocol p) {
  switch (p) {
    case Protocol::BfkDouble: return {false, false, false};
    case Protocol::MfDouble: return {true, false, false};
    case Protocol::NewDouble: return {true, true, false};
    case Protocol::NewSingle: return {true, true, true};
    default: throw ConfigError("not a double-server protocol");
  }
}

inline std::vector<std::uint32_t> identity_perm(std::uint32_t n) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

inline std::vector<std::uint32_t> sample_perm(std::uint32_t n,
                                              RandomSource& rs) {
  auto p = identity_perm(n);
  for (std::uint32_t i = n; i > 1; --i) {
    const auto j = static_cast<std::uint32_t>(rs.bounded(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

inline void build_graph_state_ctx(PartyContext& ctx,
                                  std::span<const QubitId> qubits,
                                  const Graph& graph) {
  auto edges = graph.edges;
  std::sort(edges.begin(), edges.end());
  for (const auto& [a, b] : edges) ctx.apply_cz(qubits[a], qubits[b]);
}

// ---------------- BFK single-server ----------------

inline Proc client_single(PartyContext ctx, const Pattern* pattern,
                          const ProtocolOptions* opts, ClientRecord* rec) {
  const std::uint32_t n = pattern->graph.vertex_count;
  auto& theta = rec->secret.theta_tilde;
  for (std::uint32_t i = 0; i < n; ++i)
    theta.push_back(opts->force_zero_theta ? Angle(0) : ctx.secrets().angle());

  std::vector<QubitId> qubits;
  qubits.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i)
    qubits.push_back(ctx.alloc_plus_theta(theta[i]));
  ctx.send(PartyId::Server1, MsgKind::QubitTransfer, qubits);

  for (std::size_t k = 0; k < pattern->order.size(); ++k)
    rec->secret.r.push_back(
        opts->force_zero_r ? 0
                           : static_cast<std::uint8_t>(ctx.secrets().bit()));
  rec->effective = theta;

  PatternTracker tracker(*pattern);
  std::size_t k = 0;
  while (!tracker.done()) {
    const std::uint32_t v = tracker.current_vertex();
    const Angle d =
        delta_angle(theta[v], tracker.phi_prime(), rec->secret.r[k]);
    rec->deltas.push_back(d);
    ctx.send(PartyId::Server1, MsgKind::DeltaMsg, DeltaPayload{v, d});
    Message m = co_await ctx.recv(PartyId::Server1, MsgKind::MeasureReply);
    const int b = std::get<ReplyPayload>(m.payload).bit;
    const int corrected = b ^ rec->secret.r[k];
    rec->raw_replies.push_back(b);
    rec->corrected.push_back(corrected);
    tracker.record(corrected);
    ++k;
  }
  co_return;
}

inline Proc server_single(PartyContext ctx, const Pattern* pattern,
                          RunOutcome* out) {
  Message m = co_await ctx.recv(PartyId::Client, MsgKind::QubitTransfer);
  auto held = std::get<std::vector<QubitId>>(m.payload);
  build_graph_state_ctx(ctx, held, pattern->graph);
  for (std::size_t k = 0; k < pattern->order.size(); ++k) {
    Message dm = co_await ctx.recv(PartyId::Client, MsgKind::DeltaMsg);
    const auto& d = std::get<DeltaPayload>(dm.payload);
    const int b = ctx.measure_angle(held[d.index], d.angle);
    ctx.send(PartyId::Client, MsgKind::MeasureReply,
             ReplyPayload{d.index, static_cast<std::uint8_t>(b)});
  }
  for (std::uint32_t o : pattern->outputs) out->outputs.push_back(held[o]);
  co_return;
}

// ---------------- double-server family ----------------

inline Proc tc_double(PartyContext ctx, std::uint32_t n, DoubleMode mode,
                      const ProtocolOptions* opts) {
  SecretPackage pkg;
  pkg.x.assign(n, 0);
  pkg.z.assign(n, 0);
  if (mode.sample_xz && !opts->force_trivial_secrets && !opts->force_zero_xz) {
    for (std::uint32_t i = 0; i < n; ++i) {
      pkg.x[i] = static_cast<std::uint8_t>(ctx.secrets().bit());
      pkg.z[i] = static_cast<std::uint8_t>(ctx.secrets().bit());
    }
  }
  pkg.perm = (mode.sample_perm && !opts->force_trivial_secrets)
                 ? sample_perm(n, ctx.secrets())
                 : identity_perm(n);
  ctx.send(PartyId::Client, MsgKind::SecretPackage, pkg);

  if (opts->corrupt_first_z && n > 0) pkg.z[0] ^= 1;

  std::vector<QubitId> a_half(n), b_half(n);
  for (std::uint32_t i = 0; i < n; ++i)
    std::tie(a_half[i], b_half[i]) = ctx.alloc_bell(pkg.x[i], pkg.z[i]);

  ctx.send(PartyId::Server1, MsgKind::QubitTransfer, a_half);

  std::vector<QubitId> arrival(n);
  for (std::uint32_t i = 0; i < n; ++i) arrival[pkg.perm[i]] = b_half[i];
  const PartyId stage2 = mode.merged ? PartyId::Server1 : PartyId::Server2;
  ctx.send(stage2, MsgKind::QubitTransfer, arrival);
  co_return;
}

inline Proc client_double(PartyContext ctx, const Pattern* pattern,
                          DoubleMode mode, const ProtocolOptions* opts,
                          ClientRecord* rec) {
  const std::uint32_t n = pattern->graph.vertex_count;
  Message pm = co_await ctx.recv(PartyId::TrustedCenter,
                                 MsgKind::SecretPackage);
  const auto& pkg = std::get<SecretPackage>(pm.payload);
  rec->secret.x = pkg.x;
  rec->secret.z = pkg.z;
  rec->secret.perm = pkg.perm;

  auto& theta = rec->secret.theta_tilde;
  for (std::uint32_t i = 0; i < n; ++i)
    theta.push_back(opts->force_zero_theta ? Angle(0) : ctx.secrets().angle());

  std::vector<Angle> encoded(n, Angle(0));
  for (std::uint32_t i = 0; i < n; ++i)
    encoded[i] = mf_encode(theta[i], pkg.x[i], pkg.z[i]);
  ctx.send(PartyId::Server1, MsgKind::AngleList, encoded);

  Message mm = co_await ctx.recv(PartyId::Server1, MsgKind::BitList);
  const auto& m_bits = std::get<std::vector<std::uint8_t>>(mm.payload);

  std::vector<std::uint32_t> inv(n);
  for (std::uint32_t i = 0; i < n; ++i) inv[pkg.perm[i]] = i;
  rec->effective.resize(n, Angle(0));
  for (std::uint32_t j = 0; j < n; ++j)
    rec->effective[j] = rsp_collapse(theta[inv[j]], m_bits[inv[j]]);

  for (std::size_t k = 0; k < pattern->order.size(); ++k)
    rec->secret.r.push_back(
        opts->force_zero_r ? 0
                           : static_cast<std::uint8_t>(ctx.secrets().bit()));

  const PartyId stage2 = mode.merged ? PartyId::Server1 : PartyId::Server2;
  PatternTracker tracker(*pattern);
  std::size_t k = 0;
  while (!tracker.done()) {
    const std::uint32_t v = tracker.current_vertex();
    const Angle d = delta_angle(rec->effective[v], tracker.phi_prime(),
                                rec->secret.r[k]);
    rec->deltas.push_back(d);
    ctx.send(stage2, MsgKind::DeltaMsg, DeltaPayload{v, d});
    Message reply = co_await ctx.recv(stage2, MsgKind::MeasureReply);
    const int b = std::get<ReplyPayload>(reply.payload).bit;
    const int corrected = b ^ rec->secret.r[k];
    rec->raw_replies.push_back(b);
    rec->corrected.push_back(corrected);
    tracker.record(corrected);
    ++k;
  }
  co_return;
}

inline Proc server1_double(PartyContext ctx, std::uint32_t n, bool gossip) {
  Message tm = co_await ctx.recv(PartyId::TrustedCenter,
                                 MsgKind::QubitTransfer);
  const auto held = std::get<std::vector<QubitId>>(tm.payload);
  Message am = co_await ctx.recv(PartyId::Client, MsgKind::AngleList);
  const auto angles = std::get<std::vector<Angle>>(am.payload);
  std::vector<std::uint8_t> bits(n);
  for (std::uint32_t i = 0; i < n; ++i)
    bits[i] = static_cast<std::uint8_t>(ctx.measure_angle(held[i], angles[i]));
  ctx.send(PartyId::Client, MsgKind::BitList, bits);
  if (gossip) {
    // honest-but-curious servers pooling their views mid-run
    ctx.send(PartyId::Server2, MsgKind::AngleList, angles);
    ctx.send(PartyId::Server2, MsgKind::BitList, bits);
  }
  co_return;
}

inline Proc server2_double(PartyContext ctx, const Pattern* pattern,
                           bool gossip, const ProtocolOptions* opts,
                           const ClientRecord* rec, RunOutcome* out) {
  Message tm = co_await ctx.recv(PartyId::TrustedCenter,
                                 MsgKind::QubitTransfer);
  const auto held = std::get<std::vector<QubitId>>(tm.payload);
  if (gossip) {
    co_await ctx.recv(PartyId::Server1, MsgKind::AngleList);
    co_await ctx.recv(PartyId::Server1, MsgKind::BitList);
  }
  const std::size_t measured = pattern->order.size();
  bool built = false;
  for (std::size_t k = 0; k < measured; ++k) {
    Message dm = co_await ctx.recv(PartyId::Client, MsgKind::DeltaMsg);
    if (!built) {
      if (opts->pre_graph_probe)
        opts->pre_graph_probe(
            StageProbe{&ctx.net().pool(), held, rec->effective});
      build_graph_state_ctx(ctx, held, pattern->graph);
      built = true;
    }
    const auto& d = std::get<DeltaPayload>(dm.payload);
    const int b = ctx.measure_angle(held[d.index], d.angle);
    ctx.send(PartyId::Client, MsgKind::MeasureReply,
             ReplyPayload{d.index, static_cast<std::uint8_t>(b)});
  }
  if (!built) {
    if (opts->pre_graph_probe)
      opts->pre_graph_probe(
          StageProbe{&ctx.net().pool(), held, rec->effective});
    build_graph_state_ctx(ctx, held, pattern->graph);
  }
  for (std::uint32_t o : pattern->outputs) out->outputs.push_back(held[o]);
  co_return;
}

// Both server roles joined into one machine; message kinds and payload
// sequences match the two-server run exactly.
inline Proc server_merged(PartyContext ctx, const Pattern* pattern,
                          std::uint32_t n, const ProtocolOptions* opts,
                          const ClientRecord* rec, RunOutcome* out) {
  Message ta = co_await ctx.recv(PartyId::TrustedCenter,
                                 MsgKind::QubitTransfer);
  const auto a_half = std::get<std::vector<QubitId>>(ta.payload);
  Message tb = co_await ctx.recv(PartyId::TrustedCenter,
                                 MsgKind::QubitTransfer);
  const auto held = std::get<std::vector<QubitId>>(tb.payload);

  Message am = co_await ctx.recv(PartyId::Client, MsgKind::AngleList);
  const auto angles = std::get<std::vector<Angle>>(am.payload);
  std::vector<std::uint8_t> bits(n);
  for (std::uint32_t i = 0; i < n; ++i)
    bits[i] =
        static_cast<std::uint8_t>(ctx.measure_angle(a_half[i], angles[i]));
  ctx.send(PartyId::Client, MsgKind::BitList, bits);

  const std::size_t measured = pattern->order.size();
  bool built = false;
  for (std::size_t k = 0; k < measured; ++k) {
    Message dm = co_await ctx.recv(PartyId::Client, MsgKind::DeltaMsg);
    if (!built) {
      if (opts->pre_graph_probe)
        opts->pre_graph_probe(
            StageProbe{&ctx.net().pool(), held, rec->effective});
      build_graph_state_ctx(ctx, held, pattern->graph);
      built = true;
    }
    const auto& d = std::get<DeltaPayload>(dm.payload);
    const int b = ctx.measure_angle(held[d.index], d.angle);
    ctx.send(PartyId::Client, MsgKind::MeasureReply,
             ReplyPayload{d.index, static_cast<std::uint8_t>(b)});
  }
  if (!built) build_graph_state_ctx(ctx, held, pattern->graph);
  for (std::uint32_t o : pattern->outputs) out->outputs.push_back(held[o]);
  co_return;
}

// ---------------- triple-server ----------------

struct TripleWiring {
  std::vector<QubitId> a, b1, a_prime, b2;
};

inline Proc tc_triple(PartyContext ctx, int n, TripleWiring* wiring) {
  for (int i = 0; i < n; ++i) {
    auto [a, b1] = ctx.alloc_bell(0, 0);
    wiring->a.push_back(a);
    wiring->b1.push_back(b1);
  }
  for (int i = 0; i < n; ++i) {
    auto [ap, b2] = ctx.alloc_bell(0, 0);
    wiring->a_prime.push_back(ap);
    wiring->b2.push_back(b2);
  }
  ctx.send(PartyId::Client, MsgKind::QubitTransfer, wiring->a);
  ctx.send(PartyId::Server1, MsgKind::QubitTransfer, wiring->b1);
  ctx.send(PartyId::Client, MsgKind::QubitTransfer, wiring->a_prime);
  ctx.send(PartyId::Server2, MsgKind::QubitTransfer, wiring->b2);
  co_return;
}

inline Proc server3_triple(PartyContext ctx) {
  Message tm = co_await ctx.recv(PartyId::Client, MsgKind::QubitTransfer);
  const auto held = std::get<std::vector<QubitId>>(tm.payload);
  std::vector<std::uint8_t> result;
  for (std::size_t i = 0; i + 1 < held.size(); i += 2) {
    auto [x, z] = ctx.measure_bell(held[i], held[i + 1]);
    result.push_back(static_cast<std::uint8_t>(x));
    result.push_back(static_cast<std::uint8_t>(z));
  }
  ctx.send(PartyId::Client, MsgKind::BitList, result);
  co_return;
}

inline Proc client_triple(PartyContext ctx, const Pattern* pattern,
                          TripleConfig cfg, const ProtocolOptions* opts,
                          ClientRecord* rec, const TripleWiring* wiring) {
  const int m = cfg.target_pairs;
  const int n = cfg.total_pairs();

  Message ta = co_await ctx.recv(PartyId::TrustedCenter,
                                 MsgKind::QubitTransfer);
  const auto a_list = std::get<std::vector<QubitId>>(ta.payload);
  Message tb = co_await ctx.recv(PartyId::TrustedCenter,
                                 MsgKind::QubitTransfer);
  const auto ap_list = std::get<std::vector<QubitId>>(tb.payload);

  // forwarding choice per arriving particle; first m usable of each kind
  std::vector<std::uint32_t> s, t;
  for (int k = 0; k < n; ++k)
    if (ctx.secrets().bernoulli(cfg.forward_probability))
      s.push_back(static_cast<std::uint32_t>(k));
  for (int l = 0; l < n; ++l)
    if (ctx.secrets().bernoulli(cfg.forward_probability))
      t.push_back(static_cast<std::uint32_t>(l));
  if (static_cast<int>(s.size()) < m || static_cast<int>(t.size()) < m)
    throw ProtocolAbort("insufficient pairs");
  s.resize(m);
  t.resize(m);
  rec->s_positions = s;
  rec->t_positions = t;

  std::vector<QubitId> forwards;
  for (int i = 0; i < m; ++i) {
    forwards.push_back(a_list[s[i]]);
    forwards.push_back(ap_list[t[i]]);
  }
  ctx.send(PartyId::Server3, MsgKind::QubitTransfer, forwards);

  Message sm = co_await ctx.recv(PartyId::Server3, MsgKind::BitList);
  const auto& xz = std::get<std::vector<std::uint8_t>>(sm.payload);
  rec->secret.x.assign(n, 0);
  rec->secret.z.assign(n, 0);
  for (int i = 0; i < m; ++i) {
    rec->swap_outcomes.emplace_back(xz[2 * i], xz[2 * i + 1]);
    rec->secret.x[s[i]] = xz[2 * i];
    rec->secret.z[s[i]] = xz[2 * i + 1];
  }

  if (opts->post_swap_probe) {
    std::vector<std::pair<QubitId, QubitId>> pairs;
    for (int i = 0; i < m; ++i)
      pairs.emplace_back(wiring->b1[s[i]], wiring->b2[t[i]]);
    opts->post_swap_probe(
        SwapProbe{&ctx.net().pool(), pairs, rec->swap_outcomes});
  }

  auto& theta = rec->secret.theta_tilde;
  for (int i = 0; i < n; ++i)
    theta.push_back(opts->force_zero_theta ? Angle(0) : ctx.secrets().angle());

  // full-length encoded list; fresh uniform dummies at discarded positions
  std::vector<bool> kept(n, false);
  for (int i = 0; i < m; ++i) kept[s[i]] = true;
  std::vector<Angle> encoded(n, Angle(0));
  for (int i = 0; i < n; ++i)
    encoded[i] = kept[i] ? mf_encode(theta[i], rec->secret.x[i],
                                     rec->secret.z[i])
                         : ctx.secrets().angle();
  ctx.send(PartyId::Server1, MsgKind::AngleList, encoded);

  Message mm = co_await ctx.recv(PartyId::Server1, MsgKind::BitList);
  const auto& m_bits = std::get<std::vector<std::uint8_t>>(mm.payload);

  rec->effective.resize(m, Angle(0));
  for (int i = 0; i < m; ++i)
    rec->effective[i] = rsp_collapse(theta[s[i]], m_bits[s[i]]);

  std::vector<std::uint8_t> keep_mask(n, 0);
  for (int i = 0; i < m; ++i) keep_mask[t[i]] = 1;
  ctx.send(PartyId::Server2, MsgKind::BitList, keep_mask);

  for (std::size_t k = 0; k < pattern->order.size(); ++k)
    rec->secret.r.push_back(
        opts->force_zero_r ? 0
                           : static_cast<std::uint8_t>(ctx.secrets().bit()));

  PatternTracker tracker(*pattern);
  std::size_t k = 0;
  while (!tracker.done()) {
    const std::uint32_t v = tracker.current_vertex();
    const Angle d = delta_angle(rec->effective[v], tracker.phi_prime(),
                                rec->secret.r[k]);
    rec->deltas.push_back(d);
    ctx.send(PartyId::Server2, MsgKind::DeltaMsg, DeltaPayload{v, d});
    Message reply = co_await ctx.recv(PartyId::Server2, MsgKind::MeasureReply);
    const int b = std::get<ReplyPayload>(reply.payload).bit;
    const int corrected = b ^ rec->secret.r[k];
    rec->raw_replies.push_back(b);
    rec->corrected.push_back(corrected);
    tracker.record(corrected);
    ++k;
  }
  co_return;
}

inline Proc server1_triple(PartyContext ctx, std::uint32_t n) {
  Message tm = co_await ctx.recv(PartyId::TrustedCenter,
                                 MsgKind::QubitTransfer);
  const auto held = std::get<std::vector<QubitId>>(tm.payload);
  Message am = co_await ctx.recv(PartyId::Client, MsgKind::AngleList);
  const auto angles = std::get<std::vector<Angle>>(am.payload);
  std::vector<std::uint8_t> bits(n);
  for (std::uint32_t i = 0; i < n; ++i)
    bits[i] = static_cast<std::uint8_t>(ctx.measure_angle(held[i], angles[i]));
  ctx.send(PartyId::Client, MsgKind::BitList, bits);
  co_return;
}

inline Proc server2_triple(PartyContext ctx, const Pattern* pattern,
                           const ProtocolOptions* opts,
                           const ClientRecord* rec, RunOutcome* out) {
  Message tm = co_await ctx.recv(PartyId::TrustedCenter,
                                 MsgKind::QubitTransfer);
  const auto held = std::get<std::vector<QubitId>>(tm.payload);
  Message km = co_await ctx.recv(PartyId::Client, MsgKind::BitList);
  const auto& mask = std::get<std::vector<std::uint8_t>>(km.payload);
  std::vector<QubitId> kept;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) kept.push_back(held[i]);

  const std::size_t measured = pattern->order.size();
  bool built = false;
  for (std::size_t k = 0; k < measured; ++k) {
    Message dm = co_await ctx.recv(PartyId::Client, MsgKind::DeltaMsg);
    if (!built) {
      if (opts->pre_graph_probe)
        opts->pre_graph_probe(
            StageProbe{&ctx.net().pool(), kept, rec->effective});
      build_graph_state_ctx(ctx, kept, pattern->graph);
      built = true;
    }
    const auto& d = std::get<DeltaPayload>(dm.payload);
    const int b = ctx.measure_angle(kept[d.index], d.angle);
    ctx.send(PartyId::Client, MsgKind::MeasureReply,
             ReplyPayload{d.index, static_cast<std::uint8_t>(b)});
  }
  if (!built) build_graph_state_ctx(ctx, kept, pattern->graph);
  for (std::uint32_t o : pattern->outputs) out->outputs.push_back(kept[o]);
  co_return;
}

}  // namespace detail

// Runs one protocol instance end to end over a fresh pool and network.
// The pattern is the client's secret program; servers see only its shape.
inline RunOutcome execute_protocol(Protocol proto, const Pattern& pattern,
                                   const ProtocolOptions& opts,
                                   RunRandoms rng) {
  RunOutcome out;
  out.protocol = proto;
  const auto topology = standard_topology(proto, opts);
  validate_topology(proto, topology);
  Network net(out.pool, topology, opts.record_transcript);

  const std::uint32_t n = pattern.graph.vertex_count;
  auto ctx = [&](PartyId p, RandomSource* secrets) {
    return PartyContext(p, net, *secrets, *rng.quantum);
  };

  std::map<PartyId, Proc> parties;
  detail::TripleWiring wiring;
  switch (proto) {
    case Protocol::Single:
      parties.emplace(PartyId::Client,
                      detail::client_single(ctx(PartyId::Client, rng.client),
                                            &pattern, &opts, &out.client));
      parties.emplace(PartyId::Server1,
                      detail::server_single(ctx(PartyId::Server1, rng.quantum),
                                            &pattern, &out));
      break;
    case Protocol::BfkDouble:
    case Protocol::MfDouble:
    case Protocol::NewDouble:
    case Protocol::NewSingle: {
      const auto mode = detail::double_mode(proto);
      parties.emplace(PartyId::TrustedCenter,
                      detail::tc_double(ctx(PartyId::TrustedCenter, rng.tc), n,
                                        mode, &opts));
      parties.emplace(PartyId::Client,
                      detail::client_double(ctx(PartyId::Client, rng.client),
                                            &pattern, mode, &opts,
                                            &out.client));
      if (mode.merged) {
        parties.emplace(
            PartyId::Server1,
            detail::server_merged(ctx(PartyId::Server1, rng.quantum), &pattern,
                                  n, &opts, &out.client, &out));
      } else {
        parties.emplace(PartyId::Server1,
                        detail::server1_double(
                            ctx(PartyId::Server1, rng.quantum), n,
                            opts.gossip && proto == Protocol::NewDouble));
        parties.emplace(
            PartyId::Server2,
            detail::server2_double(ctx(PartyId::Server2, rng.quantum),
                                   &pattern,
                                   opts.gossip && proto == Protocol::NewDouble,
                                   &opts, &out.client, &out));
      }
      break;
    }
    case Protocol::Triple: {
      TripleConfig cfg = opts.triple;
      cfg.target_pairs = static_cast<int>(n);
      const int total = cfg.total_pairs();
      parties.emplace(PartyId::TrustedCenter,
                      detail::tc_triple(ctx(PartyId::TrustedCenter, rng.tc),
                                        total, &wiring));
      parties.emplace(PartyId::Client,
                      detail::client_triple(ctx(PartyId::Client, rng.client),
                                            &pattern, cfg, &opts, &out.client,
                                            &wiring));
      parties.emplace(
          PartyId::Server1,
          detail::server1_triple(ctx(PartyId::Server1, rng.quantum),
                                 static_cast<std::uint32_t>(total)));
      parties.emplace(PartyId::Server2,
                      detail::server2_triple(
                          ctx(PartyId::Server2, rng.quantum), &pattern, &opts,
                          &out.client, &out));
      parties.emplace(PartyId::Server3,
                      detail::server3_triple(ctx(PartyId::Server3,
                                                 rng.quantum)));
      break;
    }
  }

  try {
    run_schedule(parties);
  } catch (const ProtocolAbort& e) {
    out.aborted = true;
    out.abort_reason = e.what();
  }

  out.transcript = net.transcript();
  out.custody_log = net.custody_log();

  if (!out.aborted) {
    PatternTracker tracker(pattern);
    for (int m : out.client.corrected) tracker.record(m);
    for (std::uint32_t o : pattern.outputs) {
      out.x_corr.push_back(tracker.x_corr(o));
      out.z_corr.push_back(tracker.z_corr(o));
    }
  }
  return out;
}

inline RunOutcome execute_seeded(Protocol proto, const Pattern& pattern,
                                 const ProtocolOptions& opts,
                                 std::uint64_t master) {
  SeedPlan plan{master};
  SeededRandom client(plan.client());
  SeededRandom tc(plan.center());
  SeededRandom quantum(plan.quantum());
  return execute_protocol(proto, pattern, opts,
                          RunRandoms{&client, &tc, &quantum});
}

// Undoes everything the client can account for on the delegated outputs:
// the residual preparation rotation Rz(theta_eff) and the X/Z byproducts.
// After this the outputs match the plain circuit state up to global phase.
inline void apply_output_corrections(const Pattern& pattern,
                                     const RunOutcome& outcome,
                                     RegisterPool& pool) {
  for (std::size_t k = 0; k < outcome.outputs.size(); ++k) {
    const std::uint32_t vertex = pattern.outputs[k];
    pool.apply_rz(outcome.outputs[k],
                  outcome.client.effective[vertex].negated());
    if (outcome.x_corr[k]) pool.apply_x(outcome.outputs[k]);
    if (outcome.z_corr[k]) pool.apply_z(outcome.outputs[k]);
  }
}

// Exact delegated output distribution via exhaustive enumeration of the
// quantum branches (client and center secrets pinned by the seed). Optionally
// reports the worst per-branch corrected fidelity against a reference state.
inline OutputDistribution exact_protocol_distribution(
    Protocol proto, const Pattern& pattern, const ProtocolOptions& opts,
    std::uint64_t master, const std::vector<Amplitude>* reference = nullptr,
    double* min_fidelity = nullptr) {
  SeedPlan plan{master};
  OutputDistribution dist;
  double total = 0.0;
  if (min_fidelity) *min_fidelity = 1.0;
  enumerate_branches(
      [&](RandomSource& quantum) {
        SeededRandom client(plan.client());
        SeededRandom tc(plan.center());
        return execute_protocol(proto, pattern, opts,
                                RunRandoms{&client, &tc, &quantum});
      },
      [&](RunOutcome outcome, double weight) {
        if (outcome.aborted) throw ProtocolAbort(outcome.abort_reason);
        total += weight;
        if (outcome.outputs.empty()) {
          dist[0] += weight;
          return;
        }
        const auto joint = outcome.pool.joint_state(outcome.outputs);
        std::uint64_t flip = 0;
        for (std::size_t k = 0; k < outcome.outputs.size(); ++k)
          if (outcome.x_corr[k])
            flip |= std::uint64_t{1} << (outcome.outputs.size() - 1 - k);
        for (std::size_t i = 0; i < joint.size(); ++i) {
          const double p = std::norm(joint[i]);
          if (p > 0.0) dist[i ^ flip] += weight * p;
        }
        if (reference && min_fidelity) {
          apply_output_corrections(pattern, outcome, outcome.pool);
          const double f = outcome.pool.fidelity(outcome.outputs, *reference);
          *min_fidelity = std::min(*min_fidelity, f);
        }
      });
  if (std::abs(total - 1.0) > 1e-9)
    throw std::runtime_error("enumeration weights do not sum to 1");
  return dist;
}

struct RunReport {
  std::string protocol;
  int n = 0;
  std::uint64_t seed = 0;
  std::string mode;
  int trials = 1;
  nlohmann::json transcript;
  OutputDistribution distribution;              // enumerate mode
  std::vector<std::vector<int>> outcomes;       // sample mode, per trial
  bool oracle_checked = false;
  bool oracle_match = true;
  double oracle_tv = 0.0;
  double min_fidelity = 1.0;
  bool aborted = false;
  std::string abort_reason;
  int completed_trials = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"protocol", protocol}, {"n", n},     {"seed", seed},
                     {"mode", mode},         {"trials", trials},
                     {"aborted", aborted}};
    if (aborted) j["abort_reason"] = abort_reason;
    j["completed_trials"] = completed_trials;
    if (mode == "enumerate") {
      nlohmann::json d = nlohmann::json::object();
      for (const auto& [bits, p] : distribution)
        d[std::to_string(bits)] = p;
      j["distribution"] = d;
    } else {
      j["outcomes"] = outcomes;
    }
    if (oracle_checked) {
      j["oracle_match"] = oracle_match;
      j["checks"] = {{"oracle_tv", oracle_tv},
                     {"min_fidelity", min_fidelity}};
    }
    j["transcript"] = transcript;
    return j;
  }
};

// End-to-end run of a delegated circuit, with the oracle comparison the
// report promises whenever a circuit was supplied.
inline RunReport run_protocol(Protocol proto, const Circuit& circuit,
                              std::uint64_t seed, const std::string& mode,
                              int trials = 1,
                              const ProtocolOptions& opts = {}) {
  if (mode != "sample" && mode != "enumerate")
    throw ConfigError("mode must be sample or enumerate");
  if (trials < 1) throw ConfigError("trials must be >= 1");

  const Pattern pattern = compile(circuit);
  const auto oracle = circuit_oracle(circuit);
  const auto oracle_dist = born_distribution(oracle);

  RunReport report;
  report.protocol = protocol_name(proto);
  report.n = static_cast<int>(pattern.graph.vertex_count);
  report.seed = seed;
  report.mode = mode;
  report.trials = trials;

  if (mode == "enumerate") {
    try {
      double min_fid = 1.0;
      report.distribution = exact_protocol_distribution(
          proto, pattern, opts, seed, &oracle, &min_fid);
      report.min_fidelity = min_fid;
      report.oracle_tv = total_variation(report.distribution, oracle_dist);
      report.oracle_checked = true;
      report.oracle_match = report.oracle_tv < 1e-9;
      report.completed_trials = 1;
      RunOutcome one = execute_seeded(proto, pattern, opts, seed);
      report.transcript = transcript_to_json(one.transcript);
    } catch (const ProtocolAbort& e) {
      report.aborted = true;
      report.abort_reason = e.what();
    }
    return report;
  }

  SeededRandom readout(SeedPlan{seed}.readout());
  double worst_fidelity = 1.0;
  for (int trial = 0; trial < trials; ++trial) {
    const std::uint64_t trial_seed =
        trials == 1 ? seed : SeedPlan::trial(seed, trial);
    RunOutcome outcome = execute_seeded(proto, pattern, opts, trial_seed);
    if (trial == 0) report.transcript = transcript_to_json(outcome.transcript);
    if (outcome.aborted) {
      report.aborted = true;
      report.abort_reason = outcome.abort_reason;
      continue;
    }
    ++report.completed_trials;
    if (!outcome.outputs.empty()) {
      RegisterPool corrected = outcome.pool.fork();
      apply_output_corrections(pattern, outcome, corrected);
      const double f = corrected.fidelity(outcome.outputs, oracle);
      worst_fidelity = std::min(worst_fidelity, f);
      std::vector<int> bits;
      for (QubitId q : outcome.outputs) bits.push_back(corrected.measure_z(q, readout));
      report.outcomes.push_back(std::move(bits));
    } else {
      report.outcomes.push_back({});
    }
  }
  report.min_fidelity = worst_fidelity;
  report.oracle_checked = report.completed_trials > 0;
  report.oracle_match = worst_fidelity > 1.0 - tol::kFidelity;
  if (report.completed_trials > 0) {
    report.aborted = false;
    report.abort_reason.clear();
  }
  return report;
}

}  // namespace bqcsim
