#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "bqcsim/angle.hpp"
#include "bqcsim/mbqc.hpp"
#include "bqcsim/parallel.hpp"
#include "bqcsim/proto.hpp"
#include "bqcsim/qstate.hpp"
#include "bqcsim/random.hpp"
#include "bqcsim/wire.hpp"

namespace bqcsim {

// Exact probability of each canonicalized adversary view. Values are doubles
// assembled from exact Born weights; treat them as 1e-12-rounded rationals.
using TranscriptDistribution = std::map<std::string, double>;

struct CanonicalOpts {
  // endpoint normalization, e.g. mapping Server2 onto Server1 when comparing
  // a merged-server run against a two-server run
  std::map<PartyId, PartyId> relabel;
};

// Coalition-observable bytes only: message endpoints, kinds and payloads in
// order, then the coalition's custody history. Qubit identities are
// relabeled by first appearance (particles carry no global labels, so the
// allocation order must not distinguish views).
inline std::string canonical_view(const Transcript& view,
                                  const std::vector<CustodyEvent>& custody_log,
                                  const std::set<PartyId>& coalition,
                                  const CanonicalOpts& copts = {}) {
  std::map<std::uint32_t, std::uint32_t> qubit_label;
  auto label = [&](QubitId q) {
    auto [it, inserted] = qubit_label.try_emplace(
        q.value, static_cast<std::uint32_t>(qubit_label.size()));
    return it->second;
  };
  auto party = [&](PartyId p) {
    const auto it = copts.relabel.find(p);
    return static_cast<char>(it == copts.relabel.end() ? static_cast<int>(p)
                                                       : static_cast<int>(it->second));
  };

  std::string key;
  key.reserve(64 + view.size() * 8);
  for (const auto& m : view) {
    key.push_back(party(m.channel.from));
    key.push_back(party(m.channel.to));
    key.push_back(static_cast<char>(m.kind));
    switch (m.kind) {
      case MsgKind::AngleList:
        for (Angle a : std::get<std::vector<Angle>>(m.payload))
          key.push_back(static_cast<char>(a.eighths()));
        break;
      case MsgKind::BitList:
        for (auto b : std::get<std::vector<std::uint8_t>>(m.payload))
          key.push_back(static_cast<char>(b));
        break;
      case MsgKind::DeltaMsg: {
        const auto& d = std::get<DeltaPayload>(m.payload);
        key.push_back(static_cast<char>(d.index));
        key.push_back(static_cast<char>(d.angle.eighths()));
        break;
      }
      case MsgKind::MeasureReply: {
        const auto& r = std::get<ReplyPayload>(m.payload);
        key.push_back(static_cast<char>(r.index));
        key.push_back(static_cast<char>(r.bit));
        break;
      }
      case MsgKind::QubitTransfer: {
        const auto& qs = std::get<std::vector<QubitId>>(m.payload);
        key.push_back(static_cast<char>(qs.size()));
        for (QubitId q : qs) key.push_back(static_cast<char>(label(q)));
        break;
      }
      case MsgKind::SecretPackage: {
        const auto& s = std::get<SecretPackage>(m.payload);
        for (auto v : s.x) key.push_back(static_cast<char>(v));
        for (auto v : s.z) key.push_back(static_cast<char>(v));
        for (auto v : s.perm) key.push_back(static_cast<char>(v));
        break;
      }
    }
    key.push_back('\x7f');
  }
  key.push_back('|');
  for (const auto& ev : custody_log)
    if (coalition.contains(ev.to)) {
      key.push_back(static_cast<char>(label(ev.qubit)));
      key.push_back(party(ev.to));
    }
  return key;
}

struct BlindSetup {
  Protocol proto = Protocol::NewDouble;
  std::vector<Angle> phi;  // base angles of the delegated chain, all measured
  std::set<PartyId> coalition;
  ProtocolOptions opts;
  CanonicalOpts canon;
};

inline double enumeration_space_estimate(Protocol proto, std::size_t n) {
  double space = std::pow(8.0, static_cast<double>(n)) *  // theta draws
                 std::pow(2.0, static_cast<double>(n)) *  // r draws
                 std::pow(2.0, static_cast<double>(n));   // stage-2 branches
  switch (proto) {
    case Protocol::Single:
      break;
    case Protocol::BfkDouble:
      space *= std::pow(2.0, static_cast<double>(n));
      break;
    case Protocol::MfDouble:
      space *= std::pow(8.0, static_cast<double>(n));
      break;
    case Protocol::NewDouble:
    case Protocol::NewSingle: {
      space *= std::pow(8.0, static_cast<double>(n));
      double fact = 1.0;
      for (std::size_t i = 2; i <= n; ++i) fact *= static_cast<double>(i);
      space *= fact;
      break;
    }
    case Protocol::Triple:
      throw ConfigError("exact enumeration of the triple protocol unsupported");
  }
  return space;
}

// Exhaustively enumerates every client choice, trusted-center secret and
// measurement branch with exact Born weights and groups leaves by the
// coalition's canonical view.
inline TranscriptDistribution transcript_distribution(
    const BlindSetup& setup) {
  const std::size_t n = setup.phi.size();
  if (enumeration_space_estimate(setup.proto, n) > 1e7)
    throw ConfigError("transcript_distribution: enumeration space too large");
  const Pattern pattern = chain_pattern(setup.phi);

  TranscriptDistribution dist;
  double total = 0.0;
  enumerate_branches(
      [&](RandomSource& rs) {
        return execute_protocol(setup.proto, pattern, setup.opts,
                                RunRandoms{&rs, &rs, &rs});
      },
      [&](RunOutcome outcome, double weight) {
        const Transcript view =
            adversary_view(outcome.transcript, setup.coalition);
        dist[canonical_view(view, outcome.custody_log, setup.coalition,
                            setup.canon)] += weight;
        total += weight;
      });
  if (std::abs(total - 1.0) > 1e-9)
    throw std::runtime_error("transcript distribution does not sum to 1");
  return dist;
}

struct EqualityReport {
  bool equal = true;
  double max_deviation = 0.0;
  std::string witness;  // hex prefix of the worst-deviating view
};

inline EqualityReport blindness_equal(const TranscriptDistribution& a,
                                      const TranscriptDistribution& b,
                                      double tolerance = 1e-9) {
  EqualityReport rep;
  auto scan = [&](const TranscriptDistribution& x,
                  const TranscriptDistribution& y) {
    for (const auto& [key, p] : x) {
      const auto it = y.find(key);
      const double q = it == y.end() ? 0.0 : it->second;
      const double dev = std::abs(p - q);
      if (dev > rep.max_deviation) {
        rep.max_deviation = dev;
        std::ostringstream hex;
        for (std::size_t i = 0; i < key.size() && i < 24; ++i)
          hex << std::hex << (static_cast<unsigned>(key[i]) & 0xffu) << ' ';
        rep.witness = hex.str();
      }
    }
  };
  scan(a, b);
  scan(b, a);
  rep.equal = rep.max_deviation < tolerance;
  return rep;
}

inline std::set<PartyId> default_coalition(Protocol proto) {
  switch (proto) {
    case Protocol::Single: return {PartyId::Server1};
    case Protocol::BfkDouble:
    case Protocol::MfDouble: return {PartyId::Server2};
    case Protocol::NewDouble: return {PartyId::Server1, PartyId::Server2};
    case Protocol::NewSingle: return {PartyId::Server1};
    case Protocol::Triple: return {PartyId::Server1, PartyId::Server2};
  }
  return {};
}

struct SweepResult {
  bool identical = true;
  double max_deviation = 0.0;
  std::string witness;
  std::size_t assignments = 0;
};

// Compares the coalition's exact view distribution across every base-angle
// assignment phi in S^n. Blindness holds iff all distributions coincide.
inline SweepResult blindness_sweep(Protocol proto, int n,
                                   const std::set<PartyId>& coalition,
                                   const ProtocolOptions& opts = {},
                                   const CanonicalOpts& canon = {},
                                   double tolerance = 1e-9,
                                   unsigned threads = 1) {
  std::size_t count = 1;
  for (int i = 0; i < n; ++i) count *= 8;
  auto assignment = [&](std::size_t index) {
    std::vector<Angle> phi;
    for (int i = 0; i < n; ++i) {
      phi.push_back(Angle(static_cast<int>(index % 8)));
      index /= 8;
    }
    return phi;
  };
  auto dists = parallel_map<TranscriptDistribution>(
      count,
      [&](std::size_t i) {
        BlindSetup setup{proto, assignment(i), coalition, opts, canon};
        return transcript_distribution(setup);
      },
      threads);
  SweepResult result;
  result.assignments = count;
  for (std::size_t i = 1; i < count; ++i) {
    const EqualityReport eq = blindness_equal(dists[0], dists[i], tolerance);
    if (eq.max_deviation > result.max_deviation) {
      result.max_deviation = eq.max_deviation;
      result.witness = eq.witness;
    }
    if (!eq.equal) result.identical = false;
  }
  return result;
}

struct CheckReport {
  std::string check;
  int cases = 0;
  std::vector<std::string> failures;
  double statistic = 0.0;
  nlohmann::json detail;

  bool pass() const { return failures.empty(); }
  nlohmann::json to_json() const {
    return {{"check", check},
            {"cases", cases},
            {"failures", failures},
            {"statistic", statistic},
            {"detail", detail}};
  }
};

// 64-case sweep of the measurement-equivalence claim: measuring one half of
// |phi_{x,z}> at (-1)^x*t + z*pi collapses the partner exactly as measuring
// |phi_{0,0}> at t does, outcome probabilities included.
inline CheckReport rsp_equivalence() {
  CheckReport rep;
  rep.check = "rsp-equivalence";
  double worst = 0.0;
  for (int t = 0; t < 8; ++t)
    for (int x = 0; x < 2; ++x)
      for (int z = 0; z < 2; ++z)
        for (int m = 0; m < 2; ++m) {
          ++rep.cases;
          RegisterPool corrected;
          auto [ca, cb] = corrected.alloc_bell(x, z);
          const double p_corr =
              corrected.project_angle(ca, mf_encode(Angle(t), x, z), m);
          RegisterPool plain;
          auto [pa, pb] = plain.alloc_bell(0, 0);
          const double p_plain = plain.project_angle(pa, Angle(t), m);
          const std::vector<QubitId> probe{pb};
          const auto reference = plain.joint_state(probe);
          const std::vector<QubitId> held{cb};
          const double f = corrected.fidelity(held, reference);
          const double dev =
              std::max(std::abs(p_corr - p_plain), 1.0 - f);
          worst = std::max(worst, dev);
          if (f < 1.0 - tol::kFidelity ||
              std::abs(p_corr - p_plain) > tol::kFidelity)
            rep.failures.push_back(
                "t=" + std::to_string(t) + " x=" + std::to_string(x) +
                " z=" + std::to_string(z) + " m=" + std::to_string(m) +
                " fidelity=" + std::to_string(f));
        }
  rep.statistic = worst;
  return rep;
}

// Entanglement-swapping table in the shape the triple protocol uses it: two
// source pairs per swap, Bell measurements on the travelling halves, the
// remote pair left in the labeled Bell state. All 16 joint outcomes of the
// two swaps occur with probability 1/16.
inline CheckReport swap_table() {
  CheckReport rep;
  rep.check = "swap-table";
  rep.detail = nlohmann::json::array();
  double worst = 0.0;
  for (int x1 = 0; x1 < 2; ++x1)
    for (int z1 = 0; z1 < 2; ++z1)
      for (int x2 = 0; x2 < 2; ++x2)
        for (int z2 = 0; z2 < 2; ++z2) {
          ++rep.cases;
          RegisterPool pool;
          auto [a1, b1_1] = pool.alloc_bell(0, 0);
          auto [ap1, b2_1] = pool.alloc_bell(0, 0);
          auto [a2, b1_2] = pool.alloc_bell(0, 0);
          auto [ap2, b2_2] = pool.alloc_bell(0, 0);
          const double q1 = pool.project_bell(a1, ap1, x1, z1);
          const double q2 = pool.project_bell(a2, ap2, x2, z2);
          const double joint = q1 * q2;

          auto fidelity_with = [&](QubitId u, QubitId v, int x, int z) {
            RegisterPool ref;
            auto [ra, rb] = ref.alloc_bell(x, z);
            const std::vector<QubitId> pair_ref{ra, rb};
            const std::vector<QubitId> pair{u, v};
            return pool.fidelity(pair, ref.joint_state(pair_ref));
          };
          const double f1 = fidelity_with(b1_1, b2_1, x1, z1);
          const double f2 = fidelity_with(b1_2, b2_2, x2, z2);

          worst = std::max({worst, std::abs(joint - 1.0 / 16.0), 1.0 - f1,
                            1.0 - f2});
          rep.detail.push_back({{"outcome", {x1, z1, x2, z2}},
                                {"probability", joint},
                                {"fidelity", {f1, f2}}});
          if (f1 < 1.0 - tol::kFidelity || f2 < 1.0 - tol::kFidelity ||
              std::abs(joint - 1.0 / 16.0) > tol::kFidelity)
            rep.failures.push_back("outcome (" + std::to_string(x1) + "," +
                                   std::to_string(z1) + ")(" +
                                   std::to_string(x2) + "," +
                                   std::to_string(z2) + ")");
        }
  rep.statistic = worst;
  return rep;
}

struct UniformityReport {
  double chi_square = 0.0;
  double p_value = 1.0;
  bool pass = false;
  std::array<std::uint64_t, 8> counts{};
};

// Pools every delta message over seeded trials and tests uniformity over the
// eight-element angle set. Requires >= 100 expected observations per cell.
inline UniformityReport delta_uniformity(Protocol proto, int n, int trials,
                                         std::uint64_t seed,
                                         const ProtocolOptions& opts = {}) {
  if (static_cast<double>(trials) * n / 8.0 < 100.0)
    throw ConfigError("delta_uniformity: insufficient trials");
  // zero base angles: all masking comes from theta and r, and the injected
  // bias controls collapse the deltas onto {0, pi} instead of averaging out
  const std::vector<Angle> phi(static_cast<std::size_t>(n), Angle(0));
  const Pattern pattern = chain_pattern(phi);

  UniformityReport rep;
  ProtocolOptions run_opts = opts;
  run_opts.record_transcript = false;
  for (int trial = 0; trial < trials; ++trial) {
    RunOutcome outcome = execute_seeded(proto, pattern, run_opts,
                                        SeedPlan::trial(seed, trial));
    for (Angle d : outcome.client.deltas)
      ++rep.counts[static_cast<std::size_t>(d.eighths())];
  }
  std::uint64_t total = 0;
  for (auto c : rep.counts) total += c;
  const double expected = static_cast<double>(total) / 8.0;
  for (auto c : rep.counts) {
    const double diff = static_cast<double>(c) - expected;
    rep.chi_square += diff * diff / expected;
  }
  const boost::math::chi_squared dist(7.0);
  rep.p_value = boost::math::cdf(boost::math::complement(dist, rep.chi_square));
  rep.pass = rep.p_value > 0.001;
  return rep;
}

// Marginal distribution of the single delta message at n = 1, exact.
inline std::array<double, 8> delta_marginal_exact(Protocol proto, Angle phi,
                                                  const ProtocolOptions& opts = {}) {
  std::array<double, 8> marginal{};
  const std::vector<Angle> phis{phi};
  const Pattern pattern = chain_pattern(phis);
  ProtocolOptions run_opts = opts;
  run_opts.record_transcript = false;
  enumerate_branches(
      [&](RandomSource& rs) {
        return execute_protocol(proto, pattern, run_opts,
                                RunRandoms{&rs, &rs, &rs});
      },
      [&](RunOutcome outcome, double weight) {
        marginal[static_cast<std::size_t>(
            outcome.client.deltas.at(0).eighths())] += weight;
      });
  return marginal;
}

namespace detail {

inline Angle mf_decode(Angle encoded, int x, int z) {
  Angle t = z ? encoded - Angle::pi() : encoded;
  return x ? t.negated() : t;
}

// Joint Born probability of the observed raw outcomes when qubits prepared
// at the hypothesised effective angles are graph-entangled and measured at
// the observed deltas.
inline double view_likelihood(const Pattern& pattern,
                              std::span<const Angle> effective,
                              std::span<const Angle> deltas,
                              std::span<const int> raw) {
  RegisterPool pool;
  std::vector<QubitId> qubits;
  for (std::uint32_t v = 0; v < pattern.graph.vertex_count; ++v)
    qubits.push_back(pool.alloc_plus_theta(effective[v]));
  build_graph_state(pool, qubits, pattern.graph);
  double likelihood = 1.0;
  for (std::size_t k = 0; k < pattern.order.size(); ++k) {
    const std::uint32_t v = pattern.order[k];
    const double p = pool.angle_outcome_prob(qubits[v], deltas[k], raw[k]);
    if (p < 1e-14) return 0.0;  // observed branch impossible here
    likelihood *= pool.project_angle(qubits[v], deltas[k], raw[k]);
  }
  return likelihood;
}

}  // namespace detail

// Exact Bayesian posterior over the hidden permutation given the colluding
// servers' view of one honest run: the encoded angle list, the stage-1
// outcomes, and the delta/reply traffic. Unknowns are marginalized with
// their protocol priors (uniform corrections, angles, r bits and program).
// With the secret package leaked into the view, only the true hypothesis
// survives.
inline std::map<std::vector<std::uint32_t>, double> permutation_posterior(
    const RunOutcome& run, const Pattern& pattern,
    bool secrets_leaked = false) {
  const std::uint32_t n = pattern.graph.vertex_count;

  // coalition observables
  std::vector<Angle> encoded;
  std::vector<std::uint8_t> m_bits;
  std::vector<Angle> deltas(pattern.order.size(), Angle(0));
  std::vector<int> raw(pattern.order.size(), 0);
  std::map<std::uint32_t, std::size_t> slot;
  for (std::size_t k = 0; k < pattern.order.size(); ++k)
    slot[pattern.order[k]] = k;
  for (const auto& msg : run.transcript) {
    if (msg.kind == MsgKind::AngleList)
      encoded = std::get<std::vector<Angle>>(msg.payload);
    else if (msg.kind == MsgKind::BitList)
      m_bits = std::get<std::vector<std::uint8_t>>(msg.payload);
    else if (msg.kind == MsgKind::DeltaMsg) {
      const auto& d = std::get<DeltaPayload>(msg.payload);
      deltas[slot.at(d.index)] = d.angle;
    } else if (msg.kind == MsgKind::MeasureReply) {
      const auto& r = std::get<ReplyPayload>(msg.payload);
      raw[slot.at(r.index)] = r.bit;
    }
  }

  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::map<std::vector<std::uint32_t>, double> posterior;
  double total = 0.0;

  std::vector<Angle> effective(n, Angle(0));
  std::vector<std::uint32_t> inv(n);
  do {
    if (secrets_leaked && perm != run.client.secret.perm) {
      posterior[perm] = 0.0;
      continue;
    }
    double mass = 0.0;
    for (std::uint32_t i = 0; i < n; ++i) inv[perm[i]] = i;
    const std::uint64_t xz_count = std::uint64_t{1} << (2 * n);
    for (std::uint64_t xz = 0; xz < xz_count; ++xz) {
      if (secrets_leaked) {
        bool match = true;
        for (std::uint32_t i = 0; i < n; ++i) {
          const int x = static_cast<int>((xz >> (2 * i)) & 1);
          const int z = static_cast<int>((xz >> (2 * i + 1)) & 1);
          if (x != run.client.secret.x[i] || z != run.client.secret.z[i])
            match = false;
        }
        if (!match) continue;
      }
      for (std::uint32_t j = 0; j < n; ++j) {
        const std::uint32_t i = inv[j];
        const int x = static_cast<int>((xz >> (2 * i)) & 1);
        const int z = static_cast<int>((xz >> (2 * i + 1)) & 1);
        const Angle theta_tilde = detail::mf_decode(encoded[i], x, z);
        effective[j] = rsp_collapse(theta_tilde, m_bits[i]);
      }
      mass += detail::view_likelihood(pattern, effective, deltas, raw);
    }
    posterior[perm] = mass;
    total += mass;
  } while (std::next_permutation(perm.begin(), perm.end()));

  if (total <= 0.0)
    throw std::runtime_error("permutation_posterior: zero total likelihood");
  for (auto& [p, mass] : posterior) mass /= total;
  return posterior;
}

}  // namespace bqcsim
