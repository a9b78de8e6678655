#pragma once

#include <algorithm>
#include <complex>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bqcsim/angle.hpp"
#include "bqcsim/qstate.hpp"
#include "bqcsim/random.hpp"

namespace bqcsim {

struct Graph {
  std::uint32_t vertex_count = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // a < b, sorted
  std::vector<std::uint32_t> inputs;
  std::vector<std::uint32_t> outputs;

  void add_edge(std::uint32_t a, std::uint32_t b) {
    if (a == b) throw ConfigError("graph: self-loop");
    if (a >= vertex_count || b >= vertex_count)
      throw ConfigError("graph: edge references invalid vertex");
    auto e = std::minmax(a, b);
    std::pair<std::uint32_t, std::uint32_t> edge{e.first, e.second};
    if (std::find(edges.begin(), edges.end(), edge) != edges.end())
      throw ConfigError("graph: duplicate edge");
    edges.push_back(edge);
  }

  void sort_edges() { std::sort(edges.begin(), edges.end()); }

  friend bool operator==(const Graph&, const Graph&) = default;
};

// Measurement pattern: graph, per-vertex base angle, measurement order over
// non-output vertices, and X/Z dependency sets.
struct Pattern {
  Graph graph;
  std::vector<Angle> base_angle;                 // by vertex
  std::vector<std::uint32_t> order;              // measured vertices
  std::vector<std::vector<std::uint32_t>> xdep;  // by vertex
  std::vector<std::vector<std::uint32_t>> zdep;  // by vertex
  std::vector<std::uint32_t> outputs;            // bit order, MSB first

  std::size_t measured_count() const { return order.size(); }
};

// Two-wire circuit over J(theta) = H * Rz(theta) and CZ, inputs fixed to
// |+> per wire.
struct Circuit {
  struct Gate {
    enum class Kind { J, CZ };
    Kind kind = Kind::J;
    int wire = 0;
    Angle angle;
  };

  int wires = 1;
  std::vector<Gate> gates;

  static Circuit from_json(const nlohmann::json& j) {
    Circuit c;
    c.wires = j.at("wires").get<int>();
    if (c.wires < 1 || c.wires > 2)
      throw ConfigError("circuit: wires must be 1 or 2");
    for (const auto& g : j.at("gates")) {
      const std::string type = g.at("type").get<std::string>();
      if (type == "J") {
        const int w = g.at("wire").get<int>();
        const int e = g.at("angle_eighths").get<int>();
        if (w < 0 || w >= c.wires) throw ConfigError("circuit: bad wire");
        if (e < 0 || e > 7) throw ConfigError("circuit: bad angle_eighths");
        c.gates.push_back({Gate::Kind::J, w, Angle(e)});
      } else if (type == "CZ") {
        if (c.wires != 2) throw ConfigError("circuit: CZ needs 2 wires");
        c.gates.push_back({Gate::Kind::CZ, 0, Angle(0)});
      } else {
        throw ConfigError("circuit: unknown gate type " + type);
      }
    }
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json gates_json = nlohmann::json::array();
    for (const auto& g : gates) {
      if (g.kind == Gate::Kind::J)
        gates_json.push_back({{"type", "J"},
                              {"wire", g.wire},
                              {"angle_eighths", g.angle.eighths()}});
      else
        gates_json.push_back({{"type", "CZ"}});
    }
    return {{"wires", wires}, {"gates", gates_json}};
  }

  static Circuit load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("circuit: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

// phi' = (-1)^sx * base + sz*pi, the adaptive correction rule.
constexpr Angle adaptive_phi(Angle base, int sx, int sz) {
  Angle a = sx ? base.negated() : base;
  return sz ? a + Angle::pi() : a;
}

// Two-wire brick layout: two horizontal chains with rung edges at every
// column divisible by four (1-based columns).
inline Graph brickwork_graph(int wires, int depth) {
  if (wires != 2) throw ConfigError("brickwork_graph: only 2 wires supported");
  if (depth < 1) throw ConfigError("brickwork_graph: depth must be >= 1");
  Graph g;
  const auto d = static_cast<std::uint32_t>(depth);
  g.vertex_count = 2 * d;
  for (std::uint32_t w = 0; w < 2; ++w)
    for (std::uint32_t c = 0; c + 1 < d; ++c)
      g.add_edge(w * d + c, w * d + c + 1);
  for (std::uint32_t c = 0; c < d; ++c)
    if ((c + 1) % 4 == 0) g.add_edge(c, d + c);
  g.inputs = {0, d};
  g.outputs = {d - 1, 2 * d - 1};
  g.sort_edges();
  return g;
}

// One CZ per edge, lexicographic edge order (CZ gates commute; a fixed
// order keeps dumps reproducible).
inline void build_graph_state(RegisterPool& pool,
                              std::span<const QubitId> qubits,
                              const Graph& graph) {
  if (qubits.size() != graph.vertex_count)
    throw ConfigError("build_graph_state: qubit count mismatch");
  auto edges = graph.edges;
  std::sort(edges.begin(), edges.end());
  for (const auto& [a, b] : edges) pool.apply_cz(qubits[a], qubits[b]);
}

// Chain compilation: each wire is a chain, J(theta) consumes the wire head
// with base angle -theta, CZ adds an edge between the wire heads. The
// measurement order is the J-consumption order; dependencies follow the
// chain flow over the final graph.
inline Pattern compile(const Circuit& circuit) {
  Pattern p;
  std::vector<std::vector<std::uint32_t>> chains(circuit.wires);
  std::uint32_t next = 0;
  for (int w = 0; w < circuit.wires; ++w) chains[w].push_back(next++);

  struct PendingEdge {
    std::uint32_t a, b;
  };
  std::vector<PendingEdge> edges;
  std::vector<std::uint32_t> order;
  std::vector<Angle> base;
  base.resize(circuit.wires, Angle(0));

  for (const auto& g : circuit.gates) {
    if (g.kind == Circuit::Gate::Kind::J) {
      const std::uint32_t head = chains[g.wire].back();
      const std::uint32_t fresh = next++;
      edges.push_back({head, fresh});
      order.push_back(head);
      if (base.size() <= head) base.resize(head + 1, Angle(0));
      base[head] = g.angle.negated();  // measured angle for J(theta) is -theta
      chains[g.wire].push_back(fresh);
    } else {
      const std::uint32_t h0 = chains[0].back();
      const std::uint32_t h1 = chains[1].back();
      for (const auto& e : edges)
        if ((e.a == h0 && e.b == h1) || (e.a == h1 && e.b == h0))
          throw ConfigError("compile: consecutive CZ on the same heads");
      edges.push_back({h0, h1});
    }
  }

  p.graph.vertex_count = next;
  for (const auto& e : edges) p.graph.add_edge(e.a, e.b);
  p.graph.sort_edges();
  for (int w = 0; w < circuit.wires; ++w) {
    p.graph.inputs.push_back(chains[w].front());
    p.graph.outputs.push_back(chains[w].back());
  }
  p.outputs = p.graph.outputs;
  p.order = std::move(order);
  base.resize(next, Angle(0));
  p.base_angle = std::move(base);

  // flow corrections: measuring v puts X on its successor f(v) and Z on
  // every other neighbor of f(v)
  p.xdep.assign(next, {});
  p.zdep.assign(next, {});
  auto neighbors = [&](std::uint32_t v) {
    std::vector<std::uint32_t> out;
    for (const auto& [a, b] : p.graph.edges) {
      if (a == v) out.push_back(b);
      if (b == v) out.push_back(a);
    }
    return out;
  };
  for (const auto& chain : chains) {
    for (std::size_t k = 0; k + 1 < chain.size(); ++k) {
      const std::uint32_t v = chain[k];
      const std::uint32_t succ = chain[k + 1];
      p.xdep[succ].push_back(v);
      for (std::uint32_t u : neighbors(succ))
        if (u != v) p.zdep[u].push_back(v);
    }
  }
  return p;
}

// Chain pattern over raw base angles with every vertex measured; used by the
// blindness analyses, where the delegated "program" is just an angle list.
inline Pattern chain_pattern(std::span<const Angle> angles) {
  Pattern p;
  const auto n = static_cast<std::uint32_t>(angles.size());
  p.graph.vertex_count = n;
  for (std::uint32_t v = 0; v + 1 < n; ++v) p.graph.add_edge(v, v + 1);
  p.graph.sort_edges();
  p.base_angle.assign(angles.begin(), angles.end());
  p.xdep.assign(n, {});
  p.zdep.assign(n, {});
  for (std::uint32_t v = 0; v < n; ++v) {
    p.order.push_back(v);
    if (v >= 1) p.xdep[v].push_back(v - 1);
    if (v >= 2) p.zdep[v].push_back(v - 2);
  }
  return p;
}

// Client-side dependency bookkeeping, shared by the local pattern runner and
// every protocol client. Feed it corrected outcomes in pattern order.
class PatternTracker {
 public:
  explicit PatternTracker(const Pattern& p)
      : pattern_(&p), outcome_(p.graph.vertex_count, -1) {}

  bool done() const { return next_ == pattern_->order.size(); }
  std::uint32_t current_vertex() const { return pattern_->order[next_]; }

  int sx(std::uint32_t v) const { return parity(pattern_->xdep[v]); }
  int sz(std::uint32_t v) const { return parity(pattern_->zdep[v]); }

  Angle phi_prime() const {
    const std::uint32_t v = current_vertex();
    return adaptive_phi(pattern_->base_angle[v], sx(v), sz(v));
  }

  void record(int corrected_outcome) {
    outcome_[current_vertex()] = corrected_outcome & 1;
    ++next_;
  }

  int x_corr(std::uint32_t output) const { return sx(output); }
  int z_corr(std::uint32_t output) const { return sz(output); }

 private:
  int parity(const std::vector<std::uint32_t>& deps) const {
    int s = 0;
    for (std::uint32_t u : deps) {
      if (outcome_[u] < 0)
        throw std::logic_error("pattern: dependency measured out of order");
      s ^= outcome_[u];
    }
    return s;
  }

  const Pattern* pattern_;
  std::vector<int> outcome_;
  std::size_t next_ = 0;
};

struct PatternRun {
  std::vector<int> outcomes;       // in measurement order
  std::vector<QubitId> outputs;    // pattern output order
  std::vector<int> x_corr, z_corr;  // byproduct bits per output
};

// Local (unblinded) execution: fresh |+> per vertex, graph state, adaptive
// measurements. Byproducts are reported, not applied.
inline PatternRun run_pattern(RegisterPool& pool, const Pattern& pattern,
                              RandomSource& rs) {
  std::vector<QubitId> qubits;
  qubits.reserve(pattern.graph.vertex_count);
  for (std::uint32_t v = 0; v < pattern.graph.vertex_count; ++v)
    qubits.push_back(pool.alloc_plus_theta(Angle(0)));
  build_graph_state(pool, qubits, pattern.graph);

  PatternRun run;
  PatternTracker tracker(pattern);
  while (!tracker.done()) {
    const std::uint32_t v = tracker.current_vertex();
    const int s = pool.measure_angle(qubits[v], tracker.phi_prime(), rs);
    run.outcomes.push_back(s);
    tracker.record(s);
  }
  for (std::uint32_t o : pattern.outputs) {
    run.outputs.push_back(qubits[o]);
    run.x_corr.push_back(tracker.x_corr(o));
    run.z_corr.push_back(tracker.z_corr(o));
  }
  return run;
}

// Applies the reported byproducts so the output state can be compared
// directly against a reference.
inline void apply_corrections(RegisterPool& pool, const PatternRun& run) {
  for (std::size_t k = 0; k < run.outputs.size(); ++k) {
    if (run.x_corr[k]) pool.apply_x(run.outputs[k]);
    if (run.z_corr[k]) pool.apply_z(run.outputs[k]);
  }
}

// Independent reference: direct 2x2 / 4x4 matrix arithmetic on statevectors,
// no MBQC code shared. Wire 0 is the most significant bit.
inline std::vector<Amplitude> circuit_oracle(const Circuit& circuit) {
  const std::size_t dim = std::size_t{1} << circuit.wires;
  std::vector<Amplitude> state(dim, Amplitude(1.0, 0.0));
  const double norm = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& c : state) c *= norm;

  for (const auto& g : circuit.gates) {
    if (g.kind == Circuit::Gate::Kind::J) {
      const std::size_t mask = std::size_t{1}
                               << (circuit.wires - 1 - g.wire);
      const Amplitude rz = std::polar(1.0, g.angle.radians());
      const double s = 1.0 / std::sqrt(2.0);
      for (std::size_t i = 0; i < dim; ++i) {
        if (i & mask) continue;
        const Amplitude a0 = state[i];
        const Amplitude a1 = state[i | mask] * rz;
        state[i] = s * (a0 + a1);
        state[i | mask] = s * (a0 - a1);
      }
    } else {
      state[3] = -state[3];  // CZ on two wires: |11> component
    }
  }
  return state;
}

using OutputDistribution = std::map<std::uint64_t, double>;

inline double total_variation(const OutputDistribution& a,
                              const OutputDistribution& b) {
  double tv = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() || ib != b.end()) {
    if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
      tv += std::abs(ia->second);
      ++ia;
    } else if (ia == a.end() || ib->first < ia->first) {
      tv += std::abs(ib->second);
      ++ib;
    } else {
      tv += std::abs(ia->second - ib->second);
      ++ia;
      ++ib;
    }
  }
  return tv / 2.0;
}

inline OutputDistribution born_distribution(
    std::span<const Amplitude> state) {
  OutputDistribution dist;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const double p = std::norm(state[i]);
    if (p > 0.0) dist[i] += p;
  }
  return dist;
}

// Exact output distribution in the computational basis after corrections,
// via exhaustive enumeration of measurement branches. Independent of any rng.
inline OutputDistribution output_distribution(const Pattern& pattern) {
  if (pattern.measured_count() > 14)
    throw std::runtime_error("output_distribution: branch bound exceeded");
  OutputDistribution dist;
  enumerate_branches(
      [&](RandomSource& rs) {
        RegisterPool pool;
        PatternRun run = run_pattern(pool, pattern, rs);
        OutputDistribution leaf;
        if (run.outputs.empty()) {
          leaf[0] = 1.0;
          return leaf;
        }
        const auto joint = pool.joint_state(run.outputs);
        std::uint64_t flip = 0;
        for (std::size_t k = 0; k < run.outputs.size(); ++k)
          if (run.x_corr[k])
            flip |= std::uint64_t{1} << (run.outputs.size() - 1 - k);
        for (std::size_t i = 0; i < joint.size(); ++i) {
          const double p = std::norm(joint[i]);
          if (p > 0.0) leaf[i ^ flip] += p;
        }
        return leaf;
      },
      [&](OutputDistribution leaf, double weight) {
        for (const auto& [bits, p] : leaf) dist[bits] += weight * p;
      });
  return dist;
}

}  // namespace bqcsim
