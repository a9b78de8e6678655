#include "bqcsim/mbqc.hpp"

#include <cmath>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "bqcsim/qstate.hpp"
#include "bqcsim/random.hpp"

namespace bqcsim {
namespace {

Circuit load_circuit(const std::string& name) {
  return Circuit::load(
      (std::filesystem::path(BQCSIM_CIRCUITS_DIR) / name).string());
}

std::vector<Circuit> bundled_suite() {
  std::vector<Circuit> out;
  for (const auto& name :
       {"j0.json", "jj_identity.json", "j1_j7.json", "two_wire_cz.json",
        "two_wire_phases.json", "two_wire_mixed.json", "chain_quarters.json"})
    out.push_back(load_circuit(name));
  return out;
}

TEST(Brickwork, GoldenLayout) {
  const Graph g1 = brickwork_graph(2, 1);
  EXPECT_EQ(g1.vertex_count, 2u);
  EXPECT_EQ(g1.edges.size(), 0u);  // no rung before column 4

  const Graph g5 = brickwork_graph(2, 5);
  EXPECT_EQ(g5.vertex_count, 10u);
  EXPECT_EQ(g5.edges.size(), 9u);  // 8 chain edges + rung at column 4
  const std::pair<std::uint32_t, std::uint32_t> rung{3u, 8u};
  EXPECT_NE(std::find(g5.edges.begin(), g5.edges.end(), rung), g5.edges.end());

  EXPECT_THROW(brickwork_graph(1, 4), ConfigError);
  EXPECT_THROW(brickwork_graph(2, 0), ConfigError);
}

TEST(GraphState, SingleEdge) {
  RegisterPool pool;
  std::vector<QubitId> qs{pool.alloc_plus_theta(Angle(0)),
                          pool.alloc_plus_theta(Angle(0))};
  Graph g;
  g.vertex_count = 2;
  g.add_edge(0, 1);
  build_graph_state(pool, qs, g);
  EXPECT_NEAR(pool.fidelity(qs, std::vector<Amplitude>{0.5, 0.5, 0.5, -0.5}),
              1.0, 1e-12);
}

TEST(GraphState, EmptyEdgeSetLeavesPoolAlone) {
  RegisterPool pool;
  std::vector<QubitId> qs{pool.alloc_plus_theta(Angle(0)),
                          pool.alloc_plus_theta(Angle(0))};
  Graph g;
  g.vertex_count = 2;
  build_graph_state(pool, qs, g);
  EXPECT_EQ(pool.register_count(), 2u);
}

TEST(GraphState, ThreeChainMatchesDirectConstruction) {
  RegisterPool pool;
  std::vector<QubitId> qs;
  for (int i = 0; i < 3; ++i) qs.push_back(pool.alloc_plus_theta(Angle(0)));
  Graph g;
  g.vertex_count = 3;
  g.add_edge(0, 1);
  g.add_edge(1, 2);
  build_graph_state(pool, qs, g);

  // dense 8-amplitude oracle: CZ01 CZ12 on |+++>
  std::vector<Amplitude> ref(8, Amplitude(1.0 / std::sqrt(8.0), 0.0));
  for (int i = 0; i < 8; ++i) {
    int sign = 1;
    if ((i & 0b100) && (i & 0b010)) sign = -sign;
    if ((i & 0b010) && (i & 0b001)) sign = -sign;
    ref[static_cast<std::size_t>(i)] *= sign;
  }
  EXPECT_NEAR(pool.fidelity(qs, ref), 1.0, 1e-12);
}

TEST(AdaptivePhi, Rules) {
  EXPECT_EQ(adaptive_phi(Angle(3), 0, 0).eighths(), 3);
  EXPECT_EQ(adaptive_phi(Angle(1), 1, 0).eighths(), 7);
  EXPECT_EQ(adaptive_phi(Angle(1), 1, 1).eighths(), 3);
}

TEST(Compile, ChainStructure) {
  Circuit c;
  c.wires = 1;
  c.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(0)});
  const Pattern p = compile(c);
  EXPECT_EQ(p.graph.vertex_count, 2u);
  EXPECT_EQ(p.order.size(), 1u);
  EXPECT_EQ(p.outputs.size(), 1u);
  EXPECT_EQ(p.base_angle[p.order[0]].eighths(), 0);

  Circuit c2;
  c2.wires = 1;
  c2.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(1)});
  const Pattern p2 = compile(c2);
  // J(theta) measures at -theta
  EXPECT_EQ(p2.base_angle[p2.order[0]].eighths(), 7);
}

TEST(Compile, TwoWireCz) {
  Circuit c;
  c.wires = 2;
  c.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(0)});
  c.gates.push_back({Circuit::Gate::Kind::J, 1, Angle(0)});
  c.gates.push_back({Circuit::Gate::Kind::CZ, 0, Angle(0)});
  const Pattern p = compile(c);
  EXPECT_EQ(p.graph.vertex_count, 4u);
  EXPECT_EQ(p.graph.edges.size(), 3u);  // two chain edges plus the rung
  EXPECT_EQ(p.order.size(), 2u);
  EXPECT_THROW(
      compile([] {
        Circuit bad;
        bad.wires = 2;
        bad.gates.push_back({Circuit::Gate::Kind::CZ, 0, Angle(0)});
        bad.gates.push_back({Circuit::Gate::Kind::CZ, 0, Angle(0)});
        return bad;
      }()),
      ConfigError);
}

TEST(CircuitOracle, BasicGates) {
  Circuit c;
  c.wires = 1;
  c.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(0)});
  auto state = circuit_oracle(c);  // H|+> = |0>
  EXPECT_NEAR(std::norm(state[0]), 1.0, 1e-12);

  Circuit cpi;
  cpi.wires = 1;
  cpi.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(4)});
  state = circuit_oracle(cpi);  // H Rz(pi)|+> = |1>
  EXPECT_NEAR(std::norm(state[1]), 1.0, 1e-12);

  Circuit ccz;
  ccz.wires = 2;
  ccz.gates.push_back({Circuit::Gate::Kind::CZ, 0, Angle(0)});
  state = circuit_oracle(ccz);
  EXPECT_NEAR(state[3].real(), -0.5, 1e-12);
}

TEST(RunPattern, OracleEquivalenceSeededRuns) {
  for (const Circuit& c : bundled_suite()) {
    const Pattern p = compile(c);
    const auto oracle = circuit_oracle(c);
    SeededRandom rng(2718);
    for (int rep = 0; rep < 25; ++rep) {
      RegisterPool pool;
      PatternRun run = run_pattern(pool, p, rng);
      apply_corrections(pool, run);
      EXPECT_NEAR(pool.fidelity(run.outputs, oracle), 1.0, 1e-9);
    }
  }
}

// correctness holds per branch, not just on average
TEST(RunPattern, AllBranchesMatchOracle) {
  for (const Circuit& c : bundled_suite()) {
    const Pattern p = compile(c);
    const auto oracle = circuit_oracle(c);
    double min_fidelity = 1.0;
    enumerate_branches(
        [&](RandomSource& rs) {
          RegisterPool pool;
          PatternRun run = run_pattern(pool, p, rs);
          apply_corrections(pool, run);
          return pool.fidelity(run.outputs, oracle);
        },
        [&](double f, double) { min_fidelity = std::min(min_fidelity, f); });
    EXPECT_GT(min_fidelity, 1.0 - 1e-9);
  }
}

TEST(RunPattern, EmptyPattern) {
  Circuit c;
  c.wires = 1;
  const Pattern p = compile(c);
  RegisterPool pool;
  SeededRandom rng(1);
  PatternRun run = run_pattern(pool, p, rng);
  EXPECT_TRUE(run.outcomes.empty());
  EXPECT_NEAR(pool.fidelity(run.outputs,
                            std::vector<Amplitude>{1.0 / std::sqrt(2.0),
                                                   1.0 / std::sqrt(2.0)}),
              1.0, 1e-12);
}

TEST(RunPattern, DeterministicGivenSeed) {
  const Circuit c = load_circuit("chain_quarters.json");
  const Pattern p = compile(c);
  SeededRandom rng_a(31), rng_b(31);
  RegisterPool pool_a, pool_b;
  const PatternRun a = run_pattern(pool_a, p, rng_a);
  const PatternRun b = run_pattern(pool_b, p, rng_b);
  EXPECT_EQ(a.outcomes, b.outcomes);
}

TEST(OutputDistribution, Examples) {
  {
    Circuit c;
    c.wires = 1;
    c.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(0)});
    const auto dist = output_distribution(compile(c));
    ASSERT_TRUE(dist.contains(0));
    EXPECT_NEAR(dist.at(0), 1.0, 1e-9);
  }
  {
    Circuit c;
    c.wires = 1;
    const auto dist = output_distribution(compile(c));
    EXPECT_NEAR(dist.at(0), 0.5, 1e-9);
    EXPECT_NEAR(dist.at(1), 0.5, 1e-9);
  }
}

TEST(OutputDistribution, MatchesOracleOnSuite) {
  for (const Circuit& c : bundled_suite()) {
    const auto dist = output_distribution(compile(c));
    const auto oracle = born_distribution(circuit_oracle(c));
    EXPECT_LT(total_variation(dist, oracle), 1e-9);
    double total = 0.0;
    for (const auto& [bits, p] : dist) total += p;
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(OutputDistribution, TwelveMeasuredChain) {
  const Circuit c = load_circuit("chain12.json");
  const Pattern p = compile(c);
  EXPECT_EQ(p.measured_count(), 12u);
  const auto dist = output_distribution(p);
  const auto oracle = born_distribution(circuit_oracle(c));
  EXPECT_LT(total_variation(dist, oracle), 1e-9);
}

// The compiled measurement angle must be -theta. Flipping the sign realizes
// the conjugate circuit, which keeps every computational distribution intact,
// so the mutation shows up in the corrected state fidelity instead.
TEST(RunPattern, WrongJSignDetected) {
  Circuit c;
  c.wires = 1;
  c.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(1)});
  Pattern p = compile(c);
  for (std::uint32_t v : p.order)
    p.base_angle[v] = p.base_angle[v].negated();  // flip the convention
  const auto oracle = circuit_oracle(c);
  double min_fidelity = 1.0;
  enumerate_branches(
      [&](RandomSource& rs) {
        RegisterPool pool;
        PatternRun run = run_pattern(pool, p, rs);
        apply_corrections(pool, run);
        return pool.fidelity(run.outputs, oracle);
      },
      [&](double f, double) { min_fidelity = std::min(min_fidelity, f); });
  EXPECT_LT(min_fidelity, 1.0 - 1e-3);
}

// a brickwork-shaped circuit (CZ at the rung column, zero-angle padding)
// delegates through the brickwork layout and still matches the oracle
TEST(Brickwork, PadAndDelegate) {
  const int depth = 5;
  Circuit c;
  c.wires = 2;
  // column c consumes the column c-1 vertices; rung at column 4
  const std::array<int, 4> w0_angles{1, 0, 0, 0};
  const std::array<int, 4> w1_angles{0, 2, 0, 0};
  for (int col = 0; col < depth - 1; ++col) {
    c.gates.push_back({Circuit::Gate::Kind::J, 0,
                       Angle(w0_angles[static_cast<std::size_t>(col)])});
    c.gates.push_back({Circuit::Gate::Kind::J, 1,
                       Angle(w1_angles[static_cast<std::size_t>(col)])});
    if ((col + 2) % 4 == 0) c.gates.push_back({Circuit::Gate::Kind::CZ, 0, Angle(0)});
  }
  const Pattern p = compile(c);

  // the compiled graph is the brickwork layout up to vertex relabeling:
  // compiled vertex for (wire w, column col) follows the creation order
  const Graph bw = brickwork_graph(2, depth);
  auto compiled_vertex = [&](std::uint32_t w, std::uint32_t col) {
    return col == 0 ? w : 2 + 2 * (col - 1) + w;
  };
  std::vector<std::pair<std::uint32_t, std::uint32_t>> mapped;
  for (const auto& [a, b] : bw.edges) {
    const std::uint32_t wa = a / depth, ca = a % depth;
    const std::uint32_t wb = b / depth, cb = b % depth;
    const std::uint32_t u = compiled_vertex(wa, ca);
    const std::uint32_t v = compiled_vertex(wb, cb);
    mapped.push_back({std::min(u, v), std::max(u, v)});
  }
  std::sort(mapped.begin(), mapped.end());
  EXPECT_EQ(mapped, p.graph.edges);

  const auto dist = output_distribution(p);
  const auto oracle = born_distribution(circuit_oracle(c));
  EXPECT_LT(total_variation(dist, oracle), 1e-9);
}

TEST(CircuitJson, RoundTripAndValidation) {
  const Circuit c = load_circuit("two_wire_phases.json");
  const Circuit back = Circuit::from_json(c.to_json());
  EXPECT_EQ(back.wires, c.wires);
  ASSERT_EQ(back.gates.size(), c.gates.size());
  for (std::size_t i = 0; i < c.gates.size(); ++i) {
    EXPECT_EQ(back.gates[i].kind, c.gates[i].kind);
    EXPECT_EQ(back.gates[i].angle, c.gates[i].angle);
  }
  EXPECT_THROW(Circuit::from_json({{"wires", 3}, {"gates", nlohmann::json::array()}}),
               ConfigError);
  EXPECT_THROW(
      Circuit::from_json(
          {{"wires", 1},
           {"gates", {{{"type", "J"}, {"wire", 0}, {"angle_eighths", 9}}}}}),
      ConfigError);
}

}  // namespace
}  // namespace bqcsim
