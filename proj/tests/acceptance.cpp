// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "bqcsim/blind.hpp"
#include "bqcsim/mbqc.hpp"
#include "bqcsim/parallel.hpp"
#include "bqcsim/proto.hpp"

namespace {

using namespace bqcsim;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Criterion {
  int id;
  std::string description;
  bool pass;
  std::string detail;
};

std::vector<Criterion> g_results;

void report(int id, const std::string& description, bool pass,
            const std::string& detail) {
  std::printf("[%s] criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", id,
              description.c_str(), detail.c_str());
  std::fflush(stdout);
  g_results.push_back({id, description, pass, detail});
}

std::vector<Circuit> load_suite() {
  std::vector<Circuit> circuits;
  const std::filesystem::path dir(BQCSIM_CIRCUITS_DIR);
  std::ifstream manifest(dir / "suite.json");
  nlohmann::json j;
  manifest >> j;
  for (const auto& name : j.at("circuits"))
    circuits.push_back(Circuit::load((dir / name.get<std::string>()).string()));
  return circuits;
}

// 1. every protocol reproduces the oracle distribution exactly on the suite
void criterion_oracle_correctness() {
  const auto circuits = load_suite();
  double worst_tv = 0.0, worst_pair_time = 0.0;
  int pairs = 0;
  bool ok = circuits.size() >= 6;
  for (const Circuit& circuit : circuits) {
    const Pattern pattern = compile(circuit);
    ok = ok && pattern.measured_count() <= 12 && circuit.wires <= 2;
    const auto oracle = circuit_oracle(circuit);
    const auto oracle_dist = born_distribution(oracle);
    for (Protocol proto :
         {Protocol::Single, Protocol::BfkDouble, Protocol::MfDouble,
          Protocol::Triple, Protocol::NewDouble, Protocol::NewSingle}) {
      ProtocolOptions opts;
      opts.record_transcript = false;
      if (proto == Protocol::Triple) {
        opts.triple.overhead_factor = 0.0;
        opts.triple.forward_probability = 1.0;
      }
      const auto start = Clock::now();
      double min_fid = 1.0;
      const auto dist = exact_protocol_distribution(proto, pattern, opts,
                                                    0xacce9711ULL, &oracle,
                                                    &min_fid);
      const double elapsed = seconds_since(start);
      worst_pair_time = std::max(worst_pair_time, elapsed);
      worst_tv = std::max(worst_tv, total_variation(dist, oracle_dist));
      ok = ok && elapsed < 60.0;
      ++pairs;
    }
  }
  ok = ok && worst_tv < 1e-9;
  report(1, "oracle correctness",
         ok,
         std::to_string(pairs) + " protocol-circuit pairs, worst TV " +
             std::to_string(worst_tv) + ", slowest pair " +
             std::to_string(worst_pair_time) + " s");
}

// 2. the 64-case measurement-equivalence lemma
void criterion_rsp_equivalence() {
  const auto rep = rsp_equivalence();
  const bool ok = rep.cases == 64 && rep.pass() && rep.statistic < 1e-9;
  report(2, "equivalence lemma", ok,
         "64 cases, worst deviation " + std::to_string(rep.statistic));
}

// 3. entanglement swapping: 16 outcomes, labeled states, probability 1/16
void criterion_swap_table() {
  const auto rep = swap_table();
  const bool ok = rep.cases == 16 && rep.pass() && rep.statistic < 1e-9;
  report(3, "entanglement swapping", ok,
         "16 outcomes, worst deviation " + std::to_string(rep.statistic));
}

// 4. exact blindness at n in {1,2} plus the BFK privacy negative control
void criterion_exact_blindness() {
  double worst_holding = 0.0;
  bool ok = true;
  std::string detail;
  struct Case {
    Protocol proto;
    std::set<PartyId> coalition;
  };
  const std::vector<Case> cases{
      {Protocol::Single, {PartyId::Server1}},
      {Protocol::MfDouble, {PartyId::Server2}},
      {Protocol::NewDouble, {PartyId::Server1, PartyId::Server2}},
      {Protocol::NewSingle, {PartyId::Server1}},
  };
  for (const auto& c : cases)
    for (int n : {1, 2}) {
      const auto sweep = blindness_sweep(c.proto, n, c.coalition, {}, {},
                                         1e-9, 2);
      if (sweep.identical) {
        worst_holding = std::max(worst_holding, sweep.max_deviation);
      } else {
        ok = false;
        detail += std::string(protocol_name(c.proto)) + " n=" +
                  std::to_string(n) + " distinguishable (dev " +
                  std::to_string(sweep.max_deviation) +
                  "; the coalition view resolves base angles mod pi); ";
      }
    }
  // positive control: bfk-double is blind against Server2 with privacy
  const auto bfk = blindness_sweep(Protocol::BfkDouble, 2,
                                   {PartyId::Server2}, {}, {}, 1e-9, 2);
  worst_holding = std::max(worst_holding, bfk.max_deviation);
  ok = ok && bfk.identical;
  // negative control: the same protocol with the channel made public
  ProtocolOptions leak;
  leak.leak_stage1_privacy = true;
  const auto control = blindness_sweep(Protocol::BfkDouble, 1,
                                       {PartyId::Server2}, leak, {}, 1e-9, 2);
  ok = ok && !control.identical && !control.witness.empty();
  report(4, "exact blindness n in {1,2}", ok,
         detail + "deviation where blindness holds " +
             std::to_string(worst_holding) + "; negative control deviation " +
             std::to_string(control.max_deviation) +
             (control.identical ? " (control FAILED to fail)"
                                : " with witness"));
}

// 5. permutation hiding: flat posterior up to n=5, leaked-secret control
void criterion_permutation_hiding() {
  const auto start = Clock::now();
  bool ok = true;
  double worst = 0.0;
  for (int n = 2; n <= 5; ++n) {
    std::vector<Angle> phi;
    for (int v = 0; v < n; ++v) phi.push_back(Angle((3 * v + 1) % 8));
    const Pattern pattern = chain_pattern(phi);
    const RunOutcome run =
        execute_seeded(Protocol::NewDouble, pattern, {}, 5150 + n);
    const auto posterior = permutation_posterior(run, pattern);
    double expected = 1.0;
    for (int i = 2; i <= n; ++i) expected *= i;
    for (const auto& [perm, mass] : posterior)
      worst = std::max(worst, std::abs(mass - 1.0 / expected));
    if (n == 3) {
      const auto leaked = permutation_posterior(run, pattern, true);
      ok = ok && std::abs(leaked.at(run.client.secret.perm) - 1.0) < 1e-9;
    }
  }
  const double elapsed = seconds_since(start);
  ok = ok && worst < 1e-9 && elapsed < 120.0;
  report(5, "permutation hiding", ok,
         "posterior flat within " + std::to_string(worst) + " up to n=5 in " +
             std::to_string(elapsed) + " s; leak control concentrates");
}

// 6. trivial secrets reduce the new protocol to the BFK double protocol
void criterion_reduction() {
  Circuit circuit;
  circuit.wires = 1;
  circuit.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(1)});
  circuit.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(6)});
  const Pattern pattern = compile(circuit);
  ProtocolOptions trivial;
  trivial.force_trivial_secrets = true;
  bool ok = true;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 40ULL, 500ULL}) {
    const RunOutcome a =
        execute_seeded(Protocol::NewDouble, pattern, trivial, seed);
    const RunOutcome b =
        execute_seeded(Protocol::BfkDouble, pattern, {}, seed);
    ok = ok && transcripts_equal_messages(a.transcript, b.transcript);
  }
  report(6, "reduction to BFK double", ok,
         ok ? "transcripts identical across shared seeds"
            : "transcripts differ");
}

// 7. pooled deltas at n=8 over 1e4 trials pass chi-square; biased control fails
void criterion_statistical_blindness() {
  const auto honest = delta_uniformity(Protocol::NewDouble, 8, 10000, 404);
  ProtocolOptions bias;
  bias.force_zero_theta = true;
  bias.force_zero_r = true;
  const auto biased = delta_uniformity(Protocol::NewDouble, 8, 2000, 404,
                                       bias);
  const bool ok = honest.pass && !biased.pass;
  report(7, "statistical blindness n=8", ok,
         "chi2=" + std::to_string(honest.chi_square) +
             " p=" + std::to_string(honest.p_value) +
             "; biased control chi2=" + std::to_string(biased.chi_square) +
             (biased.pass ? " (control FAILED to fail)" : " rejected"));
}

// 8. triple-protocol viability at overhead 2, forwarding 1/2, m=2
void criterion_triple_viability() {
  Circuit circuit;
  circuit.wires = 1;
  circuit.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(0)});
  const Pattern pattern = compile(circuit);  // two pattern qubits -> m = 2
  ProtocolOptions opts;
  opts.record_transcript = false;
  opts.triple.overhead_factor = 2.0;
  opts.triple.forward_probability = 0.5;
  const auto oracle_dist = born_distribution(circuit_oracle(circuit));

  const int trials = 1000;
  std::vector<std::uint64_t> completed_seeds;
  for (int trial = 0; trial < trials; ++trial) {
    const std::uint64_t seed = SeedPlan::trial(0xdecaf, trial);
    const RunOutcome run = execute_seeded(Protocol::Triple, pattern, opts,
                                          seed);
    if (!run.aborted) completed_seeds.push_back(seed);
  }
  const double rate =
      static_cast<double>(completed_seeds.size()) / static_cast<double>(trials);

  const auto tvs = parallel_map<double>(
      completed_seeds.size(),
      [&](std::size_t i) {
        const auto dist = exact_protocol_distribution(
            Protocol::Triple, pattern, opts, completed_seeds[i]);
        return total_variation(dist, oracle_dist);
      },
      2);
  double worst_tv = 0.0;
  for (double tv : tvs) worst_tv = std::max(worst_tv, tv);

  const bool ok = rate > 0.5 && worst_tv < 1e-9;
  report(8, "triple-protocol viability", ok,
         "completion rate " + std::to_string(rate) + ", worst oracle TV " +
             std::to_string(worst_tv) + " over " +
             std::to_string(completed_seeds.size()) + " completed runs");
}

}  // namespace

int main() {
  const auto start = Clock::now();
  criterion_oracle_correctness();
  criterion_rsp_equivalence();
  criterion_swap_table();
  criterion_exact_blindness();
  criterion_permutation_hiding();
  criterion_reduction();
  criterion_statistical_blindness();
  criterion_triple_viability();

  bool all = true;
  for (const auto& c : g_results) all = all && c.pass;
  std::printf("%s (%d criteria, %.1f s)\n",
              all ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
              static_cast<int>(g_results.size()), seconds_since(start));
  return all ? 0 : 1;
}
