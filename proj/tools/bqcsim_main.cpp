#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bqcsim/blind.hpp"
#include "bqcsim/mbqc.hpp"
#include "bqcsim/proto.hpp"

namespace {

// exit codes: 0 pass, 1 verification failure, 2 usage/config, 3 abort
constexpr int kExitPass = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAbort = 3;

std::string timestamp_utc() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_report(const std::string& path, nlohmann::json j) {
  j["generated_at"] = timestamp_utc();
  if (path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw bqcsim::ConfigError("cannot write report to " + path);
  out << j.dump(2) << "\n";
}

bqcsim::Protocol parse_protocol(const std::string& name) {
  const auto p = bqcsim::protocol_from_name(name);
  if (!p) throw bqcsim::ConfigError("unknown protocol: " + name);
  return *p;
}

std::set<bqcsim::PartyId> parse_coalition(const std::string& spec) {
  std::set<bqcsim::PartyId> coalition;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    bool found = false;
    for (bqcsim::PartyId p : bqcsim::kAllParties)
      if (item == bqcsim::to_string(p)) {
        coalition.insert(p);
        found = true;
      }
    if (!found) throw bqcsim::ConfigError("unknown party: " + item);
  }
  return coalition;
}

std::vector<std::string> load_suite(const std::string& dir) {
  const std::filesystem::path manifest =
      std::filesystem::path(dir) / "suite.json";
  std::ifstream in(manifest);
  if (!in)
    throw bqcsim::ConfigError("cannot open circuit suite manifest " +
                              manifest.string());
  nlohmann::json j;
  in >> j;
  std::vector<std::string> files;
  for (const auto& name : j.at("circuits"))
    files.push_back((std::filesystem::path(dir) / name.get<std::string>())
                        .string());
  return files;
}

struct VerifySuite {
  std::string name;
  bool pass = false;
  std::string detail;
};

VerifySuite verify_angle() {
  VerifySuite s{"angle"};
  int bad = 0;
  for (int a = 0; a < 8; ++a) {
    if ((bqcsim::Angle(a) + bqcsim::Angle(a).negated()).eighths() != 0) ++bad;
    for (int x = 0; x < 2; ++x)
      for (int z = 0; z < 2; ++z) {
        std::set<int> image;
        for (int t = 0; t < 8; ++t)
          image.insert(bqcsim::mf_encode(bqcsim::Angle(t), x, z).eighths());
        if (image.size() != 8) ++bad;
      }
  }
  // delta over (theta, r) is 2-to-1 and exactly uniform for fixed phi'
  for (int phi = 0; phi < 8; ++phi) {
    std::array<int, 8> hits{};
    for (int t = 0; t < 8; ++t)
      for (int r = 0; r < 2; ++r)
        ++hits[static_cast<std::size_t>(
            bqcsim::delta_angle(bqcsim::Angle(t), bqcsim::Angle(phi), r)
                .eighths())];
    for (int h : hits)
      if (h != 2) ++bad;
  }
  s.pass = bad == 0;
  s.detail = s.pass ? "exhaustive identities hold" : "violations found";
  return s;
}

VerifySuite verify_rsp() {
  VerifySuite s{"rsp"};
  const auto rep = bqcsim::rsp_equivalence();
  s.pass = rep.pass();
  s.detail = "64 cases, worst deviation " + std::to_string(rep.statistic);
  return s;
}

VerifySuite verify_swap() {
  VerifySuite s{"swap"};
  const auto rep = bqcsim::swap_table();
  s.pass = rep.pass();
  s.detail = "16 outcomes, worst deviation " + std::to_string(rep.statistic);
  return s;
}

VerifySuite verify_oracle(const std::string& circuits_dir) {
  VerifySuite s{"oracle"};
  double worst_tv = 0.0;
  int pairs = 0;
  for (const auto& file : load_suite(circuits_dir)) {
    const bqcsim::Circuit circuit = bqcsim::Circuit::load(file);
    const bqcsim::Pattern pattern = bqcsim::compile(circuit);
    const auto oracle_dist =
        bqcsim::born_distribution(bqcsim::circuit_oracle(circuit));
    for (bqcsim::Protocol proto :
         {bqcsim::Protocol::Single, bqcsim::Protocol::BfkDouble,
          bqcsim::Protocol::MfDouble, bqcsim::Protocol::Triple,
          bqcsim::Protocol::NewDouble, bqcsim::Protocol::NewSingle}) {
      bqcsim::ProtocolOptions opts;
      opts.record_transcript = false;
      if (proto == bqcsim::Protocol::Triple) {
        opts.triple.overhead_factor = 0.0;
        opts.triple.forward_probability = 1.0;
      }
      const auto dist = bqcsim::exact_protocol_distribution(
          proto, pattern, opts, 0xb10cf00dULL);
      worst_tv = std::max(worst_tv, bqcsim::total_variation(dist, oracle_dist));
      ++pairs;
    }
  }
  s.pass = worst_tv < 1e-9;
  s.detail = std::to_string(pairs) + " protocol-circuit pairs, worst TV " +
             std::to_string(worst_tv);
  return s;
}

VerifySuite verify_posterior() {
  VerifySuite s{"posterior"};
  const std::vector<bqcsim::Angle> phi{bqcsim::Angle(1), bqcsim::Angle(5),
                                       bqcsim::Angle(2)};
  const bqcsim::Pattern pattern = bqcsim::chain_pattern(phi);
  const bqcsim::RunOutcome run =
      bqcsim::execute_seeded(bqcsim::Protocol::NewDouble, pattern, {}, 4242);
  const auto posterior = bqcsim::permutation_posterior(run, pattern);
  double worst = 0.0;
  for (const auto& [p, mass] : posterior)
    worst = std::max(worst, std::abs(mass - 1.0 / 6.0));
  const auto leaked = bqcsim::permutation_posterior(run, pattern, true);
  const bool concentrated =
      std::abs(leaked.at(run.client.secret.perm) - 1.0) < 1e-9;
  s.pass = worst < 1e-9 && concentrated;
  s.detail = "n=3 uniform within " + std::to_string(worst) +
             (concentrated ? ", leak control concentrates" : ", leak control broken");
  return s;
}

VerifySuite verify_blind() {
  VerifySuite s{"blind"};
  const auto honest = bqcsim::blindness_sweep(
      bqcsim::Protocol::Single, 1, {bqcsim::PartyId::Server1});
  bqcsim::ProtocolOptions leak;
  leak.leak_stage1_privacy = true;
  const auto control = bqcsim::blindness_sweep(
      bqcsim::Protocol::BfkDouble, 1, {bqcsim::PartyId::Server2}, leak);
  s.pass = honest.identical && !control.identical;
  s.detail = "single n=1 deviation " + std::to_string(honest.max_deviation) +
             ", leak control deviation " +
             std::to_string(control.max_deviation);
  return s;
}

int cmd_verify(const std::string& only, const std::string& circuits_dir) {
  std::vector<VerifySuite> suites;
  auto want = [&](const std::string& name) {
    return only.empty() || only == name;
  };
  if (want("angle")) suites.push_back(verify_angle());
  if (want("rsp")) suites.push_back(verify_rsp());
  if (want("swap")) suites.push_back(verify_swap());
  if (want("oracle")) suites.push_back(verify_oracle(circuits_dir));
  if (want("posterior")) suites.push_back(verify_posterior());
  if (want("blind")) suites.push_back(verify_blind());
  if (suites.empty())
    throw bqcsim::ConfigError("unknown suite: " + only);

  bool all = true;
  for (const auto& s : suites) {
    std::cout << (s.pass ? "[PASS] " : "[FAIL] ") << s.name << ": " << s.detail
              << "\n";
    all = all && s.pass;
  }
  std::cout << (all ? "all suites passed\n" : "some suites FAILED\n");
  return all ? kExitPass : kExitVerificationFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-party blind quantum computation simulator"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run a protocol on a circuit");
  std::string run_protocol_name, circuit_path, run_out, run_mode = "sample";
  std::uint64_t run_seed = 0;
  int run_trials = 1;
  double overhead = 2.0, forward_prob = 0.5;
  double tol_tv = 1e-9, tol_fid = 1e-9;
  run->add_option("--protocol", run_protocol_name, "protocol name")
      ->required();
  run->add_option("--circuit", circuit_path, "circuit JSON file")->required();
  run->add_option("--seed", run_seed, "64-bit master seed")->required();
  run->add_option("--mode", run_mode, "sample | enumerate");
  run->add_option("--trials", run_trials, "number of sampled trials");
  run->add_option("--overhead", overhead, "triple: overhead factor");
  run->add_option("--forward-prob", forward_prob,
                  "triple: forwarding probability");
  run->add_option("--tol-tv", tol_tv, "oracle total-variation tolerance");
  run->add_option("--tol-fid", tol_fid, "oracle fidelity tolerance");
  run->add_option("--out", run_out, "report path (stdout if omitted)");

  // blindness
  auto* blind = app.add_subcommand("blindness", "blindness analyses");
  std::string blind_protocol_name = "new-double", blind_mode = "enumerate";
  std::string coalition_spec, blind_out;
  std::uint64_t blind_seed = 1;
  int blind_n = 2, blind_trials = 10000;
  bool leak_control = false, bias_control = false;
  double alpha = 0.001, tol_blind = 1e-9;
  blind->add_option("--protocol", blind_protocol_name, "protocol name");
  blind->add_option("--n", blind_n, "delegated chain length");
  blind->add_option("--mode", blind_mode, "enumerate | sample");
  blind->add_option("--seed", blind_seed, "seed (sample mode)");
  blind->add_option("--trials", blind_trials, "trials (sample mode)");
  blind->add_option("--coalition", coalition_spec,
                    "comma-separated party names");
  blind->add_flag("--leak-control", leak_control,
                  "negative control: stage-1 channel made public");
  blind->add_flag("--bias-control", bias_control,
                  "negative control: theta and r forced to zero");
  blind->add_option("--alpha", alpha, "chi-square significance level");
  blind->add_option("--tol", tol_blind, "distribution equality tolerance");
  blind->add_option("--out", blind_out, "report path (stdout if omitted)");

  // verify
  auto* verify = app.add_subcommand("verify", "run the verification suites");
  std::string only, circuits_dir = "circuits";
  verify->add_option("--only", only, "run a single suite");
  verify->add_option("--circuits", circuits_dir, "bundled circuits directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitConfig;
  }

  try {
    if (run->parsed()) {
      const bqcsim::Protocol proto = parse_protocol(run_protocol_name);
      const bqcsim::Circuit circuit = bqcsim::Circuit::load(circuit_path);
      bqcsim::ProtocolOptions opts;
      opts.triple.overhead_factor = overhead;
      opts.triple.forward_probability = forward_prob;
      bqcsim::RunReport report =
          bqcsim::run_protocol(proto, circuit, run_seed, run_mode, run_trials,
                               opts);
      report.oracle_match =
          report.oracle_tv < tol_tv && report.min_fidelity > 1.0 - tol_fid;
      write_report(run_out, report.to_json());
      if (report.aborted) {
        std::cerr << "protocol aborted: " << report.abort_reason << "\n";
        return kExitAbort;
      }
      return report.oracle_match ? kExitPass : kExitVerificationFailure;
    }

    if (blind->parsed()) {
      const bqcsim::Protocol proto = parse_protocol(blind_protocol_name);
      bqcsim::ProtocolOptions opts;
      if (leak_control) {
        if (proto != bqcsim::Protocol::BfkDouble &&
            proto != bqcsim::Protocol::MfDouble)
          throw bqcsim::ConfigError(
              "--leak-control applies to the bfk/mf double protocols");
        opts.leak_stage1_privacy = true;
      }
      const std::set<bqcsim::PartyId> coalition =
          coalition_spec.empty() ? bqcsim::default_coalition(proto)
                                 : parse_coalition(coalition_spec);
      nlohmann::json report;
      bool pass = false;
      if (blind_mode == "enumerate") {
        if (blind_n < 1 || blind_n > 2)
          throw bqcsim::ConfigError("enumerate mode supports n in {1,2}");
        const auto sweep = bqcsim::blindness_sweep(proto, blind_n, coalition,
                                                   opts, {}, tol_blind, 2);
        pass = sweep.identical;
        report = {{"check", "transcript-distribution-equality"},
                  {"cases", sweep.assignments},
                  {"failures", pass ? nlohmann::json::array()
                                    : nlohmann::json::array({sweep.witness})},
                  {"statistic", sweep.max_deviation}};
      } else if (blind_mode == "sample") {
        if (bias_control) {
          opts.force_zero_theta = true;
          opts.force_zero_r = true;
        }
        const auto rep = bqcsim::delta_uniformity(proto, blind_n, blind_trials,
                                                  blind_seed, opts);
        pass = rep.p_value > alpha;
        nlohmann::json counts = nlohmann::json::array();
        for (auto c : rep.counts) counts.push_back(c);
        report = {{"check", "delta-chi-square-uniformity"},
                  {"cases", blind_trials},
                  {"failures", pass ? nlohmann::json::array()
                                    : nlohmann::json::array({"chi-square"})},
                  {"statistic", rep.chi_square},
                  {"p_value", rep.p_value},
                  {"counts", counts}};
      } else {
        throw bqcsim::ConfigError("mode must be enumerate or sample");
      }
      write_report(blind_out, report);
      return pass ? kExitPass : kExitVerificationFailure;
    }

    if (verify->parsed()) return cmd_verify(only, circuits_dir);
  } catch (const bqcsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bqcsim::ProtocolAbort& e) {
    std::cerr << "protocol aborted: " << e.what() << "\n";
    return kExitAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerificationFailure;
  }
  return kExitConfig;
}
