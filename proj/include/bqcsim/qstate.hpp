#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bqcsim/angle.hpp"
#include "bqcsim/random.hpp"

namespace bqcsim {

using Amplitude = std::complex<double>;

struct QubitId {
  std::uint32_t value = 0;
  friend constexpr auto operator<=>(QubitId, QubitId) = default;
};

// Raised on contract violations: retired-qubit use, same-qubit gates,
// fidelity against an entangled subsystem, and similar misuse.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad user-supplied configuration: malformed circuits, forbidden topologies,
// out-of-range parameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace tol {
constexpr double kNorm = 1e-10;
constexpr double kFidelity = 1e-9;
constexpr double kZeroProjection = 1e-12;
}  // namespace tol

// Exact pure-state simulation, factored into disjoint registers that merge
// only when an entangling operation spans them. Measured qubits leave their
// register immediately, so register dimension tracks the entangled frontier.
class RegisterPool {
 public:
  QubitId alloc_plus_theta(Angle theta) {
    QubitId q{next_id_++};
    Register reg;
    reg.members = {q};
    const double s = 1.0 / std::sqrt(2.0);
    reg.amps = {Amplitude(s, 0.0), std::polar(s, theta.radians())};
    location_[q.value] = registers_.size();
    registers_.push_back(std::move(reg));
    return q;
  }

  // |phi_{x,z}(a,b)> = (I (x) X^x Z^z)(|00>+|11>)/sqrt(2); b carries the
  // correction.
  std::pair<QubitId, QubitId> alloc_bell(int x, int z) {
    QubitId a{next_id_++};
    QubitId b{next_id_++};
    Register reg;
    reg.members = {a, b};
    reg.amps.assign(4, Amplitude(0.0, 0.0));
    const double s = 1.0 / std::sqrt(2.0);
    reg.amps[static_cast<std::size_t>(x & 1)] = Amplitude(s, 0.0);
    reg.amps[static_cast<std::size_t>(2 + (1 - (x & 1)))] =
        Amplitude((z & 1) ? -s : s, 0.0);
    location_[a.value] = registers_.size();
    location_[b.value] = registers_.size();
    registers_.push_back(std::move(reg));
    return {a, b};
  }

  void apply_cz(QubitId a, QubitId b) {
    if (a == b) throw ContractViolation("apply_cz: identical qubits");
    require_live(a, "apply_cz");
    require_live(b, "apply_cz");
    std::size_t ri = merged_register(a, b);
    Register& reg = registers_[ri];
    const int pa = position(reg, a);
    const int pb = position(reg, b);
    const std::size_t ma = bit_mask(reg, pa);
    const std::size_t mb = bit_mask(reg, pb);
    for (std::size_t i = 0; i < reg.amps.size(); ++i)
      if ((i & ma) && (i & mb)) reg.amps[i] = -reg.amps[i];
  }

  void apply_x(QubitId q) {
    require_live(q, "apply_x");
    Register& reg = registers_[location_.at(q.value)];
    const std::size_t m = bit_mask(reg, position(reg, q));
    for (std::size_t i = 0; i < reg.amps.size(); ++i)
      if (i & m) std::swap(reg.amps[i], reg.amps[i ^ m]);
  }

  void apply_z(QubitId q) {
    require_live(q, "apply_z");
    Register& reg = registers_[location_.at(q.value)];
    const std::size_t m = bit_mask(reg, position(reg, q));
    for (std::size_t i = 0; i < reg.amps.size(); ++i)
      if (i & m) reg.amps[i] = -reg.amps[i];
  }

  // diag(1, e^{i theta}); the only place protocol angles become floats.
  void apply_rz(QubitId q, Angle theta) {
    require_live(q, "apply_rz");
    Register& reg = registers_[location_.at(q.value)];
    const std::size_t m = bit_mask(reg, position(reg, q));
    const Amplitude phase = std::polar(1.0, theta.radians());
    for (std::size_t i = 0; i < reg.amps.size(); ++i)
      if (i & m) reg.amps[i] *= phase;
  }

  // Projective measurement in the basis {|+_theta>, |-_theta>} with
  // |+-_theta> = (|0> +- e^{i theta}|1>)/sqrt(2). Outcome bit 0 <-> "+".
  int measure_angle(QubitId q, Angle theta, RandomSource& rs) {
    require_live(q, "measure_angle");
    const double p0 = angle_branch_prob(q, theta, 0);
    const int m = rs.outcome(p0);
    project_angle(q, theta, m);
    return m;
  }

  // Forces the given outcome and returns its Born probability.
  double project_angle(QubitId q, Angle theta, int m) {
    require_live(q, "project_angle");
    const std::size_t ri = location_.at(q.value);
    Register& reg = registers_[ri];
    const int pos = position(reg, q);
    const Amplitude phase =
        std::polar(1.0, -theta.radians()) * ((m & 1) ? -1.0 : 1.0);
    const double s = 1.0 / std::sqrt(2.0);

    std::vector<Amplitude> out(reg.amps.size() / 2);
    const int low_bits = static_cast<int>(reg.members.size()) - 1 - pos;
    double prob = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const std::size_t lo = j & ((std::size_t{1} << low_bits) - 1);
      const std::size_t hi = j >> low_bits;
      const std::size_t i0 = (hi << (low_bits + 1)) | lo;
      const std::size_t i1 = i0 | (std::size_t{1} << low_bits);
      out[j] = s * (reg.amps[i0] + phase * reg.amps[i1]);
      prob += std::norm(out[j]);
    }
    finish_removal(ri, q, m, std::move(out), prob);
    return prob;
  }

  // Born probability of the given outcome without projecting.
  double angle_outcome_prob(QubitId q, Angle theta, int m) const {
    require_live(q, "angle_outcome_prob");
    return angle_branch_prob(q, theta, m);
  }

  double bell_outcome_prob(QubitId a, QubitId b, int x, int z) {
    if (a == b) throw ContractViolation("bell_outcome_prob: identical qubits");
    require_live(a, "bell_outcome_prob");
    require_live(b, "bell_outcome_prob");
    merged_register(a, b);
    return bell_branch_prob(a, b, x, z);
  }

  // Computational-basis measurement (test harness and output readout).
  int measure_z(QubitId q, RandomSource& rs) {
    require_live(q, "measure_z");
    const double p0 = z_branch_prob(q, 0);
    const int m = rs.outcome(p0);
    project_z(q, m);
    return m;
  }

  double project_z(QubitId q, int m) {
    require_live(q, "project_z");
    const std::size_t ri = location_.at(q.value);
    Register& reg = registers_[ri];
    const int pos = position(reg, q);
    const int low_bits = static_cast<int>(reg.members.size()) - 1 - pos;
    std::vector<Amplitude> out(reg.amps.size() / 2);
    double prob = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const std::size_t lo = j & ((std::size_t{1} << low_bits) - 1);
      const std::size_t hi = j >> low_bits;
      std::size_t i = (hi << (low_bits + 1)) | lo;
      if (m & 1) i |= (std::size_t{1} << low_bits);
      out[j] = reg.amps[i];
      prob += std::norm(out[j]);
    }
    finish_removal(ri, q, m, std::move(out), prob);
    return prob;
  }

  // Bell measurement labeled so that measuring a fresh |phi_{x,z}> returns
  // exactly (x,z). Retires both qubits. Outcome stored as x on a, z on b.
  std::pair<int, int> measure_bell(QubitId a, QubitId b, RandomSource& rs) {
    if (a == b) throw ContractViolation("measure_bell: identical qubits");
    require_live(a, "measure_bell");
    require_live(b, "measure_bell");
    merged_register(a, b);
    double p[2][2];
    for (int x = 0; x < 2; ++x)
      for (int z = 0; z < 2; ++z) p[x][z] = bell_branch_prob(a, b, x, z);
    const double px0 = p[0][0] + p[0][1];
    const int x = rs.outcome(px0);
    const double row = p[x][0] + p[x][1];
    const int z = rs.outcome(row > 0.0 ? p[x][0] / row : 0.5);
    project_bell(a, b, x, z);
    return {x, z};
  }

  double project_bell(QubitId a, QubitId b, int x, int z) {
    if (a == b) throw ContractViolation("project_bell: identical qubits");
    require_live(a, "project_bell");
    require_live(b, "project_bell");
    const std::size_t ri = merged_register(a, b);
    Register& reg = registers_[ri];
    const int pa = position(reg, a);
    const int pb = position(reg, b);
    const std::size_t n = reg.members.size();
    const double s = 1.0 / std::sqrt(2.0);
    const double sign = (z & 1) ? -1.0 : 1.0;

    std::vector<QubitId> rest_members;
    rest_members.reserve(n - 2);
    for (std::size_t k = 0; k < n; ++k)
      if (static_cast<int>(k) != pa && static_cast<int>(k) != pb)
        rest_members.push_back(reg.members[k]);

    std::vector<Amplitude> out(reg.amps.size() / 4);
    double prob = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const std::size_t i0 = scatter(reg, j, pa, 0, pb, x & 1);
      const std::size_t i1 = scatter(reg, j, pa, 1, pb, 1 - (x & 1));
      out[j] = s * (reg.amps[i0] + sign * reg.amps[i1]);
      prob += std::norm(out[j]);
    }
    if (prob < tol::kZeroProjection)
      throw std::runtime_error("project_bell: zero-probability branch");
    const double inv = 1.0 / std::sqrt(prob);
    for (auto& c : out) c *= inv;

    retired_[a.value] = x;
    retired_[b.value] = z;
    location_.erase(a.value);
    location_.erase(b.value);
    if (rest_members.empty()) {
      drop_register(ri);
    } else {
      reg.members = std::move(rest_members);
      reg.amps = std::move(out);
    }
    return prob;
  }

  // |<reference|state>|^2 over the listed qubits (qubits[0] = most
  // significant bit). The qubits must jointly form a pure state, i.e. no
  // involved register may extend outside the list.
  double fidelity(std::span<const QubitId> qubits,
                  std::span<const Amplitude> reference) const {
    const std::vector<Amplitude> psi = joint_state(qubits);
    if (reference.size() != psi.size())
      throw ContractViolation("fidelity: reference dimension mismatch");
    Amplitude overlap(0.0, 0.0);
    double ref_norm = 0.0;
    for (std::size_t i = 0; i < psi.size(); ++i) {
      overlap += std::conj(reference[i]) * psi[i];
      ref_norm += std::norm(reference[i]);
    }
    if (ref_norm < tol::kZeroProjection)
      throw ContractViolation("fidelity: zero reference vector");
    return std::norm(overlap) / ref_norm;
  }

  // Joint state vector of the listed qubits in the listed bit order.
  std::vector<Amplitude> joint_state(std::span<const QubitId> qubits) const {
    std::vector<std::size_t> regs;
    std::size_t total = 0;
    for (QubitId q : qubits) {
      require_live(q, "joint_state");
      const std::size_t ri = location_.at(q.value);
      if (std::find(regs.begin(), regs.end(), ri) == regs.end()) {
        for (QubitId m : registers_[ri].members)
          if (std::find(qubits.begin(), qubits.end(), m) == qubits.end())
            throw ContractViolation(
                "joint_state: qubits entangled with outside qubits");
        regs.push_back(ri);
        total += registers_[ri].members.size();
      }
    }
    if (total != qubits.size())
      throw ContractViolation("joint_state: duplicate qubits in request");

    // tensor in register-encounter order, then permute to the request order
    std::vector<Amplitude> acc = {Amplitude(1.0, 0.0)};
    std::vector<QubitId> order;
    for (std::size_t ri : regs) {
      const Register& reg = registers_[ri];
      std::vector<Amplitude> next(acc.size() * reg.amps.size());
      for (std::size_t i = 0; i < acc.size(); ++i)
        for (std::size_t j = 0; j < reg.amps.size(); ++j)
          next[i * reg.amps.size() + j] = acc[i] * reg.amps[j];
      acc = std::move(next);
      order.insert(order.end(), reg.members.begin(), reg.members.end());
    }

    std::vector<int> shift(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto it = std::find(qubits.begin(), qubits.end(), order[k]);
      const std::size_t target = static_cast<std::size_t>(it - qubits.begin());
      shift[k] = static_cast<int>(qubits.size() - 1 - target);
    }
    std::vector<Amplitude> out(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
      std::size_t j = 0;
      for (std::size_t k = 0; k < order.size(); ++k) {
        const std::size_t bit = (i >> (order.size() - 1 - k)) & 1;
        j |= bit << shift[k];
      }
      out[j] = acc[i];
    }
    return out;
  }

  // Deep, independent copy for branch exploration.
  RegisterPool fork() const { return *this; }

  bool is_live(QubitId q) const { return location_.contains(q.value); }
  bool is_retired(QubitId q) const { return retired_.contains(q.value); }
  int outcome_of(QubitId q) const { return retired_.at(q.value); }

  std::size_t register_count() const { return registers_.size(); }
  std::size_t register_dim(QubitId q) const {
    require_live(q, "register_dim");
    return registers_[location_.at(q.value)].amps.size();
  }

  double max_norm_error() const {
    double worst = 0.0;
    for (const auto& reg : registers_) {
      double n = 0.0;
      for (const auto& c : reg.amps) n += std::norm(c);
      worst = std::max(worst, std::abs(n - 1.0));
    }
    return worst;
  }

  // Debug dump; test-harness only, not a stable interface.
  nlohmann::json dump() const {
    nlohmann::json regs = nlohmann::json::array();
    for (const auto& reg : registers_) {
      nlohmann::json members = nlohmann::json::array();
      for (QubitId m : reg.members) members.push_back(m.value);
      nlohmann::json amps = nlohmann::json::array();
      for (const auto& c : reg.amps)
        amps.push_back({c.real(), c.imag()});
      regs.push_back({{"members", members}, {"amplitudes", amps}});
    }
    nlohmann::json retired = nlohmann::json::object();
    for (const auto& [id, m] : retired_) retired[std::to_string(id)] = m;
    return {{"registers", regs}, {"retired", retired}};
  }

 private:
  struct Register {
    std::vector<QubitId> members;  // members[0] is the most significant bit
    std::vector<Amplitude> amps;
  };

  static constexpr std::size_t kMaxEntangled = 22;

  void require_live(QubitId q, const char* op) const {
    if (!location_.contains(q.value)) {
      if (retired_.contains(q.value))
        throw ContractViolation(std::string(op) + ": qubit already retired");
      throw ContractViolation(std::string(op) + ": unknown qubit");
    }
  }

  static int position(const Register& reg, QubitId q) {
    const auto it = std::find(reg.members.begin(), reg.members.end(), q);
    return static_cast<int>(it - reg.members.begin());
  }

  static std::size_t bit_mask(const Register& reg, int pos) {
    return std::size_t{1} << (reg.members.size() - 1 - pos);
  }

  // Inserts bit values for two removed positions back into a reduced index.
  static std::size_t scatter(const Register& reg, std::size_t j, int pa,
                             int va, int pb, int vb) {
    const int lo_pos = std::max(pa, pb);
    const int hi_pos = std::min(pa, pb);
    const int n = static_cast<int>(reg.members.size());
    const int lo_shift = n - 1 - lo_pos;
    const int hi_shift = n - 1 - hi_pos;
    std::size_t i = j;
    // reinsert lower-significance position first
    std::size_t low = i & ((std::size_t{1} << lo_shift) - 1);
    i = ((i >> lo_shift) << (lo_shift + 1)) | low;
    low = i & ((std::size_t{1} << hi_shift) - 1);
    i = ((i >> hi_shift) << (hi_shift + 1)) | low;
    const std::size_t mask_a = std::size_t{1} << (n - 1 - pa);
    const std::size_t mask_b = std::size_t{1} << (n - 1 - pb);
    if (va) i |= mask_a;
    if (vb) i |= mask_b;
    return i;
  }

  double angle_branch_prob(QubitId q, Angle theta, int m) const {
    const Register& reg = registers_.at(location_.at(q.value));
    const int pos = position(reg, q);
    const Amplitude phase =
        std::polar(1.0, -theta.radians()) * ((m & 1) ? -1.0 : 1.0);
    const int low_bits = static_cast<int>(reg.members.size()) - 1 - pos;
    double prob = 0.0;
    for (std::size_t j = 0; j < reg.amps.size() / 2; ++j) {
      const std::size_t lo = j & ((std::size_t{1} << low_bits) - 1);
      const std::size_t hi = j >> low_bits;
      const std::size_t i0 = (hi << (low_bits + 1)) | lo;
      const std::size_t i1 = i0 | (std::size_t{1} << low_bits);
      prob += 0.5 * std::norm(reg.amps[i0] + phase * reg.amps[i1]);
    }
    return prob;
  }

  double z_branch_prob(QubitId q, int m) const {
    const Register& reg = registers_.at(location_.at(q.value));
    const std::size_t mask = bit_mask(reg, position(reg, q));
    double prob = 0.0;
    for (std::size_t i = 0; i < reg.amps.size(); ++i)
      if (((i & mask) != 0) == (m != 0)) prob += std::norm(reg.amps[i]);
    return prob;
  }

  double bell_branch_prob(QubitId a, QubitId b, int x, int z) const {
    const Register& reg = registers_.at(location_.at(a.value));
    const int pa = position(reg, a);
    const int pb = position(reg, b);
    const double sign = (z & 1) ? -1.0 : 1.0;
    double prob = 0.0;
    for (std::size_t j = 0; j < reg.amps.size() / 4; ++j) {
      const std::size_t i0 = scatter(reg, j, pa, 0, pb, x & 1);
      const std::size_t i1 = scatter(reg, j, pa, 1, pb, 1 - (x & 1));
      prob += 0.5 * std::norm(reg.amps[i0] + sign * reg.amps[i1]);
    }
    return prob;
  }

  std::size_t merged_register(QubitId a, QubitId b) {
    std::size_t ra = location_.at(a.value);
    std::size_t rb = location_.at(b.value);
    if (ra == rb) return ra;
    Register& ha = registers_[ra];
    Register& hb = registers_[rb];
    if (ha.members.size() + hb.members.size() > kMaxEntangled)
      throw std::runtime_error("register merge exceeds entanglement bound");
    Register merged;
    merged.members = ha.members;
    merged.members.insert(merged.members.end(), hb.members.begin(),
                          hb.members.end());
    merged.amps.resize(ha.amps.size() * hb.amps.size());
    for (std::size_t i = 0; i < ha.amps.size(); ++i)
      for (std::size_t j = 0; j < hb.amps.size(); ++j)
        merged.amps[i * hb.amps.size() + j] = ha.amps[i] * hb.amps[j];
    registers_[ra] = std::move(merged);
    for (QubitId m : registers_[ra].members) location_[m.value] = ra;
    drop_register(rb);
    return location_.at(a.value);
  }

  void drop_register(std::size_t ri) {
    const std::size_t last = registers_.size() - 1;
    if (ri != last) {
      registers_[ri] = std::move(registers_[last]);
      for (QubitId m : registers_[ri].members) location_[m.value] = ri;
    }
    registers_.pop_back();
  }

  void finish_removal(std::size_t ri, QubitId q, int outcome,
                      std::vector<Amplitude> out, double prob) {
    if (prob < tol::kZeroProjection)
      throw std::runtime_error("projection onto zero-probability branch");
    Register& reg = registers_[ri];
    const double inv = 1.0 / std::sqrt(prob);
    for (auto& c : out) c *= inv;
    retired_[q.value] = outcome;
    location_.erase(q.value);
    reg.members.erase(std::find(reg.members.begin(), reg.members.end(), q));
    if (reg.members.empty()) {
      drop_register(ri);
    } else {
      reg.amps = std::move(out);
    }
  }

  std::vector<Register> registers_;
  std::unordered_map<std::uint32_t, std::size_t> location_;
  std::unordered_map<std::uint32_t, int> retired_;
  std::uint32_t next_id_ = 0;
};

}  // namespace bqcsim
