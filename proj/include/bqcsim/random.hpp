#pragma once

#include <cassert>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "bqcsim/angle.hpp"

namespace bqcsim {

// Every random decision in a run flows through this interface, so the same
// protocol code can either sample (seeded mt19937_64) or be driven by the
// exhaustive branch enumerator.
class RandomSource {
 public:
  virtual ~RandomSource() = default;

  virtual int bit() = 0;                        // uniform {0,1}
  virtual int octant() = 0;                     // uniform {0..7}
  virtual std::uint64_t bounded(std::uint64_t n) = 0;  // uniform {0..n-1}
  virtual int outcome(double p0) = 0;           // 0 with probability p0
  virtual bool bernoulli(double p) = 0;         // true with probability p

  Angle angle() { return Angle(octant()); }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic seed splitting: stream `index` of a master seed. Used for
// per-trial and per-party substreams so parallel execution cannot reorder
// draws.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master + index * 0x9e3779b97f4a7c15ULL);
}

class SeededRandom final : public RandomSource {
 public:
  explicit SeededRandom(std::uint64_t seed) : gen_(seed) {}

  int bit() override { return static_cast<int>(gen_() & 1u); }
  int octant() override { return static_cast<int>(gen_() & 7u); }

  std::uint64_t bounded(std::uint64_t n) override {
    assert(n > 0);
    // rejection sampling keeps the draw exactly uniform
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = gen_();
    } while (r >= limit);
    return r % n;
  }

  int outcome(double p0) override { return u01() < p0 ? 0 : 1; }
  bool bernoulli(double p) override { return u01() < p; }

 private:
  double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 gen_;
};

// Thrown inside a run when the enumerator is asked to follow a branch of
// (numerically) zero probability; the driver records nothing for it.
struct PrunedBranch {};

namespace detail {

struct ChoicePoint {
  std::uint64_t arity;
  std::uint64_t choice;
};

constexpr double kBranchEpsilon = 1e-9;

}  // namespace detail

// Replays a fixed tape of choices and extends it with first options past the
// end. Weight of the leaf = product of per-choice weights (1/arity for
// uniform draws, the Born probability for measurement outcomes).
class EnumerationSource final : public RandomSource {
 public:
  explicit EnumerationSource(std::vector<detail::ChoicePoint>* tape)
      : tape_(tape) {}

  int bit() override { return static_cast<int>(next(2, 0.5)); }
  int octant() override { return static_cast<int>(next(8, 0.125)); }
  std::uint64_t bounded(std::uint64_t n) override {
    return next(n, 1.0 / static_cast<double>(n));
  }
  int outcome(double p0) override {
    std::uint64_t c = peek_choice(2);
    return static_cast<int>(next(2, c == 0 ? p0 : 1.0 - p0));
  }
  bool bernoulli(double p) override {
    std::uint64_t c = peek_choice(2);
    return next(2, c == 0 ? p : 1.0 - p) == 0;
  }

  double leaf_weight() const { return weight_; }

 private:
  std::uint64_t peek_choice(std::uint64_t arity) {
    if (pos_ == tape_->size()) tape_->push_back({arity, 0});
    return (*tape_)[pos_].choice;
  }

  std::uint64_t next(std::uint64_t arity, double w) {
    if (pos_ == tape_->size()) tape_->push_back({arity, 0});
    auto& cp = (*tape_)[pos_];
    if (cp.arity != arity)
      throw std::logic_error("enumeration: run is not choice-deterministic");
    ++pos_;
    if (w < detail::kBranchEpsilon) throw PrunedBranch{};
    weight_ *= w;
    return cp.choice;
  }

  std::vector<detail::ChoicePoint>* tape_;
  std::size_t pos_ = 0;
  double weight_ = 1.0;
};

// Depth-first exhaustive enumeration. `run` executes one deterministic run
// against the given source; `on_leaf` receives the run result and the exact
// branch weight. Zero-probability branches are pruned.
template <typename RunFn, typename LeafFn>
void enumerate_branches(RunFn&& run, LeafFn&& on_leaf,
                        std::uint64_t max_leaves = 0) {
  std::vector<detail::ChoicePoint> tape;
  std::uint64_t leaves = 0;
  while (true) {
    EnumerationSource src(&tape);
    try {
      auto result = run(src);
      on_leaf(std::move(result), src.leaf_weight());
    } catch (const PrunedBranch&) {
      // zero-probability branch: contributes nothing
    }
    if (max_leaves && ++leaves > max_leaves)
      throw std::runtime_error("enumeration: leaf budget exceeded");
    while (!tape.empty() && tape.back().choice + 1 >= tape.back().arity)
      tape.pop_back();
    if (tape.empty()) break;
    ++tape.back().choice;
  }
}

}  // namespace bqcsim
