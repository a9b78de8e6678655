#pragma once

#include <cmath>
#include <compare>
#include <cstdint>

namespace bqcsim {

// Protocol angles live on the eight-point set {0, pi/4, ..., 7pi/4} and are
// stored exactly as a count of pi/4 units mod 8. No floating-point value ever
// enters a protocol message; conversion to radians happens only at the
// statevector boundary.
class Angle {
 public:
  constexpr Angle() = default;
  constexpr explicit Angle(int eighths) : eighths_(normalize(eighths)) {}

  constexpr int eighths() const { return eighths_; }
  double radians() const { return eighths_ * (kPi / 4.0); }

  static constexpr Angle pi() { return Angle(4); }

  constexpr Angle negated() const { return Angle(8 - eighths_); }

  friend constexpr Angle operator+(Angle a, Angle b) {
    return Angle(a.eighths_ + b.eighths_);
  }
  friend constexpr Angle operator-(Angle a, Angle b) {
    return Angle(a.eighths_ - b.eighths_ + 8);
  }
  friend constexpr auto operator<=>(Angle, Angle) = default;

 private:
  static constexpr int normalize(int e) { return ((e % 8) + 8) % 8; }
  static constexpr double kPi = 3.14159265358979323846;

  int eighths_ = 0;
};

// (-1)^x * t + z*pi, the encoding a client applies before handing a basis
// angle to a server that holds the X^x Z^z corrected half of a Bell pair.
constexpr Angle mf_encode(Angle t, int x, int z) {
  Angle signed_t = x ? t.negated() : t;
  return z ? signed_t + Angle::pi() : signed_t;
}

// delta = theta + phi' + r*pi, the blinded measurement instruction.
constexpr Angle delta_angle(Angle theta, Angle phi_prime, int r) {
  Angle d = theta + phi_prime;
  return r ? d + Angle::pi() : d;
}

// Angle of the partner qubit after measuring one half of a plain Bell pair
// at angle theta_tilde with outcome m: -theta_tilde + m*pi.
constexpr Angle rsp_collapse(Angle theta_tilde, int m) {
  Angle a = theta_tilde.negated();
  return m ? a + Angle::pi() : a;
}

}  // namespace bqcsim
