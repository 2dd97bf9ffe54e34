#pragma once

#include <array>
#include <cmath>
#include <span>

namespace posevocab {

using Vec3 = std::array<double, 3>;

// Raw quaternion components (w, x, y, z), no normalization or hemisphere
// guarantee.
using Quat4 = std::array<double, 4>;

struct AxisAngle {
  Vec3 v{0.0, 0.0, 0.0};

  double angle() const { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }
};

/// Unit quaternion kept on the canonical hemisphere: w >= 0, and when w == 0
/// the first nonzero of (x, y, z) is positive. Both q and -q describe the same
/// rotation; canonicalization makes the stored form unique.
class UnitQuat {
 public:
  UnitQuat() = default;

  /// Normalizes and canonicalizes. Throws kInvalidInput on zero or non-finite
  /// input.
  static UnitQuat from_components(double w, double x, double y, double z);

  /// Adopts components verbatim apart from the hemisphere fold. Used for keys
  /// read back from f32 storage, whose norm is only unit to f32 precision.
  static UnitQuat from_stored(double w, double x, double y, double z);

  static UnitQuat identity() { return UnitQuat(); }

  double w() const { return c_[0]; }
  double x() const { return c_[1]; }
  double y() const { return c_[2]; }
  double z() const { return c_[3]; }
  const Quat4& components() const { return c_; }

  /// Rotation angle in [0, pi].
  double angle() const;

  friend bool operator==(const UnitQuat&, const UnitQuat&) = default;

 private:
  explicit UnitQuat(const Quat4& c) : c_(c) {}

  Quat4 c_{1.0, 0.0, 0.0, 0.0};
};

void canonicalize_hemisphere(Quat4& q);

UnitQuat axis_angle_to_quat(const AxisAngle& aa);
AxisAngle quat_to_axis_angle(const UnitQuat& q);

/// Hamilton product a*b, canonicalized.
UnitQuat multiply(const UnitQuat& a, const UnitQuat& b);

/// 1 - |a.b|, clamped to [0, 1]. Invariant to the sign of either argument.
double rotation_distance(const Quat4& a, const Quat4& b);

inline double rotation_distance(const UnitQuat& a, const UnitQuat& b) {
  return rotation_distance(a.components(), b.components());
}

}  // namespace posevocab
