#include "posevocab/rotation.hpp"

#include <algorithm>
#include <numbers>

#include "posevocab/error.hpp"

namespace posevocab {

namespace {

constexpr double kIdentityAngle = 1e-12;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

void canonicalize_hemisphere(Quat4& q) {
  bool flip = false;
  if (q[0] < 0.0) {
    flip = true;
  } else if (q[0] == 0.0) {
    for (int i = 1; i < 4; ++i) {
      if (q[i] != 0.0) {
        flip = q[i] < 0.0;
        break;
      }
    }
  }
  if (flip) {
    for (double& c : q) c = -c;
  }
  // -0.0 would make bitwise comparisons of equal rotations fail.
  for (double& c : q) {
    if (c == 0.0) c = 0.0;
  }
}

UnitQuat UnitQuat::from_components(double w, double x, double y, double z) {
  Quat4 q{w, x, y, z};
  double norm2 = 0.0;
  for (double c : q) {
    if (!std::isfinite(c)) {
      throw Error(ErrorCode::kInvalidInput, "quaternion component is not finite");
    }
    norm2 += c * c;
  }
  if (norm2 == 0.0) {
    throw Error(ErrorCode::kInvalidInput, "zero quaternion has no rotation");
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& c : q) c *= inv;
  canonicalize_hemisphere(q);
  return UnitQuat(q);
}

UnitQuat UnitQuat::from_stored(double w, double x, double y, double z) {
  Quat4 q{w, x, y, z};
  for (double c : q) {
    if (!std::isfinite(c)) {
      throw Error(ErrorCode::kNonFinite, "stored quaternion component is not finite");
    }
  }
  canonicalize_hemisphere(q);
  return UnitQuat(q);
}

double UnitQuat::angle() const {
  const double s = std::sqrt(c_[1] * c_[1] + c_[2] * c_[2] + c_[3] * c_[3]);
  return 2.0 * std::atan2(s, std::abs(c_[0]));
}

UnitQuat axis_angle_to_quat(const AxisAngle& aa) {
  for (double c : aa.v) {
    if (!std::isfinite(c)) {
      throw Error(ErrorCode::kInvalidInput, "axis-angle component is not finite");
    }
  }
  const double norm = aa.angle();
  double angle = norm;
  if (angle >= kTwoPi) angle = std::fmod(angle, kTwoPi);
  if (angle < kIdentityAngle) return UnitQuat::identity();

  const double half = 0.5 * angle;
  const double s = std::sin(half) / norm;
  return UnitQuat::from_components(std::cos(half), s * aa.v[0], s * aa.v[1], s * aa.v[2]);
}

AxisAngle quat_to_axis_angle(const UnitQuat& q) {
  const double s = std::sqrt(q.x() * q.x() + q.y() * q.y() + q.z() * q.z());
  if (s < kIdentityAngle) return AxisAngle{};
  const double angle = 2.0 * std::atan2(s, q.w());
  const double k = angle / s;
  return AxisAngle{{k * q.x(), k * q.y(), k * q.z()}};
}

UnitQuat multiply(const UnitQuat& a, const UnitQuat& b) {
  return UnitQuat::from_components(
      a.w() * b.w() - a.x() * b.x() - a.y() * b.y() - a.z() * b.z(),
      a.w() * b.x() + a.x() * b.w() + a.y() * b.z() - a.z() * b.y(),
      a.w() * b.y() - a.x() * b.z() + a.y() * b.w() + a.z() * b.x(),
      a.w() * b.z() + a.x() * b.y() - a.y() * b.x() + a.z() * b.w());
}

double rotation_distance(const Quat4& a, const Quat4& b) {
  // Identical or negated components give exactly zero; the dot product of a
  // unit quaternion with itself can miss 1 by an ulp.
  if (a == b || (a[0] == -b[0] && a[1] == -b[1] && a[2] == -b[2] && a[3] == -b[3])) return 0.0;
  const double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
  return std::clamp(1.0 - std::abs(dot), 0.0, 1.0);
}

}  // namespace posevocab
