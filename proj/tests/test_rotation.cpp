#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "posevocab/error.hpp"
#include "posevocab/rotation.hpp"

using namespace posevocab;
using doctest::Approx;

namespace {

UnitQuat uq(const oracle::Q& q) { return UnitQuat::from_components(q[0], q[1], q[2], q[3]); }

}  // namespace

TEST_SUITE("rotation") {
  TEST_CASE("axis-angle conversion examples") {
    const UnitQuat id = axis_angle_to_quat(AxisAngle{{0, 0, 0}});
    CHECK(id.components() == Quat4{1, 0, 0, 0});

    const UnitQuat half = axis_angle_to_quat(AxisAngle{{oracle::kPi, 0, 0}});
    CHECK(std::fabs(half.w()) <= 1e-16);
    CHECK(half.x() == Approx(1.0).epsilon(1e-15));
    CHECK(half.y() == 0.0);
    CHECK(half.z() == 0.0);

    const UnitQuat quarter = axis_angle_to_quat(AxisAngle{{oracle::kPi / 2, 0, 0}});
    const double c = std::cos(oracle::kPi / 4), s = std::sin(oracle::kPi / 4);
    CHECK(quarter.w() == Approx(c).epsilon(1e-15));
    CHECK(quarter.x() == Approx(s).epsilon(1e-15));
    CHECK(quarter.w() == Approx(0.70711).epsilon(1e-5));
  }

  TEST_CASE("tiny angles map to the identity") {
    CHECK(axis_angle_to_quat(AxisAngle{{1e-13, 0, 0}}) == UnitQuat::identity());
    CHECK(axis_angle_to_quat(AxisAngle{{0, -5e-13, 4e-13}}) == UnitQuat::identity());
  }

  TEST_CASE("angles past a full turn wrap") {
    const AxisAngle base{{0.3, -0.2, 0.5}};
    const double t = base.angle();
    const double k = (t + 2.0 * oracle::kPi) / t;
    const UnitQuat a = axis_angle_to_quat(base);
    const UnitQuat b = axis_angle_to_quat(AxisAngle{{0.3 * k, -0.2 * k, 0.5 * k}});
    CHECK(rotation_distance(a, b) < 1e-12);
    for (int i = 0; i < 4; ++i) CHECK(a.components()[i] == Approx(b.components()[i]).epsilon(1e-9));
  }

  TEST_CASE("non-finite input is rejected") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(axis_angle_to_quat(AxisAngle{{nan, 0, 0}}), Error);
    CHECK_THROWS_AS(axis_angle_to_quat(AxisAngle{{0, inf, 0}}), Error);
    CHECK_THROWS_AS(UnitQuat::from_components(0, 0, 0, 0), Error);
    try {
      axis_angle_to_quat(AxisAngle{{nan, 0, 0}});
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInvalidInput);
    }
  }

  TEST_CASE("canonical hemisphere") {
    oracle::Gen g(11);
    for (int i = 0; i < 2000; ++i) {
      const UnitQuat q = uq(g.quat());
      CHECK(q.w() >= 0.0);
      const auto& c = q.components();
      const double n = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3]);
      CHECK(std::fabs(n - 1.0) < 1e-12);
    }
    const UnitQuat a = UnitQuat::from_components(0.0, -1.0, 0.0, 0.0);
    CHECK(a.components() == Quat4{0, 1, 0, 0});
    const UnitQuat b = UnitQuat::from_components(-0.0, 0.0, -0.6, 0.8);
    CHECK(b.components() == Quat4{0, 0, 0.6, -0.8});
    CHECK(!std::signbit(b.w()));
    CHECK(!std::signbit(b.x()));
  }

  TEST_CASE("distance examples") {
    oracle::Gen g(3);
    const oracle::Q r = g.quat();
    CHECK(rotation_distance(r, r) == 0.0);
    CHECK(rotation_distance(r, oracle::Q{-r[0], -r[1], -r[2], -r[3]}) < 1e-15);
    const double d = rotation_distance(UnitQuat::identity(), axis_angle_to_quat(AxisAngle{{oracle::kPi / 2, 0, 0}}));
    CHECK(d == Approx(1.0 - std::cos(oracle::kPi / 4)).epsilon(1e-14));
    CHECK(d == Approx(0.29289).epsilon(1e-5));
  }

  TEST_CASE("distance properties on random pairs") {
    oracle::Gen g(12345);
    for (int i = 0; i < 10000; ++i) {
      const oracle::Q a = g.quat(), b = g.quat();
      const oracle::Q na{-a[0], -a[1], -a[2], -a[3]};
      const double d = rotation_distance(a, b);
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
      CHECK(std::fabs(d - rotation_distance(b, a)) <= 1e-12);
      CHECK(rotation_distance(a, a) <= 1e-12);
      CHECK(rotation_distance(a, na) <= 1e-12);
      CHECK(std::fabs(rotation_distance(na, b) - d) <= 1e-12);
    }
  }

  TEST_CASE("distance agrees with the rotation-matrix angle") {
    oracle::Gen g(99);
    for (int i = 0; i < 1000; ++i) {
      const AxisAngle a = g.axis_angle(oracle::kPi), b = g.axis_angle(oracle::kPi);
      const double d = rotation_distance(axis_angle_to_quat(a), axis_angle_to_quat(b));
      const double ref = oracle::matrix_distance(oracle::quat_from_axis_angle(a.v), oracle::quat_from_axis_angle(b.v));
      CHECK(std::fabs(d - ref) <= 1e-9);
    }
  }

  TEST_CASE("axis-angle round trip on (0, pi)") {
    oracle::Gen g(5);
    for (int i = 0; i < 2000; ++i) {
      const oracle::V axis = g.unit_vector();
      const double t = g.uniform(1e-6, oracle::kPi - 1e-6);
      const AxisAngle aa{{axis[0] * t, axis[1] * t, axis[2] * t}};
      const AxisAngle back = quat_to_axis_angle(axis_angle_to_quat(aa));
      for (int k = 0; k < 3; ++k) CHECK(std::fabs(back.v[k] - aa.v[k]) <= 1e-9);
    }
  }

  TEST_CASE("multiply composes rotations about one axis") {
    const UnitQuat a = axis_angle_to_quat(AxisAngle{{0, 0, 0.4}});
    const UnitQuat b = axis_angle_to_quat(AxisAngle{{0, 0, 0.7}});
    const UnitQuat ab = multiply(a, b);
    CHECK(ab.angle() == Approx(1.1).epsilon(1e-12));
    CHECK(rotation_distance(ab, axis_angle_to_quat(AxisAngle{{0, 0, 1.1}})) < 1e-14);
  }
}
