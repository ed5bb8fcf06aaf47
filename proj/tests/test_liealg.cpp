#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vibe/liealg.hpp"
#include "vibe/simulator.hpp"

using namespace vibe;

namespace {

// 20-term matrix power series of exp(skew(phi)), independent of the
// closed-form implementation
Mat3 expSeriesOracle(const Vec3& phi) {
  const Mat3 W = skew(phi);
  Mat3 acc = Mat3::Identity();
  Mat3 term = Mat3::Identity();
  for (int k = 1; k <= 20; ++k) {
    term = term * W / static_cast<double>(k);
    acc += term;
  }
  return acc;
}

}  // namespace

TEST_CASE("skew basics") {
  Mat3 expected;
  expected << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  CHECK((skew(Vec3(1, 0, 0)) - expected).norm() == doctest::Approx(0.0));

  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    const Vec3 a = rng.gaussian3(), b = rng.gaussian3();
    CHECK((skew(a) * b - a.cross(b)).norm() == doctest::Approx(0.0));
    CHECK((skew(a) * a).norm() == doctest::Approx(0.0));
    CHECK((skew(a) * b + skew(b) * a).norm() == doctest::Approx(0.0));
    CHECK((skew(a) + skew(a).transpose()).norm() == doctest::Approx(0.0));
  }
}

TEST_CASE("so3Exp zero and full turn") {
  CHECK((so3Exp(Vec3::Zero()) - Mat3::Identity()).norm() < 1e-15);
  const Vec3 full_turn = 2.0 * M_PI * Vec3(1, 2, 2).normalized();
  CHECK((so3Exp(full_turn) - Mat3::Identity()).norm() < 1e-9);
}

TEST_CASE("so3Exp quarter turn about x vs series oracle") {
  const Vec3 phi(M_PI / 2.0, 0, 0);
  const Mat3 R = so3Exp(phi);
  CHECK((R - expSeriesOracle(phi)).norm() < 1e-12);
  // rotating y axis by 90 deg about x lands on z
  CHECK((R.col(1) - Vec3(0, 0, 1)).norm() < 1e-12);
}

TEST_CASE("so3Exp random values vs series oracle") {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const Vec3 phi = rng.gaussian3();
    CHECK((so3Exp(phi) - expSeriesOracle(phi)).norm() < 1e-12);
  }
}

TEST_CASE("so3Exp rejects non-finite input") {
  CHECK_THROWS_AS(so3Exp(Vec3(std::nan(""), 0, 0)), std::invalid_argument);
}

TEST_CASE("so3Log identity and round trip") {
  CHECK(so3Log(Mat3::Identity()).norm() == doctest::Approx(0.0));
  const Vec3 phi(0.1, 0.2, 0.3);
  CHECK((so3Log(so3Exp(phi)) - phi).norm() < 1e-9);
}

TEST_CASE("so3Log pi rotation about z") {
  const Mat3 R = so3Exp(Vec3(0, 0, M_PI));
  const Vec3 l = so3Log(R);
  // brute-force search over axis candidates: rotation by pi about each axis
  double best = 1e9;
  Vec3 best_axis;
  for (const Vec3& axis : {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}) {
    for (double s : {-1.0, 1.0}) {
      const double d = (so3Exp(M_PI * s * axis).matrix() - R).norm();
      if (d < best) {
        best = d;
        best_axis = s * axis;
      }
    }
  }
  CHECK(best < 1e-12);
  CHECK(std::abs(best_axis.z()) == doctest::Approx(1.0));
  CHECK(std::abs(l.norm() - M_PI) < 1e-9);
  CHECK(std::abs(std::abs(l.z()) - M_PI) < 1e-9);
  CHECK((so3Exp(l) - R).norm() < 1e-9);
}

TEST_CASE("exp/log round trip property") {
  Rng rng(11);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Vec3 dir = rng.gaussian3();
    while (dir.norm() < 1e-6) dir = rng.gaussian3();
    dir.normalize();
    const double angle = rng.uniform(1e-12, M_PI - 1e-3);
    const Vec3 phi = angle * dir;
    worst = std::max(worst, (so3Log(so3Exp(phi)) - phi).norm());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("right Jacobian identity at zero and defining property") {
  CHECK((so3RightJacobian(Vec3::Zero()) - Mat3::Identity()).norm() < 1e-15);

  const Vec3 phi(0.3, 0, 0);
  const Mat3 Jr = so3RightJacobian(phi);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Vec3 d = 1e-6 * rng.gaussian3();
    const Mat3 lhs = so3Exp(phi + d);
    const Mat3 rhs = so3Exp(phi) * so3Exp(Jr * d);
    CHECK((lhs - rhs).norm() < 1e-8);
  }
}

TEST_CASE("right Jacobian inverse consistency") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const Vec3 phi = 0.9 * M_PI * rng.uniform() * rng.gaussian3().normalized();
    const Mat3 prod = so3RightJacobian(phi) * so3RightJacobianInverse(phi);
    CHECK((prod - Mat3::Identity()).norm() < 1e-9);
  }
}

TEST_CASE("Rot3 invariants and re-orthonormalization over long chains") {
  Rng rng(13);
  Rot3 R;
  for (int i = 0; i < 10000; ++i) {
    R = R * Rot3::Exp(0.1 * rng.gaussian3());
    if (i % 1000 == 0) CHECK(R.isValid(1e-9));
  }
  CHECK(R.isValid(1e-9));
  CHECK(std::abs(R.matrix().determinant() - 1.0) < 1e-9);
}

TEST_CASE("Pose3 composition and inverse") {
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    const Pose3 a(Rot3::Exp(rng.gaussian3()), rng.gaussian3());
    const Pose3 b(Rot3::Exp(rng.gaussian3()), rng.gaussian3());
    const Pose3 c(Rot3::Exp(rng.gaussian3()), rng.gaussian3());
    const Vec3 p = rng.gaussian3();
    // associativity
    CHECK((((a * b) * c) * p - (a * (b * c)) * p).norm() < 1e-9);
    // inverse o self = identity
    const Pose3 id = a.inverse() * a;
    CHECK((id.rotation().matrix() - Mat3::Identity()).norm() < 1e-9);
    CHECK(id.translation().norm() < 1e-9);
    CHECK((a.transformTo(a * p) - p).norm() < 1e-9);
  }
}

TEST_CASE("shortestArc maps a onto b") {
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    const Vec3 a = rng.gaussian3().normalized();
    const Vec3 b = rng.gaussian3().normalized();
    CHECK((shortestArc(a, b) * a - b).norm() < 1e-12);
  }
  // antiparallel branch
  const Vec3 u = Vec3(0.3, -0.5, 0.81).normalized();
  CHECK((shortestArc(u, -u) * u + u).norm() < 1e-9);
}
