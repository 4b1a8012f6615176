#include "artipose/math.hpp"

#include <algorithm>

namespace artipose {

namespace {

// Switch point between the closed-form Rodrigues coefficients and their
// Taylor expansions. Double precision keeps both branches accurate to
// ~1e-16 around this angle.
constexpr double kSmallAngle = 1e-4;

}  // namespace

Mat3 axis_angle_to_matrix(const Vec3& r) {
  const double a2 = r.squared_norm();
  const double a = std::sqrt(a2);
  double A, B;
  if (a < kSmallAngle) {
    A = 1.0 - a2 / 6.0 + a2 * a2 / 120.0;
    B = 0.5 - a2 / 24.0 + a2 * a2 / 720.0;
  } else {
    A = std::sin(a) / a;
    B = (1.0 - std::cos(a)) / a2;
  }
  const Mat3 K = skew(r);
  return Mat3::identity() + K * A + (K * K) * B;
}

std::array<Mat3, 3> axis_angle_jacobian(const Vec3& r) {
  // Differentiate R = I + A [r]x + B [r]x^2 with A = sin a / a,
  // B = (1 - cos a) / a^2 directly:
  //   dR/dr_i = C1 r_i [r]x + A [e_i]x + C2 r_i [r]x^2
  //             + B ([e_i]x [r]x + [r]x [e_i]x)
  // where C1 = A'(a)/a and C2 = B'(a)/a; series keep the r -> 0 limit exact.
  const double a2 = r.squared_norm();
  const double a = std::sqrt(a2);
  double A, B, C1, C2;
  if (a < kSmallAngle) {
    A = 1.0 - a2 / 6.0 + a2 * a2 / 120.0;
    B = 0.5 - a2 / 24.0 + a2 * a2 / 720.0;
    C1 = -1.0 / 3.0 + a2 / 30.0 - a2 * a2 / 840.0;
    C2 = -1.0 / 12.0 + a2 / 180.0 - a2 * a2 / 6720.0;
  } else {
    const double sa = std::sin(a);
    const double ca = std::cos(a);
    A = sa / a;
    B = (1.0 - ca) / a2;
    C1 = (a * ca - sa) / (a2 * a);
    C2 = (a * sa - 2.0 * (1.0 - ca)) / (a2 * a2);
  }

  const Mat3 K = skew(r);
  const Mat3 K2 = K * K;
  std::array<Mat3, 3> out;
  for (int i = 0; i < 3; ++i) {
    Vec3 e;
    e[i] = 1.0;
    const Mat3 Ei = skew(e);
    out[static_cast<size_t>(i)] =
        K * (C1 * r[i]) + Ei * A + K2 * (C2 * r[i]) + (Ei * K + K * Ei) * B;
  }
  return out;
}

Vec3 matrix_to_axis_angle(const Mat3& R) {
  const double trace = R(0, 0) + R(1, 1) + R(2, 2);
  const double c = std::clamp((trace - 1.0) * 0.5, -1.0, 1.0);
  const double angle = std::acos(c);

  if (angle < 1e-10) return {0, 0, 0};

  if (angle > M_PI - 1e-6) {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // dominant column of R + I.
    Mat3 S = R + Mat3::identity();
    int col = 0;
    double best = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double n = S(0, j) * S(0, j) + S(1, j) * S(1, j) + S(2, j) * S(2, j);
      if (n > best) {
        best = n;
        col = j;
      }
    }
    Vec3 axis{S(0, col), S(1, col), S(2, col)};
    axis = axis / axis.norm();
    // Fix the sign so that the off-diagonal antisymmetric residue agrees.
    Vec3 w{R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)};
    if (axis.dot(w) < 0.0) axis = -axis;
    return axis * angle;
  }

  const double s = 2.0 * std::sin(angle);
  Vec3 axis{(R(2, 1) - R(1, 2)) / s, (R(0, 2) - R(2, 0)) / s,
            (R(1, 0) - R(0, 1)) / s};
  return axis * angle;
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transposed() * b;
  const double trace = rel(0, 0) + rel(1, 1) + rel(2, 2);
  return std::acos(std::clamp((trace - 1.0) * 0.5, -1.0, 1.0));
}

}  // namespace artipose
