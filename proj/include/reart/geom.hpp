#pragma once

// SE(3) rigid transforms, twists and screw-joint parameterization.
//
// Conventions:
//   compose(a, b)  = b * a         (apply a first, then b)
//   relative(a, b) = inv(b) * a
//   screw_transform(s, (tau, d)) = Exp([tau l ; tau (m x l) + d l])
//
// The Exp map is templated on the scalar type so the fitting code can push
// forward-mode derivatives (Eigen::AutoDiffScalar) through it.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <type_traits>

namespace reart {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
  }
  // Matrix product: (*this) * other, i.e. `other` is applied first.
  RigidTransform operator*(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }
  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
  static RigidTransform from_matrix(const Mat4& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }
};

struct Twist {
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

struct ScrewParams {
  Vec3 axis = Vec3::UnitZ();    // unit direction l
  Vec3 moment = Vec3::Zero();   // a point m on the axis line
};

struct JointState {
  double tau = 0.0;  // rotation about the axis, radians
  double d = 0.0;    // translation along the axis
  // Rotation vector; used only by spherical joints.
  Vec3 rotation = Vec3::Zero();
};

enum class JointType { Revolute, Prismatic, Spherical };

const char* to_string(JointType type);
JointType joint_type_from_string(const std::string& name);

inline constexpr double kSmallAngle = 1e-8;

template <typename T>
Eigen::Matrix<T, 3, 3> hat(const Eigen::Matrix<T, 3, 1>& w) {
  Eigen::Matrix<T, 3, 3> m;
  m << T(0), -w.z(), w.y(),
       w.z(), T(0), -w.x(),
       -w.y(), w.x(), T(0);
  return m;
}

inline Vec3 vee(const Mat3& m) {
  return {m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)};
}

namespace detail {
template <typename T>
double value_of(const T& x) {
  if constexpr (std::is_arithmetic_v<T>) {
    return static_cast<double>(x);
  } else {
    return x.value();
  }
}
}  // namespace detail

// Rodrigues closed form for Exp([omega; v]). Writes rotation and translation.
template <typename T>
void exp_twist(const Eigen::Matrix<T, 3, 1>& omega, const Eigen::Matrix<T, 3, 1>& v,
               Eigen::Matrix<T, 3, 3>& rotation, Eigen::Matrix<T, 3, 1>& translation) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T theta_sq = omega.squaredNorm();
  T a, b, c;  // sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3
  if (std::sqrt(detail::value_of(theta_sq)) < kSmallAngle) {
    a = T(1) - theta_sq / T(6);
    b = T(0.5) - theta_sq / T(24);
    c = T(1.0 / 6.0) - theta_sq / T(120);
  } else {
    const T theta = sqrt(theta_sq);
    const T half_sin = sin(theta / T(2));
    a = sin(theta) / theta;
    b = T(2) * half_sin * half_sin / theta_sq;
    c = (theta - sin(theta)) / (theta_sq * theta);
  }
  const Eigen::Matrix<T, 3, 3> w = hat<T>(omega);
  const Eigen::Matrix<T, 3, 3> w2 = w * w;
  const Eigen::Matrix<T, 3, 3> eye = Eigen::Matrix<T, 3, 3>::Identity();
  rotation = eye + a * w + b * w2;
  translation = (eye + b * w + c * w2) * v;
}

RigidTransform exp_twist(const Twist& xi);

// Inverse of exp_twist. Throws Error(AngleNearPi) when the rotation angle is
// within 1e-6 of pi, where the log branch is ambiguous.
Twist log_transform(const RigidTransform& T);

// Rotation vector of R that never throws; near pi the axis is recovered from
// the symmetric part of R.
Vec3 rotation_log(const Mat3& R);

Twist screw_twist(const ScrewParams& s, const JointState& theta);
RigidTransform screw_transform(const ScrewParams& s, const JointState& theta);

// Rotation about the fixed point `center` by the rotation vector.
RigidTransform spherical_transform(const Vec3& center, const Vec3& rotation);

// a (+) b = b * a
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
// a (-) b = inv(b) * a
RigidTransform relative(const RigidTransform& a, const RigidTransform& b);

// Nearest rotation matrix (polar decomposition).
Mat3 orthonormalize(const Mat3& R);
// max |R^T R - I| elementwise
double orthonormality_drift(const Mat3& R);

// trace(I - R) + |t|^2. Zero for the identity; the rotation part equals
// 2 (1 - cos angle).
double trace_residual(const RigidTransform& T);

// Flip l so the first nonzero component is positive.
Vec3 canonical_axis_sign(const Vec3& l);

// Distance from point p to the line through m with direction l (unit).
double point_line_distance(const Vec3& p, const Vec3& m, const Vec3& l);

}  // namespace reart
