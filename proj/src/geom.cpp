#include "reart/geom.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <numbers>

#include "reart/error.hpp"

namespace reart {

const char* to_string(JointType type) {
  switch (type) {
    case JointType::Revolute: return "revolute";
    case JointType::Prismatic: return "prismatic";
    case JointType::Spherical: return "spherical";
  }
  return "unknown";
}

JointType joint_type_from_string(const std::string& name) {
  if (name == "revolute") return JointType::Revolute;
  if (name == "prismatic") return JointType::Prismatic;
  if (name == "spherical") return JointType::Spherical;
  throw Error(ErrorCode::Format, "unknown joint type '" + name + "'");
}

RigidTransform exp_twist(const Twist& xi) {
  RigidTransform out;
  exp_twist<double>(xi.omega, xi.v, out.rotation, out.translation);
  return out;
}

namespace {

// Angle and unnormalized axis data shared by the log maps.
struct AngleAxis {
  double theta;
  Vec3 omega;
};

AngleAxis rotation_angle(const Mat3& R) {
  const Vec3 w = vee(R);
  const double s = 0.5 * w.norm();
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);
  Vec3 omega;
  if (theta < 1e-6) {
    omega = 0.5 * w * (1.0 + theta * theta / 6.0);
  } else {
    omega = theta / (2.0 * std::sin(theta)) * w;
  }
  return {theta, omega};
}

}  // namespace

Vec3 rotation_log(const Mat3& R) {
  const AngleAxis aa = rotation_angle(R);
  if (aa.theta < std::numbers::pi - 1e-3) return aa.omega;
  // Near pi: recover the axis from the symmetric part.
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const Mat3 outer = (0.5 * (R + R.transpose()) - c * Mat3::Identity()) / (1.0 - c);
  int k = 0;
  outer.diagonal().maxCoeff(&k);
  Vec3 axis = outer.col(k) / std::sqrt(std::max(outer(k, k), 1e-300));
  axis.normalize();
  const Vec3 w = vee(R);
  if (axis.dot(w) < 0.0) axis = -axis;
  return aa.theta * axis;
}

Twist log_transform(const RigidTransform& T) {
  const AngleAxis aa = rotation_angle(T.rotation);
  if (aa.theta >= std::numbers::pi - 1e-6) {
    throw Error(ErrorCode::AngleNearPi, "rotation angle too close to pi for a unique log");
  }
  const double theta = aa.theta;
  double coef;
  if (theta < 1e-4) {
    coef = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double a = std::sin(theta) / theta;
    const double half_sin = std::sin(0.5 * theta);
    const double b = 2.0 * half_sin * half_sin / (theta * theta);
    coef = (1.0 - a / (2.0 * b)) / (theta * theta);
  }
  const Mat3 W = hat<double>(aa.omega);
  const Mat3 v_inv = Mat3::Identity() - 0.5 * W + coef * W * W;
  return {aa.omega, v_inv * T.translation};
}

Twist screw_twist(const ScrewParams& s, const JointState& theta) {
  return {theta.tau * s.axis, theta.tau * s.moment.cross(s.axis) + theta.d * s.axis};
}

RigidTransform screw_transform(const ScrewParams& s, const JointState& theta) {
  return exp_twist(screw_twist(s, theta));
}

RigidTransform spherical_transform(const Vec3& center, const Vec3& rotation) {
  return exp_twist(Twist{rotation, center.cross(rotation)});
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return b * a; }

RigidTransform relative(const RigidTransform& a, const RigidTransform& b) {
  return b.inverse() * a;
}

Mat3 orthonormalize(const Mat3& R) {
  Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    out = u * svd.matrixV().transpose();
  }
  return out;
}

double orthonormality_drift(const Mat3& R) {
  return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
}

double trace_residual(const RigidTransform& T) {
  return (3.0 - T.rotation.trace()) + T.translation.squaredNorm();
}

Vec3 canonical_axis_sign(const Vec3& l) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(l[i]) > 1e-12) return l[i] < 0.0 ? Vec3(-l) : l;
  }
  return l;
}

double point_line_distance(const Vec3& p, const Vec3& m, const Vec3& l) {
  const Vec3 r = p - m;
  return (r - r.dot(l) * l).norm();
}

}  // namespace reart
