#pragma once

#include <Eigen/Dense>
#include <vector>

namespace ecrl {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

// Unit quaternion representing a rotation in SO(3). Kept normalized and
// sign-canonicalized (w >= 0, ties broken by the first nonzero component).
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  Quat() = default;
  Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat conjugate() const { return {w, -x, -y, -z}; }
  double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }

  Eigen::Vector4d coeffs() const { return {w, x, y, z}; }
};

// Axis-angle increment in the tangent space of SO(3), radians.
using Tangent3 = Vec3;

Quat quat_normalize(const Quat& q);
Quat quat_canonicalize(const Quat& q);
Quat quat_compose(const Quat& a, const Quat& b);
Quat quat_inverse(const Quat& q);
Quat quat_exp(const Tangent3& t);
Tangent3 quat_log(const Quat& q);
double geodesic_distance(const Quat& a, const Quat& b);
Mat3 quat_to_matrix(const Quat& q);
Quat quat_from_matrix(const Mat3& m);

// First two columns of the rotation matrix, stacked.
Vec6 rotation_to_6d(const Quat& q);

// R_g^{-1} * R: rotation remaining from `current` to `goal`'s frame.
Quat relative_rotation(const Quat& goal, const Quat& current);

// Rotate a vector by the quaternion.
Vec3 quat_rotate(const Quat& q, const Vec3& v);

// The 24 rotations of the octahedral group, generated by closure from the
// three pi/2 generators and sorted lexicographically on canonicalized
// (w, x, y, z) so that goal indices are stable across runs.
const std::vector<Quat>& octahedral_group();

// Index of the group element nearest to q (geodesic), used for goal bookkeeping.
int octahedral_nearest(const Quat& q);

// Estimated system state with latent augmentation.
struct Estimate {
  Vec3 x = Vec3::Zero();
  Quat R;
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
  Eigen::VectorXd l;  // latent, d_l dims

  explicit Estimate(int latent_dim = 0) : l(Eigen::VectorXd::Zero(latent_dim)) {}
};

// Tangent-space increment applied by boxplus; dimension 12 + d_l.
struct StateIncrement {
  Vec3 dx = Vec3::Zero();
  Tangent3 dr = Tangent3::Zero();
  Vec3 dv = Vec3::Zero();
  Vec3 dw = Vec3::Zero();
  Eigen::VectorXd dl;

  explicit StateIncrement(int latent_dim = 0) : dl(Eigen::VectorXd::Zero(latent_dim)) {}
};

// Generalized addition: left rotation increment exp(dr) * R, plain adds on
// the vector parts and the latent.
Estimate boxplus(const Estimate& s, const StateIncrement& d);

}  // namespace ecrl
