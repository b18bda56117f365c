// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Core 3D types: points, point clouds, SE(3) transforms with exp/log maps,
// and voxel-grid downsampling.

#ifndef WGICP_GEOMETRY_HPP
#define WGICP_GEOMETRY_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <map>
#include <tuple>
#include <vector>

#include "wgicp/errors.hpp"

namespace wgicp {

using Point3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Ordered set of 3D points with optional per-point covariances (m^2)
/// and optional per-point weights in [0,1].
struct PointCloud {
  std::vector<Point3> points;
  std::vector<Mat3> covariances;  // empty, or one 3x3 SPD matrix per point
  std::vector<double> weights;    // empty, or one weight in [0,1] per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_covariances() const { return !covariances.empty(); }
  bool has_weights() const { return !weights.empty(); }

  /// Weight of point i, defaulting to 1 when no weights are attached.
  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }
};

/// SE(3) pose: orthonormal rotation (det +1) plus translation in meters.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Point3 apply(const Point3& p) const { return R * p + t; }
  Point3 operator()(const Point3& p) const { return apply(p); }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.R = R.transpose();
    inv.t = -(inv.R * t);
    return inv;
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = t;
    return m;
  }

  bool is_valid(double tol = 1e-9) const {
    const double ortho = (R.transpose() * R - Mat3::Identity()).norm();
    return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol && t.allFinite();
  }
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.R = a.R * b.R;
  out.t = a.R * b.t + a.t;
  return out;
}

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return compose(a, b);
}

/// Tangent-space parameterization of SE(3): axis-angle rotation (radians)
/// and a translation block (meters), mapped through the left Jacobian.
struct Twist {
  Vec3 rot = Vec3::Zero();
  Vec3 trans = Vec3::Zero();

  /// Packs as [trans; rot], the ordering used by the LM solvers.
  Vec6 vector() const {
    Vec6 v;
    v << trans, rot;
    return v;
  }
  static Twist from_vector(const Vec6& v) {
    Twist x;
    x.trans = v.head<3>();
    x.rot = v.tail<3>();
    return x;
  }
  double norm() const { return vector().norm(); }
};

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

namespace detail {

// Rodrigues coefficients a = sin(t)/t, b = (1-cos(t))/t^2, c = (t-sin(t))/t^3
// as functions of t^2; even functions, so the series branch is smooth at 0.
inline void rodrigues_coeffs(double theta_sq, double& a, double& b, double& c) {
  if (theta_sq < 1e-8) {
    a = 1.0 - theta_sq / 6.0 + theta_sq * theta_sq / 120.0;
    b = 0.5 - theta_sq / 24.0 + theta_sq * theta_sq / 720.0;
    c = 1.0 / 6.0 - theta_sq / 120.0 + theta_sq * theta_sq / 5040.0;
  } else {
    const double theta = std::sqrt(theta_sq);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta_sq;
    c = (1.0 - a) / theta_sq;
  }
}

}  // namespace detail

inline Mat3 so3_exp(const Vec3& omega) {
  double a, b, c;
  detail::rodrigues_coeffs(omega.squaredNorm(), a, b, c);
  const Mat3 k = skew(omega);
  return Mat3::Identity() + a * k + b * (k * k);
}

inline RigidTransform exp_map(const Twist& xi) {
  double a, b, c;
  detail::rodrigues_coeffs(xi.rot.squaredNorm(), a, b, c);
  const Mat3 k = skew(xi.rot);
  const Mat3 k2 = k * k;
  RigidTransform out;
  out.R = Mat3::Identity() + a * k + b * k2;
  const Mat3 v = Mat3::Identity() + b * k + c * k2;  // SE(3) left Jacobian
  out.t = v * xi.trans;
  return out;
}

/// Inverse of exp_map. Requires rotation angle < pi - 1e-6.
inline Twist log_map(const RigidTransform& T) {
  const double cos_theta = std::clamp((T.R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  if (theta >= M_PI - 1e-6) {
    throw AngleNearPiError("log_map: rotation angle too close to pi");
  }
  Twist xi;
  const Vec3 w(T.R(2, 1) - T.R(1, 2), T.R(0, 2) - T.R(2, 0), T.R(1, 0) - T.R(0, 1));
  if (theta < 1e-8) {
    xi.rot = 0.5 * w;  // first-order: R - R^T ~ 2 skew(omega)
  } else {
    xi.rot = (theta / (2.0 * std::sin(theta))) * w;
  }
  // Inverse left Jacobian applied to the translation.
  const Mat3 k = skew(xi.rot);
  double inv_c;
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    inv_c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    inv_c = (1.0 - 0.5 * theta * std::cos(0.5 * theta) / std::sin(0.5 * theta)) / (theta * theta);
  }
  const Mat3 v_inv = Mat3::Identity() - 0.5 * k + inv_c * (k * k);
  xi.trans = v_inv * T.t;
  return xi;
}

/// Transforms a cloud: points are moved rigidly, covariances are conjugated.
inline PointCloud transformed(const PointCloud& cloud, const RigidTransform& T) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(T.apply(p));
  out.covariances.reserve(cloud.covariances.size());
  for (const auto& c : cloud.covariances) out.covariances.push_back(T.R * c * T.R.transpose());
  out.weights = cloud.weights;
  return out;
}

/// Voxel-grid downsampling: one centroid per occupied voxel.
/// Voxel index is floor(coord / voxel_size); output is ordered by voxel
/// index lexicographically, so the result does not depend on input order
/// beyond floating-point summation.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0)) {
    throw NonPositiveVoxelError("voxel_downsample: voxel_size must be > 0");
  }
  using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
  std::map<Key, std::pair<Vec3, std::size_t>> cells;
  for (const auto& p : cloud.points) {
    const Key key{static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
                  static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
                  static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
    auto [it, inserted] = cells.try_emplace(key, Vec3::Zero(), 0);
    it->second.first += p;
    it->second.second += 1;
  }
  PointCloud out;
  out.points.reserve(cells.size());
  for (const auto& [key, cell] : cells) {
    out.points.push_back(cell.first / static_cast<double>(cell.second));
  }
  return out;
}

}  // namespace wgicp

#endif  // WGICP_GEOMETRY_HPP
