// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Per-point covariance estimation (PCA over k-neighborhoods) with the
// plane-regularized eigenvalue convention used by GICP.

#ifndef WGICP_COVARIANCE_HPP
#define WGICP_COVARIANCE_HPP

#include <Eigen/Eigenvalues>
#include <cstddef>

#include "wgicp/errors.hpp"
#include "wgicp/geometry.hpp"
#include "wgicp/knn.hpp"
#include "wgicp/runtime.hpp"

namespace wgicp {

enum class CovarianceMode {
  PlaneRegularized,  // eigenvalues replaced by (1, 1, plane_epsilon)
  Raw,               // unmodified sample covariance
};

struct CovarianceParams {
  int k_neighbors = 20;          // neighborhood size, self included
  double plane_epsilon = 1e-3;   // smallest eigenvalue after regularization
  CovarianceMode regularization = CovarianceMode::PlaneRegularized;

  void validate() const {
    if (k_neighbors < 3) throw InvalidArgumentError("CovarianceParams: k_neighbors must be >= 3");
    if (!(plane_epsilon > 0.0 && plane_epsilon < 1.0)) {
      throw InvalidArgumentError("CovarianceParams: plane_epsilon must be in (0, 1)");
    }
  }
};

/// Estimates one covariance per point from the sample covariance of its
/// k nearest neighbors (the point itself included). In PlaneRegularized
/// mode the eigenvalues are replaced by (1, 1, plane_epsilon) in the
/// descending eigenbasis, giving the planar-disk matrices GICP expects.
inline PointCloud estimate_covariances(const PointCloud& cloud, const CovarianceParams& params) {
  params.validate();
  const std::size_t n = cloud.size();
  if (n < static_cast<std::size_t>(params.k_neighbors)) {
    throw TooFewPointsError("estimate_covariances: cloud smaller than k_neighbors");
  }

  PointCloud out = cloud;
  out.covariances.assign(n, Mat3::Zero());

  const bool whole_cloud = static_cast<std::size_t>(params.k_neighbors) >= n;
  Mat3 shared = Mat3::Zero();
  if (whole_cloud) {
    Vec3 mean = Vec3::Zero();
    for (const auto& p : cloud.points) mean += p;
    mean /= static_cast<double>(n);
    for (const auto& p : cloud.points) {
      const Vec3 d = p - mean;
      shared += d * d.transpose();
    }
    shared /= static_cast<double>(n - 1);
  }

  const KdTree tree(cloud.points);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<KdTree::Neighbor> nbrs;
    for (std::size_t i = begin; i < end; ++i) {
      Mat3 cov;
      if (whole_cloud) {
        cov = shared;
      } else {
        tree.query(cloud.points[i], params.k_neighbors, nbrs);
        Vec3 mean = Vec3::Zero();
        for (const auto& nb : nbrs) mean += cloud.points[static_cast<std::size_t>(nb.index)];
        mean /= static_cast<double>(nbrs.size());
        cov = Mat3::Zero();
        for (const auto& nb : nbrs) {
          const Vec3 d = cloud.points[static_cast<std::size_t>(nb.index)] - mean;
          cov += d * d.transpose();
        }
        cov /= static_cast<double>(nbrs.size() - 1);
      }

      if (params.regularization == CovarianceMode::PlaneRegularized) {
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        // Eigen sorts ascending; the smallest axis gets plane_epsilon.
        const Mat3 basis = eig.eigenvectors();
        Vec3 values(params.plane_epsilon, 1.0, 1.0);
        cov = basis * values.asDiagonal() * basis.transpose();
      }
      out.covariances[i] = cov;
    }
  });
  return out;
}

}  // namespace wgicp

#endif  // WGICP_COVARIANCE_HPP
