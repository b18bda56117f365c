// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// KITTI odometry ingestion: Velodyne .bin scans, pose files, calibration,
// and trajectory output in the same 12-number line format.

#ifndef WGICP_IO_KITTI_HPP
#define WGICP_IO_KITTI_HPP

#include <Eigen/SVD>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wgicp/errors.hpp"
#include "wgicp/geometry.hpp"

namespace wgicp {

/// A raw lidar scan: points plus one reflectance value per point.
struct VelodyneScan {
  PointCloud points;
  std::vector<double> reflectances;
};

/// Poses in the KITTI camera/world convention plus the Velodyne-to-camera
/// calibration needed to express them in the lidar frame.
struct PoseFile {
  std::vector<RigidTransform> poses;
  RigidTransform calib;  // maps Velodyne coordinates into the camera frame
};

/// Parses consecutive little-endian float32 (x, y, z, reflectance) records.
inline VelodyneScan read_velodyne_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("read_velodyne_bin: cannot open " + path.string());
  const std::streamoff size = in.tellg();
  if (size % 16 != 0) {
    throw TruncatedFileError("read_velodyne_bin: " + path.string() + " has " +
                             std::to_string(size) + " bytes, not a multiple of 16");
  }
  in.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(size));
  in.read(buf.data(), size);
  if (!in && size > 0) throw IoError("read_velodyne_bin: short read on " + path.string());

  VelodyneScan scan;
  const std::size_t n = static_cast<std::size_t>(size) / 16;
  scan.points.points.reserve(n);
  scan.reflectances.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    float rec[4];
    std::memcpy(rec, buf.data() + i * 16, 16);
    scan.points.points.emplace_back(rec[0], rec[1], rec[2]);
    scan.reflectances.push_back(rec[3]);
  }
  return scan;
}

/// Fixture/export helper, the exact inverse of read_velodyne_bin.
inline void write_velodyne_bin(const VelodyneScan& scan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_velodyne_bin: cannot open " + path.string());
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const auto& p = scan.points.points[i];
    const float rec[4] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                          static_cast<float>(p.z()),
                          i < scan.reflectances.size() ? static_cast<float>(scan.reflectances[i]) : 0.0f};
    out.write(reinterpret_cast<const char*>(rec), 16);
  }
  if (!out) throw IoError("write_velodyne_bin: write failed for " + path.string());
}

namespace detail {

/// Nearest rotation by SVD; throws NonRotationError when the block is
/// farther than 1e-3 from any proper rotation.
inline Mat3 orthonormalized(const Mat3& raw, std::size_t line) {
  Eigen::JacobiSVD<Mat3> svd(raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  if ((raw - r).norm() >= 1e-3) {
    throw NonRotationError("pose rotation block too far from a rotation", line);
  }
  return r;
}

inline RigidTransform parse_pose_line(const std::string& text, std::size_t line) {
  std::istringstream ss(text);
  double v[12];
  for (auto& x : v) {
    if (!(ss >> x)) throw MalformedLineError("expected 12 numbers in pose line", line);
  }
  std::string extra;
  if (ss >> extra) throw MalformedLineError("trailing tokens in pose line", line);
  Mat3 raw;
  raw << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
  RigidTransform T;
  T.R = orthonormalized(raw, line);
  T.t = Vec3(v[3], v[7], v[11]);
  return T;
}

}  // namespace detail

/// Reads a KITTI calib.txt and returns the transform on its "Tr:" line.
inline RigidTransform read_calib(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_calib: cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("Tr:", 0) == 0) {
      return detail::parse_pose_line(line.substr(3), line_no);
    }
  }
  throw IoError("read_calib: no 'Tr:' line in " + path.string());
}

/// Reads a KITTI pose file (12 row-major numbers per line); when
/// calib_path is nonempty the file's "Tr:" transform is attached,
/// otherwise the calibration defaults to identity.
inline PoseFile read_poses(const std::filesystem::path& path,
                           const std::filesystem::path& calib_path = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("read_poses: cannot open " + path.string());
  PoseFile out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.poses.push_back(detail::parse_pose_line(line, line_no));
  }
  if (!calib_path.empty()) out.calib = read_calib(calib_path);
  return out;
}

/// Writes poses as KITTI 12-number lines with 17 significant digits, so a
/// read_poses round trip reproduces each pose to within 1e-9.
inline void write_trajectory(std::span<const RigidTransform> poses,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_trajectory: cannot open " + path.string());
  char buf[32];
  for (const auto& T : poses) {
    const double v[12] = {T.R(0, 0), T.R(0, 1), T.R(0, 2), T.t(0),
                          T.R(1, 0), T.R(1, 1), T.R(1, 2), T.t(1),
                          T.R(2, 0), T.R(2, 1), T.R(2, 2), T.t(2)};
    for (int i = 0; i < 12; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
      out << buf << (i == 11 ? "" : " ");
    }
    out << '\n';
  }
  if (!out) throw IoError("write_trajectory: write failed for " + path.string());
}

/// Ground-truth relative pose for the frame pair (t-1, t), expressed in
/// the Velodyne frame: calib^-1 * pose_{t-1}^-1 * pose_t * calib.
inline RigidTransform gt_relative(const PoseFile& gt, std::size_t t) {
  if (t == 0 || t >= gt.poses.size()) {
    throw InvalidArgumentError("gt_relative: frame index out of range");
  }
  const RigidTransform inv_calib = gt.calib.inverse();
  return inv_calib * gt.poses[t - 1].inverse() * gt.poses[t] * gt.calib;
}

/// Ground-truth trajectory transferred into the Velodyne frame of the
/// first pose, matching the solver's world convention (trajectory[0]=I).
inline std::vector<RigidTransform> gt_trajectory_velodyne(const PoseFile& gt) {
  std::vector<RigidTransform> out;
  out.reserve(gt.poses.size());
  if (gt.poses.empty()) return out;
  const RigidTransform inv_calib = gt.calib.inverse();
  const RigidTransform first_inv = gt.poses[0].inverse();
  for (const auto& pose : gt.poses) {
    out.push_back(inv_calib * first_inv * pose * gt.calib);
  }
  return out;
}

}  // namespace wgicp

#endif  // WGICP_IO_KITTI_HPP
