#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <random>

#include "support/synthetic.hpp"
#include "wgicp/io_kitti.hpp"

using namespace wgicp;
namespace fs = std::filesystem;

namespace {
fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "wgicp_io_test";
  fs::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_CASE("velodyne bin round trip") {
  const auto path = temp_file("scan.bin");

  SECTION("empty file gives empty scan") {
    std::ofstream(path, std::ios::binary).close();
    const auto scan = read_velodyne_bin(path);
    CHECK(scan.points.empty());
    CHECK(scan.reflectances.empty());
  }

  SECTION("one known record") {
    VelodyneScan scan;
    scan.points.points.emplace_back(1.0, 2.0, 3.0);
    scan.reflectances.push_back(0.5);
    write_velodyne_bin(scan, path);
    const auto back = read_velodyne_bin(path);
    REQUIRE(back.points.size() == 1);
    CHECK((back.points.points[0] - Point3(1, 2, 3)).norm() == 0.0);
    CHECK(back.reflectances[0] == 0.5);
  }

  SECTION("17-byte file is truncated") {
    std::ofstream out(path, std::ios::binary);
    const char bytes[17] = {};
    out.write(bytes, 17);
    out.close();
    CHECK_THROWS_AS(read_velodyne_bin(path), TruncatedFileError);
  }

  SECTION("missing file is an io error") {
    CHECK_THROWS_AS(read_velodyne_bin(temp_file("nope.bin")), IoError);
  }
}

TEST_CASE("pose file parsing") {
  const auto path = temp_file("poses.txt");

  SECTION("identity line") {
    std::ofstream(path) << "1 0 0 0 0 1 0 0 0 0 1 0\n";
    const auto file = read_poses(path);
    REQUIRE(file.poses.size() == 1);
    CHECK((file.poses[0].matrix() - Eigen::Matrix4d::Identity()).norm() < 1e-15);
    CHECK((file.calib.matrix() - Eigen::Matrix4d::Identity()).norm() == 0.0);
  }

  SECTION("eleven numbers is malformed") {
    std::ofstream(path) << "1 0 0 0 0 1 0 0 0 0 1\n";
    CHECK_THROWS_AS(read_poses(path), MalformedLineError);
  }

  SECTION("non-rotation block is rejected") {
    std::ofstream(path) << "2 0 0 0 0 2 0 0 0 0 2 0\n";
    CHECK_THROWS_AS(read_poses(path), NonRotationError);
  }

  SECTION("write then read reproduces poses within 1e-9") {
    std::mt19937_64 rng(5);
    std::vector<RigidTransform> poses;
    for (int i = 0; i < 100; ++i) poses.push_back(testsupport::random_motion(rng, 3.0, 50.0));
    write_trajectory(poses, path);
    const auto back = read_poses(path);
    REQUIRE(back.poses.size() == poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) {
      CHECK((back.poses[i].matrix() - poses[i].matrix()).norm() < 1e-9);
    }
  }
}

TEST_CASE("calibration and ground-truth transfer") {
  const auto calib_path = temp_file("calib.txt");
  std::ofstream(calib_path) << "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
                            << "Tr: 0 -1 0 0.1 0 0 -1 0.2 1 0 0 0.3\n";
  const auto calib = read_calib(calib_path);
  CHECK(calib.is_valid(1e-12));
  CHECK((calib.t - Vec3(0.1, 0.2, 0.3)).norm() == 0.0);

  const auto poses_path = temp_file("gt.txt");
  std::mt19937_64 rng(11);
  std::vector<RigidTransform> poses{RigidTransform::identity()};
  for (int i = 0; i < 5; ++i) poses.push_back(poses.back() * testsupport::random_motion(rng, 0.3, 2.0));
  write_trajectory(poses, poses_path);
  const auto file = read_poses(poses_path, calib_path);

  // Accumulating the per-frame relatives in the Velodyne frame must
  // reproduce the transferred trajectory.
  const auto velo = gt_trajectory_velodyne(file);
  RigidTransform acc = RigidTransform::identity();
  CHECK((velo[0].matrix() - acc.matrix()).norm() < 1e-12);
  for (std::size_t t = 1; t < file.poses.size(); ++t) {
    acc = acc * gt_relative(file, t);
    CHECK((velo[t].matrix() - acc.matrix()).norm() < 1e-9);
  }
}
