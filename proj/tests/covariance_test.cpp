#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "support/synthetic.hpp"
#include "wgicp/covariance.hpp"

using namespace wgicp;

TEST_CASE("covariance parameter validation") {
  CovarianceParams p;
  p.k_neighbors = 2;
  CHECK_THROWS_AS(p.validate(), InvalidArgumentError);
  p = {};
  p.plane_epsilon = 1.5;
  CHECK_THROWS_AS(p.validate(), InvalidArgumentError);

  PointCloud tiny;
  tiny.points = {Point3(0, 0, 0), Point3(1, 0, 0)};
  CHECK_THROWS_AS(estimate_covariances(tiny, CovarianceParams{}), TooFewPointsError);
}

TEST_CASE("coplanar points give a plane-regularized normal axis") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  PointCloud cloud;
  for (int i = 0; i < 200; ++i) cloud.points.emplace_back(u(rng), u(rng), 0.0);

  CovarianceParams params;
  params.k_neighbors = 15;
  const auto with_cov = estimate_covariances(cloud, params);
  REQUIRE(with_cov.covariances.size() == cloud.size());

  for (const auto& c : with_cov.covariances) {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(c);
    const Vec3 evals = eig.eigenvalues();
    CHECK(std::abs(evals(0) - params.plane_epsilon) < 1e-9);
    CHECK(std::abs(evals(1) - 1.0) < 1e-9);
    CHECK(std::abs(evals(2) - 1.0) < 1e-9);
    const Vec3 normal = eig.eigenvectors().col(0);
    CHECK(std::abs(std::abs(normal.z()) - 1.0) < 1e-9);
  }
}

TEST_CASE("raw covariance of identical points is zero") {
  PointCloud cloud;
  for (int i = 0; i < 10; ++i) cloud.points.emplace_back(1.0, -2.0, 0.5);
  CovarianceParams params;
  params.k_neighbors = 10;
  params.regularization = CovarianceMode::Raw;
  const auto with_cov = estimate_covariances(cloud, params);
  for (const auto& c : with_cov.covariances) CHECK(c.norm() == 0.0);
}

TEST_CASE("raw covariance of an isotropic gaussian approaches sigma^2 I") {
  // With k = n every neighborhood is the whole sample, so the estimate is
  // the plain sample covariance of n = 10000 draws.
  const int n = 10000;
  const double sigma = 0.7;
  std::mt19937_64 rng(40);
  std::normal_distribution<double> g(0.0, sigma);
  PointCloud cloud;
  for (int i = 0; i < n; ++i) cloud.points.emplace_back(g(rng), g(rng), g(rng));

  CovarianceParams params;
  params.k_neighbors = n;
  params.regularization = CovarianceMode::Raw;
  const auto with_cov = estimate_covariances(cloud, params);
  const Mat3 want = sigma * sigma * Mat3::Identity();
  CHECK((with_cov.covariances[0] - want).norm() / want.norm() < 0.05);
  // All neighborhoods coincide, so all estimates do too.
  CHECK((with_cov.covariances[123] - with_cov.covariances[0]).norm() == 0.0);
}

TEST_CASE("regularized covariances have eigenvalues {1, 1, eps} and are SPD") {
  const auto cloud = testsupport::make_box_scene(300, 77);
  CovarianceParams params;
  const auto with_cov = estimate_covariances(cloud, params);
  for (const auto& c : with_cov.covariances) {
    CHECK((c - c.transpose()).norm() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(c);
    const Vec3 evals = eig.eigenvalues();
    CHECK(std::abs(evals(0) - params.plane_epsilon) < 1e-9);
    CHECK(std::abs(evals(1) - 1.0) < 1e-9);
    CHECK(std::abs(evals(2) - 1.0) < 1e-9);
    CHECK(evals(0) > 0.0);
  }
}

TEST_CASE("covariance estimation is rotation equivariant") {
  const auto cloud = testsupport::make_box_scene(250, 55);
  std::mt19937_64 rng(56);
  RigidTransform rot = testsupport::random_motion(rng, 2.0, 0.0);
  rot.t.setZero();

  CovarianceParams params;
  const auto base = estimate_covariances(cloud, params);
  const auto rotated_cloud = transformed(cloud, rot);
  const auto rotated = estimate_covariances(rotated_cloud, params);

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Mat3 conj = rot.R * base.covariances[i] * rot.R.transpose();
    CHECK((rotated.covariances[i] - conj).norm() < 1e-6);
  }
}
