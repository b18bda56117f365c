#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <random>

#include "support/synthetic.hpp"
#include "wgicp/knn.hpp"

using namespace wgicp;

namespace {

// Brute-force oracle with the same (distance, index) ordering contract.
std::vector<KdTree::Neighbor> brute_force(const std::vector<Point3>& pts, const Point3& q, int k) {
  std::vector<std::pair<double, int>> all;
  all.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    all.emplace_back((pts[i] - q).squaredNorm(), static_cast<int>(i));
  }
  std::sort(all.begin(), all.end());
  all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(k)));
  std::vector<KdTree::Neighbor> out;
  for (const auto& [d2, idx] : all) out.push_back({idx, std::sqrt(d2)});
  return out;
}

std::vector<Point3> random_points(int n, std::uint64_t seed, double extent = 5.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Point3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  return pts;
}

}  // namespace

TEST_CASE("kdtree basics") {
  CHECK_THROWS_AS(KdTree(PointCloud{}), EmptyCloudError);

  const std::vector<Point3> one{Point3(1, 2, 3)};
  KdTree tree(one);
  const auto nb = tree.query(Point3(50, 0, 0), 4);
  REQUIRE(nb.size() == 1);
  CHECK(nb[0].index == 0);

  // Index snapshots the cloud: mutating the original afterwards is inert.
  PointCloud cloud;
  cloud.points = {Point3(0, 0, 0), Point3(1, 0, 0)};
  KdTree snap(cloud);
  cloud.points[0] = Point3(100, 0, 0);
  CHECK(snap.nearest(Point3(0.1, 0, 0)) == 0);
}

TEST_CASE("kdtree matches brute force on random clouds") {
  const auto pts = random_points(1000, 99);
  KdTree tree(pts);
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int t = 0; t < 100; ++t) {
    const Point3 q(u(rng), u(rng), u(rng));
    const auto got = tree.query(q, 5);
    const auto want = brute_force(pts, q, 5);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(got[i].index == want[i].index);
      CHECK(got[i].distance == want[i].distance);
    }
  }
}

TEST_CASE("kdtree tie-breaking prefers lower indices and returns duplicates first") {
  // Duplicates at the origin plus farther points; all duplicates must
  // appear before anything else, ordered by index.
  std::vector<Point3> pts;
  for (int i = 0; i < 4; ++i) pts.emplace_back(0.0, 0.0, 0.0);
  for (int i = 0; i < 6; ++i) pts.emplace_back(1.0 + i, 0.0, 0.0);
  KdTree tree(pts);
  const auto got = tree.query(Point3(0.2, 0, 0), 6);
  const auto want = brute_force(pts, Point3(0.2, 0, 0), 6);
  REQUIRE(got.size() == 6);
  for (std::size_t i = 0; i < 4; ++i) CHECK(got[i].index == static_cast<int>(i));
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].index == want[i].index);

  // 10k-point oracle comparison including duplicated coordinates.
  auto big = random_points(5000, 7, 2.0);
  big.insert(big.end(), big.begin(), big.begin() + 5000);  // every point twice
  KdTree big_tree(big);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int t = 0; t < 25; ++t) {
    const Point3 q(u(rng), u(rng), u(rng));
    const auto g = big_tree.query(q, 8);
    const auto w = brute_force(big, q, 8);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(g[i].index == w[i].index);
  }
}

TEST_CASE("soft knn weights") {
  SECTION("single neighbor has weight exactly 1") {
    KdTree tree(std::vector<Point3>{Point3(2, 0, 0)});
    const auto soft = soft_knn(tree, Point3(0, 0, 0), 1);
    REQUIRE(soft.weights.size() == 1);
    CHECK(soft.weights[0] == 1.0);
  }

  SECTION("equidistant pair splits evenly") {
    KdTree tree(std::vector<Point3>{Point3(1, 0, 0), Point3(-1, 0, 0)});
    const auto soft = soft_knn(tree, Point3(0, 0, 0), 2);
    CHECK(soft.weights[0] == 0.5);
    CHECK(soft.weights[1] == 0.5);
  }

  SECTION("distances 0 and 1 follow the softmax of -d") {
    KdTree tree(std::vector<Point3>{Point3(0, 0, 0), Point3(1, 0, 0)});
    const auto soft = soft_knn(tree, Point3(0, 0, 0), 2);
    const double e0 = 1.0, e1 = std::exp(-1.0);
    CHECK(std::abs(soft.weights[0] - e0 / (e0 + e1)) < 1e-15);
    CHECK(std::abs(soft.weights[1] - e1 / (e0 + e1)) < 1e-15);
    CHECK(std::abs(soft.weights[0] - 0.7311) < 1e-4);
    CHECK(std::abs(soft.weights[1] - 0.2689) < 1e-4);
    CHECK(soft.weights[0] > soft.weights[1]);  // nearest carries the most
  }

  SECTION("weights sum to 1 within 1e-12 and lie in (0,1]") {
    const auto pts = random_points(300, 5);
    KdTree tree(pts);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int t = 0; t < 200; ++t) {
      const Point3 q(u(rng), u(rng), u(rng));
      const auto soft = soft_knn(tree, q, 6);
      double sum = 0.0;
      for (double w : soft.weights) {
        CHECK(w > 0.0);
        CHECK(w <= 1.0);
        sum += w;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }

  SECTION("unscaled weights are invariant to a constant distance shift") {
    // exp(-(d+c)) renormalizes away; verified against directly computed
    // softmax values on shifted distances.
    const std::vector<double> d{0.3, 0.8, 1.1, 2.0};
    auto softmax_of = [](const std::vector<double>& dist) {
      double total = 0.0;
      std::vector<double> w;
      for (double x : dist) {
        w.push_back(std::exp(-x));
        total += w.back();
      }
      for (double& x : w) x /= total;
      return w;
    };
    const auto base = softmax_of(d);
    std::vector<double> shifted = d;
    for (double& x : shifted) x += 5.0;
    const auto moved = softmax_of(shifted);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(std::abs(base[i] - moved[i]) < 1e-12);
  }
}

TEST_CASE("weighted soft knn") {
  SECTION("all target weights 1 matches the unweighted form") {
    const auto pts = random_points(100, 8);
    KdTree tree(pts);
    const std::vector<double> ones(pts.size(), 1.0);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int t = 0; t < 50; ++t) {
      const Point3 q(u(rng), u(rng), u(rng));
      const auto a = soft_knn(tree, q, 4);
      const auto b = soft_knn_weighted(tree, q, 4, ones);
      for (std::size_t i = 0; i < a.weights.size(); ++i) CHECK(a.weights[i] == b.weights[i]);
    }
  }

  SECTION("down-weighted equidistant neighbor nearly vanishes") {
    // Two targets 1 m away; the second has weight floored at 1e-3, so its
    // scaled distance is 1000 m and its share drops below 1e-2.
    KdTree tree(std::vector<Point3>{Point3(1, 0, 0), Point3(-1, 0, 0)});
    const std::vector<double> weights{1.0, kWeightFloor};
    const auto soft = soft_knn_weighted(tree, Point3(0, 0, 0), 2, weights);
    CHECK(soft.weights[0] > 0.99);
    CHECK(soft.weights[1] < 0.01);
    double sum = soft.weights[0] + soft.weights[1];
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }

  SECTION("k_d = 1 is weight 1 regardless of target weight") {
    KdTree tree(std::vector<Point3>{Point3(3, 0, 0)});
    const std::vector<double> weights{0.0};
    const auto soft = soft_knn_weighted(tree, Point3(0, 0, 0), 1, weights);
    CHECK(soft.weights[0] == 1.0);
  }

  SECTION("decreasing a target weight strictly decreases its share") {
    const auto pts = random_points(50, 12);
    KdTree tree(pts);
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    std::uniform_real_distribution<double> uw(0.05, 1.0);
    for (int t = 0; t < 50; ++t) {
      const Point3 q(u(rng), u(rng), u(rng));
      std::vector<double> weights(pts.size());
      for (auto& w : weights) w = uw(rng);
      const auto before = soft_knn_weighted(tree, q, 3, weights);
      const int victim = before.indices[1];
      std::vector<double> lowered = weights;
      lowered[static_cast<std::size_t>(victim)] *= 0.5;
      const auto after = soft_knn_weighted(tree, q, 3, lowered);
      CHECK(after.weights[1] < before.weights[1]);
    }
  }
}
