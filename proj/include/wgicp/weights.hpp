// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Per-point weight prediction (a compact point-feature network), the
// soft/hard outlier rejection pair, and the Frobenius pose loss.

#ifndef WGICP_WEIGHTS_HPP
#define WGICP_WEIGHTS_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "wgicp/detail/exec.hpp"
#include "wgicp/errors.hpp"
#include "wgicp/geometry.hpp"

namespace wgicp {

/// Per-point scoring network: a shared two-layer encoder (3 -> 32 -> 64,
/// ReLU), a coordinate-wise max pool over the encoded cloud as global
/// context, and a two-layer head on [point(64); global(64)] ending in a
/// sigmoid, so every weight lies in (0, 1). Permutation-equivariant by
/// construction.
struct WeightModel {
  static constexpr int kIn = 3;
  static constexpr int kEnc1 = 32;
  static constexpr int kEnc2 = 64;
  static constexpr int kHeadIn = 2 * kEnc2;
  static constexpr int kHeadHidden = 64;

  // Flat layout: w1[32x3] b1[32] w2[64x32] b2[64] w3[64x128] b3[64] w4[1x64] b4[1]
  std::vector<double> params;
  std::uint64_t seed = 0;

  static constexpr std::size_t kW1 = 0;
  static constexpr std::size_t kB1 = kW1 + kEnc1 * kIn;
  static constexpr std::size_t kW2 = kB1 + kEnc1;
  static constexpr std::size_t kB2 = kW2 + kEnc2 * kEnc1;
  static constexpr std::size_t kW3 = kB2 + kEnc2;
  static constexpr std::size_t kB3 = kW3 + kHeadHidden * kHeadIn;
  static constexpr std::size_t kW4 = kB3 + kHeadHidden;
  static constexpr std::size_t kB4 = kW4 + kHeadHidden;
  static constexpr std::size_t kParamCount = kB4 + 1;

  static WeightModel init(std::uint64_t seed) {
    WeightModel m;
    m.seed = seed;
    m.params.assign(kParamCount, 0.0);
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t begin, std::size_t count, int fan_in, int fan_out) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::size_t i = 0; i < count; ++i) m.params[begin + i] = dist(rng);
    };
    fill(kW1, kEnc1 * kIn, kIn, kEnc1);
    fill(kW2, kEnc2 * kEnc1, kEnc1, kEnc2);
    fill(kW3, kHeadHidden * kHeadIn, kHeadIn, kHeadHidden);
    fill(kW4, kHeadHidden, kHeadHidden, 1);
    return m;
  }

  std::vector<double> predict(const PointCloud& cloud) const;

  void save(const std::filesystem::path& path) const;
  static WeightModel load(const std::filesystem::path& path);
};

namespace detail {

/// Network forward pass over an execution policy; `params` must follow
/// the WeightModel flat layout. One output weight per point.
template <class E>
std::vector<typename E::S> predict_weights_on(E& ex, std::span<const typename E::S> params,
                                              const PointCloud& cloud) {
  using S = typename E::S;
  if (cloud.empty()) throw EmptyCloudError("predict_weights: empty cloud");
  const std::size_t n = cloud.size();

  const auto w1 = params.subspan(WeightModel::kW1, WeightModel::kEnc1 * WeightModel::kIn);
  const auto b1 = params.subspan(WeightModel::kB1, WeightModel::kEnc1);
  const auto w2 = params.subspan(WeightModel::kW2, WeightModel::kEnc2 * WeightModel::kEnc1);
  const auto b2 = params.subspan(WeightModel::kB2, WeightModel::kEnc2);
  const auto w3 = params.subspan(WeightModel::kW3, WeightModel::kHeadHidden * WeightModel::kHeadIn);
  const auto b3 = params.subspan(WeightModel::kB3, WeightModel::kHeadHidden);
  const auto w4 = params.subspan(WeightModel::kW4, WeightModel::kHeadHidden);
  const auto b4 = params.subspan(WeightModel::kB4, 1);

  std::vector<std::vector<S>> encoded(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<S, 3> x{ex.c(cloud.points[i].x()), ex.c(cloud.points[i].y()),
                       ex.c(cloud.points[i].z())};
    std::vector<S> h1(WeightModel::kEnc1);
    for (int k = 0; k < WeightModel::kEnc1; ++k) {
      h1[static_cast<std::size_t>(k)] = ex.relu(ex.linear(
          w1.subspan(static_cast<std::size_t>(k) * WeightModel::kIn, WeightModel::kIn),
          std::span<const S>(x), b1[static_cast<std::size_t>(k)]));
    }
    auto& h2 = encoded[i];
    h2.resize(WeightModel::kEnc2);
    for (int k = 0; k < WeightModel::kEnc2; ++k) {
      h2[static_cast<std::size_t>(k)] = ex.relu(ex.linear(
          w2.subspan(static_cast<std::size_t>(k) * WeightModel::kEnc1, WeightModel::kEnc1),
          std::span<const S>(h1), b2[static_cast<std::size_t>(k)]));
    }
  }

  // Global feature: coordinate-wise max over all encoded points.
  std::vector<S> global = encoded[0];
  for (std::size_t i = 1; i < n; ++i) {
    for (int k = 0; k < WeightModel::kEnc2; ++k) {
      global[static_cast<std::size_t>(k)] =
          ex.max(global[static_cast<std::size_t>(k)], encoded[i][static_cast<std::size_t>(k)]);
    }
  }

  std::vector<S> out(n);
  std::vector<S> cat(WeightModel::kHeadIn);
  std::vector<S> h3(WeightModel::kHeadHidden);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < WeightModel::kEnc2; ++k) cat[static_cast<std::size_t>(k)] = encoded[i][static_cast<std::size_t>(k)];
    for (int k = 0; k < WeightModel::kEnc2; ++k) {
      cat[static_cast<std::size_t>(WeightModel::kEnc2 + k)] = global[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < WeightModel::kHeadHidden; ++k) {
      h3[static_cast<std::size_t>(k)] = ex.relu(ex.linear(
          w3.subspan(static_cast<std::size_t>(k) * WeightModel::kHeadIn, WeightModel::kHeadIn),
          std::span<const S>(cat), b3[static_cast<std::size_t>(k)]));
    }
    out[i] = ex.sigmoid(ex.linear(w4, std::span<const S>(h3), b4[0]));
  }
  return out;
}

/// Eq.-8 style soft rejection: per-cloud standardization then sigmoid,
/// with the standard deviation floored at 1e-6.
template <class E>
std::vector<typename E::S> soft_reject_on(E& ex, std::span<const typename E::S> weights) {
  using S = typename E::S;
  const std::size_t n = weights.size();
  const S inv_n = ex.c(1.0 / static_cast<double>(n));
  S sum = ex.c(0.0);
  for (const S& w : weights) sum = ex.add(sum, w);
  const S mean = ex.mul(sum, inv_n);
  S var = ex.c(0.0);
  for (const S& w : weights) {
    const S d = ex.sub(w, mean);
    var = ex.add(var, ex.mul(d, d));
  }
  var = ex.mul(var, inv_n);
  const S sigma = ex.max(ex.sqrt(var), ex.c(1e-6));
  std::vector<S> out;
  out.reserve(n);
  for (const S& w : weights) {
    out.push_back(ex.sigmoid(ex.div(ex.sub(w, mean), sigma)));
  }
  return out;
}

}  // namespace detail

inline std::vector<double> WeightModel::predict(const PointCloud& cloud) const {
  detail::PlainExec ex;
  return detail::predict_weights_on(ex, std::span<const double>(params), cloud);
}

inline std::vector<double> soft_reject(std::span<const double> weights) {
  if (weights.empty()) throw InvalidArgumentError("soft_reject: need at least one weight");
  detail::PlainExec ex;
  return detail::soft_reject_on(ex, weights);
}

/// Keeps the ceil((1-r)*n) highest-weight points; ties prefer the lower
/// index and survivor order is preserved. The returned cloud carries the
/// surviving weights.
inline PointCloud hard_reject(const PointCloud& cloud, std::span<const double> weights,
                              double rejection_ratio) {
  if (!(rejection_ratio >= 0.0 && rejection_ratio < 1.0)) {
    throw InvalidArgumentError("hard_reject: rejection_ratio must be in [0, 1)");
  }
  if (weights.size() != cloud.size()) {
    throw InvalidArgumentError("hard_reject: weights length mismatch");
  }
  const std::size_t n = cloud.size();
  const auto keep = static_cast<std::size_t>(
      std::ceil((1.0 - rejection_ratio) * static_cast<double>(n)));
  if (keep >= n) {
    PointCloud out = cloud;
    out.weights.assign(weights.begin(), weights.end());
    return out;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return weights[a] > weights[b] || (weights[a] == weights[b] && a < b);
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  PointCloud out;
  out.points.reserve(keep);
  out.weights.reserve(keep);
  const bool covs = cloud.has_covariances();
  if (covs) out.covariances.reserve(keep);
  for (std::size_t idx : order) {
    out.points.push_back(cloud.points[idx]);
    out.weights.push_back(weights[idx]);
    if (covs) out.covariances.push_back(cloud.covariances[idx]);
  }
  return out;
}

/// Frobenius norm of the difference between the 4x4 homogeneous matrices.
inline double pose_loss(const RigidTransform& est, const RigidTransform& gt) {
  return std::sqrt((est.R - gt.R).squaredNorm() + (est.t - gt.t).squaredNorm());
}

// ---- checkpoint io -----------------------------------------------------------
//
// Binary format, little-endian:
//   magic "WGMD", u32 version, u32 layer-shape count, (u32 rows, u32 cols)
//   per shape, u64 seed, then all parameters as f64 in flat layout order.

namespace detail {

inline const std::array<std::pair<std::uint32_t, std::uint32_t>, 8>& model_shapes() {
  static const std::array<std::pair<std::uint32_t, std::uint32_t>, 8> shapes = {{
      {WeightModel::kEnc1, WeightModel::kIn},
      {WeightModel::kEnc1, 1},
      {WeightModel::kEnc2, WeightModel::kEnc1},
      {WeightModel::kEnc2, 1},
      {WeightModel::kHeadHidden, WeightModel::kHeadIn},
      {WeightModel::kHeadHidden, 1},
      {1, WeightModel::kHeadHidden},
      {1, 1},
  }};
  return shapes;
}

template <typename T>
void write_le(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

}  // namespace detail

inline void WeightModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("WeightModel::save: cannot open " + path.string());
  out.write("WGMD", 4);
  detail::write_le<std::uint32_t>(out, 1);
  const auto& shapes = detail::model_shapes();
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(shapes.size()));
  for (const auto& [r, c] : shapes) {
    detail::write_le<std::uint32_t>(out, r);
    detail::write_le<std::uint32_t>(out, c);
  }
  detail::write_le<std::uint64_t>(out, seed);
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw IoError("WeightModel::save: write failed for " + path.string());
}

inline WeightModel WeightModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("WeightModel::load: cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "WGMD", 4) != 0) {
    throw IoError("WeightModel::load: bad magic in " + path.string());
  }
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != 1) throw IoError("WeightModel::load: unsupported version");
  const auto n_shapes = detail::read_le<std::uint32_t>(in);
  const auto& shapes = detail::model_shapes();
  if (n_shapes != shapes.size()) throw IoError("WeightModel::load: layer count mismatch");
  for (const auto& [r, c] : shapes) {
    const auto rr = detail::read_le<std::uint32_t>(in);
    const auto cc = detail::read_le<std::uint32_t>(in);
    if (rr != r || cc != c) throw IoError("WeightModel::load: layer shape mismatch");
  }
  WeightModel m;
  m.seed = detail::read_le<std::uint64_t>(in);
  m.params.resize(kParamCount);
  in.read(reinterpret_cast<char*>(m.params.data()),
          static_cast<std::streamsize>(m.params.size() * sizeof(double)));
  if (!in) throw IoError("WeightModel::load: truncated parameter block");
  return m;
}

}  // namespace wgicp

#endif  // WGICP_WEIGHTS_HPP
