// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Sequence-level odometry: pairwise frame alignment, trajectory
// accumulation, and the KITTI relative-error metric.

#ifndef WGICP_ODOMETRY_HPP
#define WGICP_ODOMETRY_HPP

#include <chrono>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wgicp/covariance.hpp"
#include "wgicp/io_kitti.hpp"
#include "wgicp/registration.hpp"
#include "wgicp/weights.hpp"

namespace wgicp {

enum class Backend { Icp, Gicp, Wgicp };

enum class InitialGuess { Identity, ConstantVelocity };

struct OdometryConfig {
  double voxel_size = 0.5;
  Backend backend = Backend::Gicp;
  double rejection_ratio = 0.0;
  std::optional<WeightModel> model;  // required for Wgicp with rejection_ratio > 0
  InitialGuess initial_guess = InitialGuess::Identity;
  int k_d = 4;
  double knn_temperature = 1.0;
  LmParams lm = LmParams::fast_defaults();
  CovarianceParams covariance;

  void validate() const {
    if (!(voxel_size > 0.0)) throw InvalidArgumentError("OdometryConfig: voxel_size must be > 0");
    if (!(rejection_ratio >= 0.0 && rejection_ratio < 1.0)) {
      throw InvalidArgumentError("OdometryConfig: rejection_ratio must be in [0, 1)");
    }
    if (backend == Backend::Wgicp && rejection_ratio > 0.0 && !model.has_value()) {
      throw InvalidArgumentError("OdometryConfig: Wgicp with rejection needs a weight model");
    }
    lm.validate();
    covariance.validate();
  }
};

struct FrameTiming {
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
  double alignment_ms = 0.0;
};

struct OdometryRun {
  std::vector<RigidTransform> relative_poses;  // [0] is identity
  std::vector<RigidTransform> trajectory;      // trajectory[0] is identity
  std::vector<FrameTiming> timings;
  std::vector<double> surviving_fraction;      // points kept after rejection
  std::vector<std::size_t> flagged_frames;     // solver failures (identity fallback)
};

struct KittiErrors {
  struct PerLength {
    double length = 0.0;
    double t_rel = 0.0;   // percent
    double r_rel = 0.0;   // degrees per 100 m
    std::size_t windows = 0;
  };
  double t_rel = 0.0;
  double r_rel = 0.0;
  std::vector<PerLength> per_length;
};

/// Pulls the next scan, or nothing at end of sequence.
using ScanSource = std::function<std::optional<VelodyneScan>()>;

namespace detail {

inline double ms_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

struct PreparedFrame {
  PointCloud cloud;          // downsampled (+ covariances for gicp/wgicp)
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
  double surviving = 1.0;
};

inline PreparedFrame prepare_frame(const VelodyneScan& scan, const OdometryConfig& config) {
  PreparedFrame out;
  auto t0 = std::chrono::steady_clock::now();
  out.cloud = voxel_downsample(scan.points, config.voxel_size);
  if (config.backend != Backend::Icp && !out.cloud.empty()) {
    CovarianceParams cov = config.covariance;
    // Small frames shrink the PCA neighborhood instead of failing outright.
    cov.k_neighbors = std::max(3, std::min<int>(cov.k_neighbors, static_cast<int>(out.cloud.size())));
    if (out.cloud.size() >= 3) out.cloud = estimate_covariances(out.cloud, cov);
  }
  out.preprocess_ms = ms_since(t0);

  t0 = std::chrono::steady_clock::now();
  if (config.backend == Backend::Wgicp && config.model.has_value() && !out.cloud.empty()) {
    const auto weights = config.model->predict(out.cloud);
    if (config.rejection_ratio > 0.0) {
      PointCloud kept = hard_reject(out.cloud, weights, config.rejection_ratio);
      // Guard degenerate frames: fall back to no rejection when too few
      // points would survive for covariance-sized neighborhoods.
      if (kept.size() >= static_cast<std::size_t>(config.covariance.k_neighbors)) {
        out.surviving = static_cast<double>(kept.size()) / static_cast<double>(out.cloud.size());
        out.cloud = std::move(kept);
      } else {
        out.cloud.weights = weights;
      }
    } else {
      out.cloud.weights = weights;
    }
  }
  out.inference_ms = ms_since(t0);
  return out;
}

}  // namespace detail

/// Aligns every consecutive scan pair, accumulating T_t = T_{t-1} * Trel_t.
/// Solver failures on a frame fall back to an identity relative pose and
/// flag the frame; the run always completes.
inline OdometryRun run_sequence(ScanSource next_scan, const OdometryConfig& config) {
  config.validate();
  OdometryRun run;

  auto scan = next_scan();
  if (!scan.has_value()) throw EmptyCloudError("run_sequence: no scans");
  detail::PreparedFrame prev = detail::prepare_frame(*scan, config);
  run.relative_poses.push_back(RigidTransform::identity());
  run.trajectory.push_back(RigidTransform::identity());
  run.timings.push_back({prev.preprocess_ms, prev.inference_ms, 0.0});
  run.surviving_fraction.push_back(prev.surviving);

  RigidTransform last_relative = RigidTransform::identity();
  std::size_t frame = 0;
  while (auto next = next_scan()) {
    ++frame;
    detail::PreparedFrame cur = detail::prepare_frame(*next, config);
    FrameTiming timing{cur.preprocess_ms, cur.inference_ms, 0.0};

    const RigidTransform init = config.initial_guess == InitialGuess::ConstantVelocity
                                    ? last_relative
                                    : RigidTransform::identity();
    RigidTransform relative = RigidTransform::identity();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      switch (config.backend) {
        case Backend::Icp:
          relative = align_icp(cur.cloud, prev.cloud, config.lm, init).transform;
          break;
        case Backend::Gicp:
          relative = align_gicp(cur.cloud, prev.cloud, config.lm, init).transform;
          break;
        case Backend::Wgicp: {
          WgicpProblem problem;
          problem.source = cur.cloud;
          problem.target = prev.cloud;
          problem.k_d = config.k_d;
          problem.knn_temperature = config.knn_temperature;
          problem.lm = config.lm;
          relative = align_wgicp(problem, init).transform;
          break;
        }
      }
    } catch (const Error&) {
      relative = RigidTransform::identity();
      run.flagged_frames.push_back(frame);
    }
    timing.alignment_ms = detail::ms_since(t0);

    run.relative_poses.push_back(relative);
    run.trajectory.push_back(run.trajectory.back() * relative);
    run.timings.push_back(timing);
    run.surviving_fraction.push_back(cur.surviving);
    last_relative = relative;
    prev = std::move(cur);
  }
  if (run.trajectory.size() < 2) throw SequenceTooShortError("run_sequence: need at least 2 scans");
  return run;
}

/// KITTI relative errors: for every start frame (stride 1) and every
/// segment length L in {100,...,800} m of ground-truth path length, the
/// relative-pose error E = (gt_a^-1 gt_b)^-1 (est_a^-1 est_b) contributes
/// ||trans(E)||/L to the translational and angle(E)/L to the rotational
/// statistic; results are averaged over all windows.
inline KittiErrors kitti_errors(std::span<const RigidTransform> trajectory,
                                std::span<const RigidTransform> gt) {
  if (trajectory.size() != gt.size()) {
    throw InvalidArgumentError("kitti_errors: trajectory/gt length mismatch");
  }
  const std::size_t n = gt.size();
  std::vector<double> dist(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    dist[i] = dist[i - 1] + (gt[i].t - gt[i - 1].t).norm();
  }

  constexpr std::array<double, 8> kLengths = {100, 200, 300, 400, 500, 600, 700, 800};
  std::array<double, 8> t_sum{}, r_sum{};
  std::array<std::size_t, 8> count{};

  for (std::size_t first = 0; first + 1 < n; ++first) {
    for (std::size_t li = 0; li < kLengths.size(); ++li) {
      const double want = dist[first] + kLengths[li] - 1e-9;
      const auto it = std::lower_bound(dist.begin() + static_cast<std::ptrdiff_t>(first), dist.end(), want);
      if (it == dist.end()) break;  // longer windows cannot fit either
      const auto last = static_cast<std::size_t>(it - dist.begin());
      const RigidTransform delta_gt = gt[first].inverse() * gt[last];
      const RigidTransform delta_est = trajectory[first].inverse() * trajectory[last];
      const RigidTransform err = delta_gt.inverse() * delta_est;
      const double angle =
          std::acos(std::clamp((err.R.trace() - 1.0) * 0.5, -1.0, 1.0));
      t_sum[li] += err.t.norm() / kLengths[li];
      r_sum[li] += angle / kLengths[li];
      ++count[li];
    }
  }

  KittiErrors out;
  double t_total = 0.0, r_total = 0.0;
  std::size_t total = 0;
  for (std::size_t li = 0; li < kLengths.size(); ++li) {
    if (count[li] == 0) continue;
    KittiErrors::PerLength pl;
    pl.length = kLengths[li];
    pl.t_rel = 100.0 * t_sum[li] / static_cast<double>(count[li]);
    pl.r_rel = (180.0 / M_PI) * 100.0 * r_sum[li] / static_cast<double>(count[li]);
    pl.windows = count[li];
    out.per_length.push_back(pl);
    t_total += t_sum[li];
    r_total += r_sum[li];
    total += count[li];
  }
  if (total == 0) throw SequenceTooShortError("kitti_errors: no 100 m window in ground truth");
  out.t_rel = 100.0 * t_total / static_cast<double>(total);
  out.r_rel = (180.0 / M_PI) * 100.0 * r_total / static_cast<double>(total);
  return out;
}

/// Machine-readable report: one `metric<TAB>value` line each. Timing keys
/// are prefixed "time_" so deterministic comparisons can filter them.
inline std::string format_report(const OdometryRun& run, const KittiErrors* errors) {
  std::ostringstream out;
  out.precision(12);
  const std::size_t frames = run.trajectory.size();
  out << "frames\t" << frames << '\n';
  out << "flagged_frames\t" << run.flagged_frames.size() << '\n';
  if (!run.flagged_frames.empty()) {
    out << "flagged_frame_indices\t";
    for (std::size_t i = 0; i < run.flagged_frames.size(); ++i) {
      out << run.flagged_frames[i] << (i + 1 < run.flagged_frames.size() ? "," : "");
    }
    out << '\n';
  }
  double surv = 0.0;
  for (double s : run.surviving_fraction) surv += s;
  out << "surviving_pct_mean\t" << 100.0 * surv / static_cast<double>(run.surviving_fraction.size())
      << '\n';
  if (errors != nullptr) {
    out << "t_rel\t" << errors->t_rel << '\n';
    out << "r_rel\t" << errors->r_rel << '\n';
    for (const auto& pl : errors->per_length) {
      out << "t_rel_" << static_cast<int>(pl.length) << '\t' << pl.t_rel << '\n';
      out << "r_rel_" << static_cast<int>(pl.length) << '\t' << pl.r_rel << '\n';
    }
  }
  double pre = 0.0, inf = 0.0, ali = 0.0;
  for (const auto& t : run.timings) {
    pre += t.preprocess_ms;
    inf += t.inference_ms;
    ali += t.alignment_ms;
  }
  const auto denom = static_cast<double>(frames);
  out << "time_preprocess_ms_mean\t" << pre / denom << '\n';
  out << "time_inference_ms_mean\t" << inf / denom << '\n';
  out << "time_alignment_ms_mean\t" << ali / denom << '\n';
  return out.str();
}

}  // namespace wgicp

#endif  // WGICP_ODOMETRY_HPP
