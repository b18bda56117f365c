// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT

#ifndef WGICP_REGISTRATION_TYPES_HPP
#define WGICP_REGISTRATION_TYPES_HPP

#include <vector>

#include "wgicp/errors.hpp"
#include "wgicp/geometry.hpp"

namespace wgicp {

enum class GateMode {
  HardLm,       // discrete accept/reject with multiplicative lambda updates
  SmoothGated,  // sigmoid-gated updates; the differentiable relaxation
};

/// Resolution of the gate's sign: Intent saturates toward 1 on improving
/// steps; PaperLiteral keeps the opposite orientation for A/B comparison.
enum class GateSign { Intent, PaperLiteral };

struct LmParams {
  double lambda0 = 1e-4;
  double lambda_min = 1e-7;
  double lambda_max = 1e2;
  int max_iterations = 64;
  double update_tol = 1e-5;  // twist-norm convergence threshold
  GateMode gate = GateMode::HardLm;
  double gate_scale = 1.0;   // sigmoid scale in mean-objective units
  GateSign gate_sign = GateSign::Intent;

  static LmParams fast_defaults() { return {}; }

  static LmParams differentiable_defaults() {
    LmParams p;
    p.max_iterations = 20;
    p.gate = GateMode::SmoothGated;
    return p;
  }

  void validate() const {
    if (!(0.0 < lambda_min && lambda_min <= lambda0 && lambda0 <= lambda_max)) {
      throw InvalidArgumentError("LmParams: need 0 < lambda_min <= lambda0 <= lambda_max");
    }
    if (max_iterations < 1) throw InvalidArgumentError("LmParams: max_iterations must be >= 1");
    if (!(gate_scale > 0.0)) throw InvalidArgumentError("LmParams: gate_scale must be > 0");
    if (update_tol < 0.0) throw InvalidArgumentError("LmParams: update_tol must be >= 0");
  }
};

struct RegistrationResult {
  RigidTransform transform;
  double final_objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // length iterations + 1
};

/// A weighted-GICP problem: source cloud A aligned onto target cloud B.
/// Both clouds must carry covariances; absent weights mean all-ones.
struct WgicpProblem {
  PointCloud source;
  PointCloud target;
  int k_d = 4;
  double knn_temperature = 1.0;
  LmParams lm;

  void validate() const {
    if (source.empty() || target.empty()) throw EmptyCloudError("WgicpProblem: empty cloud");
    if (source.covariances.size() != source.size() || target.covariances.size() != target.size()) {
      throw InvalidArgumentError("WgicpProblem: both clouds need per-point covariances");
    }
    if (!source.weights.empty() && source.weights.size() != source.size()) {
      throw InvalidArgumentError("WgicpProblem: source weights length mismatch");
    }
    if (!target.weights.empty() && target.weights.size() != target.size()) {
      throw InvalidArgumentError("WgicpProblem: target weights length mismatch");
    }
    if (k_d < 1) throw InvalidArgumentError("WgicpProblem: k_d must be >= 1");
    if (!(knn_temperature > 0.0)) throw InvalidArgumentError("WgicpProblem: temperature must be > 0");
    lm.validate();
  }
};

}  // namespace wgicp

#endif  // WGICP_REGISTRATION_TYPES_HPP
