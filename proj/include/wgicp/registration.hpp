// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Solvers: point-to-point ICP, classic GICP, and weighted GICP in a fast
// hard-LM form and a tape-recorded differentiable form, plus the scalar
// objectives and LM building blocks they are made of.

#ifndef WGICP_REGISTRATION_HPP
#define WGICP_REGISTRATION_HPP

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "wgicp/autodiff.hpp"
#include "wgicp/detail/unrolled.hpp"
#include "wgicp/detail/wgicp_kernel.hpp"
#include "wgicp/knn.hpp"
#include "wgicp/registration_types.hpp"

namespace wgicp {

inline constexpr double kDivergenceThreshold = 1e12;

/// Sigmoid relaxation of the LM accept decision: 0.5 when the lookahead
/// matches the current objective, toward 1 for improving steps.
inline double smooth_gate(double current, double lookahead, double scale = 1.0) {
  const double x = (current - lookahead) / scale;
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Damping schedule paired with smooth_gate: lambda shrinks to lambda_min
/// when the gate saturates at 1 and grows to lambda_max when it closes.
inline double gated_lambda(double gate, const LmParams& lm) {
  return lm.lambda_min + (lm.lambda_max - lm.lambda_min) * (1.0 - gate);
}

/// GICP objective (Eq.-2 style): sum_i d_i^T (Cb_j + R Ca_i R^T)^-1 d_i
/// with single-nearest correspondences fixed at entry. Kept independent of
/// the soft-KNN kernel so the two routes can be checked against each other.
inline double gicp_objective(const WgicpProblem& problem, const RigidTransform& T) {
  problem.validate();
  const KdTree tree(problem.target);
  double obj = 0.0;
  for (std::size_t i = 0; i < problem.source.size(); ++i) {
    const Point3 p = T.apply(problem.source.points[i]);
    const auto j = static_cast<std::size_t>(tree.nearest(p));
    const Vec3 d = problem.target.points[j] - p;
    const Mat3 M = problem.target.covariances[j] + T.R * problem.source.covariances[i] * T.R.transpose();
    const Mat3 Minv = M.inverse();
    if (!(M.norm() * Minv.norm() < 1e12)) {
      throw SingularMatrixError("gicp_objective: correspondence matrix near-singular");
    }
    obj += d.dot(Minv * d);
  }
  return obj;
}

/// Weighted objective (Eq.-6 style) over soft k_d-neighborhoods found at T.
inline double wgicp_objective(const WgicpProblem& problem, const RigidTransform& T) {
  problem.validate();
  detail::PlainExec ex;
  const detail::ProblemConsts<detail::PlainExec> pc(ex, problem.source, problem.target,
                                                    problem.k_d, problem.knn_temperature);
  const KdTree tree(problem.target);
  const auto pass = detail::wgicp_pass(ex, pc, tree, std::span<const double>(problem.source.weights),
                                       std::span<const double>(problem.target.weights),
                                       detail::m3_const(ex, T.R), detail::v3_const(ex, T.t), false);
  return pass.objective;
}

/// Tape-recorded weighted objective with per-point weights as leaf
/// variables, so adjoints of the returned scalar give d(obj)/d(w).
struct RecordedObjective {
  Var value;
  std::vector<Var> source_weights;
  std::vector<Var> target_weights;
};

inline RecordedObjective wgicp_objective_recorded(Tape& tape, const WgicpProblem& problem,
                                                  const RigidTransform& T) {
  problem.validate();
  detail::TapeExec ex{&tape};
  RecordedObjective out;
  out.source_weights.reserve(problem.source.size());
  for (std::size_t i = 0; i < problem.source.size(); ++i) {
    out.source_weights.push_back(tape.input(problem.source.weight(i)));
  }
  out.target_weights.reserve(problem.target.size());
  for (std::size_t i = 0; i < problem.target.size(); ++i) {
    out.target_weights.push_back(tape.input(problem.target.weight(i)));
  }
  const detail::ProblemConsts<detail::TapeExec> pc(ex, problem.source, problem.target,
                                                   problem.k_d, problem.knn_temperature);
  const KdTree tree(problem.target);
  const auto pass = detail::wgicp_pass(ex, pc, tree, std::span<const Var>(out.source_weights),
                                       std::span<const Var>(out.target_weights),
                                       detail::m3_const(ex, T.R), detail::v3_const(ex, T.t), false);
  out.value = pass.objective;
  return out;
}

namespace detail {

struct NormalEqs {
  std::array<double, 36> H{};
  std::array<double, 6> g{};
  double objective = 0.0;
};

inline Twist solve_step(const NormalEqs& neq, double lambda) {
  PlainExec ex;
  std::array<double, 6> gg = neq.g;
  const auto delta = solve_damped6(ex, neq.H, gg, lambda);
  Twist step;
  step.trans = Vec3(delta[0], delta[1], delta[2]);
  step.rot = Vec3(delta[3], delta[4], delta[5]);
  return step;
}

/// Hard accept/reject LM loop shared by the fast solvers. objective_at
/// re-matches correspondences at the evaluated pose; the trace therefore
/// records the true objective of every visited iterate and is
/// nonincreasing by construction.
template <class NeqFn, class ObjFn>
RegistrationResult hard_lm_drive(NeqFn&& normal_eqs_at, ObjFn&& objective_at,
                                 const LmParams& lm, const RigidTransform& init) {
  RegistrationResult res;
  res.transform = init;
  double lambda = lm.lambda0;
  for (int iter = 0; iter < lm.max_iterations; ++iter) {
    const NormalEqs neq = normal_eqs_at(res.transform);
    if (iter == 0) res.objective_trace.push_back(neq.objective);
    if (!(neq.objective < kDivergenceThreshold)) {
      throw DivergedError("registration: objective exceeded divergence threshold");
    }
    res.iterations = iter + 1;

    bool accepted = false;
    double step_norm = 0.0;
    try {
      const Twist delta = solve_step(neq, lambda);
      const RigidTransform candidate = compose(exp_map(delta), res.transform);
      const double lookahead = objective_at(candidate);
      if (lookahead < neq.objective) {
        res.transform = candidate;
        res.objective_trace.push_back(lookahead);
        step_norm = delta.norm();
        accepted = true;
      }
    } catch (const SingularNormalEquationsError&) {
      // fall through to the reject branch; more damping may fix it
    }

    if (accepted) {
      lambda = std::max(lambda * 0.1, lm.lambda_min);
      if (step_norm < lm.update_tol) {
        res.converged = true;
        break;
      }
    } else {
      res.objective_trace.push_back(neq.objective);
      lambda = std::min(lambda * 10.0, lm.lambda_max);
    }
  }
  res.final_objective = res.objective_trace.back();
  return res;
}

struct FastWgicpContext {
  PlainExec ex;
  ProblemConsts<PlainExec> pc;
  KdTree tree;
  std::vector<double> w_src, w_tgt;

  FastWgicpContext(const PointCloud& source, const PointCloud& target, int k_d, double temperature)
      : pc(ex, source, target, k_d, temperature), tree(target) {
    w_src = source.weights;
    w_tgt = target.weights;
  }

  NormalEqs normal_eqs(const RigidTransform& T, bool with_neq) {
    auto pass = wgicp_pass(ex, pc, tree, std::span<const double>(w_src),
                           std::span<const double>(w_tgt), m3_const(ex, T.R),
                           v3_const(ex, T.t), with_neq);
    NormalEqs out;
    out.H = pass.H;
    out.g = pass.g;
    out.objective = pass.objective;
    return out;
  }
};

}  // namespace detail

/// Point-to-point ICP (Eq.-1 style): single-nearest matching re-found each
/// iteration, damped Gauss-Newton steps, hard accept/reject.
inline RegistrationResult align_icp(const PointCloud& source, const PointCloud& target,
                                    const LmParams& lm = LmParams::fast_defaults(),
                                    const RigidTransform& init = {}) {
  lm.validate();
  if (source.empty() || target.empty()) throw EmptyCloudError("align_icp: empty cloud");
  const KdTree tree(target);

  auto normal_eqs_at = [&](const RigidTransform& T) {
    detail::NormalEqs neq;
    Eigen::Map<Eigen::Matrix<double, 6, 6, Eigen::RowMajor>> H(neq.H.data());
    Eigen::Map<Vec6> g(neq.g.data());
    for (const auto& a : source.points) {
      const Point3 p = T.apply(a);
      const Vec3 d = target.points[static_cast<std::size_t>(tree.nearest(p))] - p;
      neq.objective += d.squaredNorm();
      const Mat3 B = skew(p);
      // J = [-I | B] with identity residual weighting
      H.topLeftCorner<3, 3>() += Mat3::Identity();
      H.topRightCorner<3, 3>() -= B;
      H.bottomLeftCorner<3, 3>() -= B.transpose();
      H.bottomRightCorner<3, 3>() += B.transpose() * B;
      g.head<3>() -= d;
      g.tail<3>() += B.transpose() * d;
    }
    return neq;
  };
  auto objective_at = [&](const RigidTransform& T) {
    double obj = 0.0;
    for (const auto& a : source.points) {
      const Point3 p = T.apply(a);
      obj += (target.points[static_cast<std::size_t>(tree.nearest(p))] - p).squaredNorm();
    }
    return obj;
  };
  return detail::hard_lm_drive(normal_eqs_at, objective_at, lm, init);
}

/// Classic GICP: hard single-nearest correspondences with Mahalanobis
/// weighting. Both clouds must carry covariances.
inline RegistrationResult align_gicp(const PointCloud& source, const PointCloud& target,
                                     const LmParams& lm = LmParams::fast_defaults(),
                                     const RigidTransform& init = {}) {
  lm.validate();
  if (source.empty() || target.empty()) throw EmptyCloudError("align_gicp: empty cloud");
  if (source.covariances.size() != source.size() || target.covariances.size() != target.size()) {
    throw InvalidArgumentError("align_gicp: both clouds need covariances");
  }
  PointCloud src = source;
  PointCloud tgt = target;
  src.weights.clear();
  tgt.weights.clear();
  detail::FastWgicpContext ctx(src, tgt, 1, 1.0);
  auto normal_eqs_at = [&](const RigidTransform& T) { return ctx.normal_eqs(T, true); };
  auto objective_at = [&](const RigidTransform& T) { return ctx.normal_eqs(T, false).objective; };
  return detail::hard_lm_drive(normal_eqs_at, objective_at, lm, init);
}

/// One damped LM step of the weighted problem at pose T: the twist solving
/// (J^T W J + lambda diag) delta = -J^T W r, and the objective after
/// applying it (correspondences re-found at the stepped pose).
struct LmStep {
  Twist delta;
  double lookahead_objective;
};

inline LmStep lm_step(const WgicpProblem& problem, const RigidTransform& T, double lambda) {
  problem.validate();
  if (!(lambda > 0.0)) throw InvalidArgumentError("lm_step: lambda must be > 0");
  detail::FastWgicpContext ctx(problem.source, problem.target, problem.k_d, problem.knn_temperature);
  const auto neq = ctx.normal_eqs(T, true);
  LmStep out;
  out.delta = detail::solve_step(neq, lambda);
  out.lookahead_objective = ctx.normal_eqs(compose(exp_map(out.delta), T), false).objective;
  return out;
}

/// Fast weighted-GICP alignment. With GateMode::HardLm this is the
/// accept/reject loop with multiplicative damping updates; with
/// GateMode::SmoothGated it runs the same fixed-count gated iterations as
/// the differentiable solver, without recording.
inline RegistrationResult align_wgicp(const WgicpProblem& problem, const RigidTransform& init = {}) {
  problem.validate();
  if (problem.lm.gate == GateMode::SmoothGated) {
    detail::PlainExec ex;
    const detail::ProblemConsts<detail::PlainExec> pc(ex, problem.source, problem.target,
                                                      problem.k_d, problem.knn_temperature);
    const KdTree tree(problem.target);
    auto unrolled = detail::unrolled_wgicp_solve(ex, pc, tree,
                                                 std::span<const double>(problem.source.weights),
                                                 std::span<const double>(problem.target.weights),
                                                 problem.lm, init);
    RegistrationResult res;
    res.transform.R = detail::m3_value(ex, unrolled.R);
    res.transform.t = detail::v3_value(ex, unrolled.t);
    res.objective_trace = unrolled.objective_trace;
    res.iterations = unrolled.iterations;
    res.final_objective = res.objective_trace.back();
    res.converged = unrolled.last_step_norm < problem.lm.update_tol;
    return res;
  }
  detail::FastWgicpContext ctx(problem.source, problem.target, problem.k_d, problem.knn_temperature);
  auto normal_eqs_at = [&](const RigidTransform& T) { return ctx.normal_eqs(T, true); };
  auto objective_at = [&](const RigidTransform& T) { return ctx.normal_eqs(T, false).objective; };
  return detail::hard_lm_drive(normal_eqs_at, objective_at, problem.lm, init);
}

/// Differentiable alignment: per-point weights become tape leaves, the
/// solver unrolls lm.max_iterations smooth-gated iterations, and the
/// returned handles expose the estimate for downstream recorded losses.
struct DifferentiableAlignment {
  RegistrationResult result;
  TapeMat3 rotation;
  TapeVec3 translation;
  std::vector<Var> source_weights;
  std::vector<Var> target_weights;
};

inline DifferentiableAlignment align_wgicp_differentiable(Tape& tape, const WgicpProblem& problem,
                                                          const RigidTransform& init = {}) {
  problem.validate();
  detail::TapeExec ex{&tape};
  DifferentiableAlignment out;
  out.source_weights.reserve(problem.source.size());
  for (std::size_t i = 0; i < problem.source.size(); ++i) {
    out.source_weights.push_back(tape.input(problem.source.weight(i)));
  }
  out.target_weights.reserve(problem.target.size());
  for (std::size_t i = 0; i < problem.target.size(); ++i) {
    out.target_weights.push_back(tape.input(problem.target.weight(i)));
  }
  const detail::ProblemConsts<detail::TapeExec> pc(ex, problem.source, problem.target,
                                                   problem.k_d, problem.knn_temperature);
  const KdTree tree(problem.target);
  LmParams lm = problem.lm;
  lm.gate = GateMode::SmoothGated;
  auto unrolled = detail::unrolled_wgicp_solve(ex, pc, tree,
                                               std::span<const Var>(out.source_weights),
                                               std::span<const Var>(out.target_weights), lm, init);
  out.rotation = unrolled.R;
  out.translation = unrolled.t;
  out.result.transform.R = detail::m3_value(ex, unrolled.R);
  out.result.transform.t = detail::v3_value(ex, unrolled.t);
  out.result.objective_trace = unrolled.objective_trace;
  out.result.iterations = unrolled.iterations;
  out.result.final_objective = out.result.objective_trace.back();
  out.result.converged = unrolled.last_step_norm < lm.update_tol;
  return out;
}

/// Gradients of the Frobenius pose loss ||T_est - T_gt||_F through the
/// unrolled solve, with respect to every per-point weight of both clouds.
struct WeightGradients {
  std::vector<double> source;
  std::vector<double> target;
  double loss = 0.0;
  RigidTransform estimate;
};

inline WeightGradients pose_gradients(const WgicpProblem& problem, const RigidTransform& gt) {
  Tape tape;
  auto align = align_wgicp_differentiable(tape, problem);
  detail::TapeExec ex{&tape};
  const Var loss = detail::pose_loss_expr(ex, align.rotation, align.translation, gt);
  tape.backward(loss);
  WeightGradients out;
  out.loss = tape.value(loss);
  out.estimate = align.result.transform;
  out.source.reserve(align.source_weights.size());
  for (Var v : align.source_weights) out.source.push_back(tape.adjoint(v));
  out.target.reserve(align.target_weights.size());
  for (Var v : align.target_weights) out.target.push_back(tape.adjoint(v));
  return out;
}

}  // namespace wgicp

#endif  // WGICP_REGISTRATION_HPP
