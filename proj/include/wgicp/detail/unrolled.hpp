// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Fixed-count unrolled WGICP iterations with smooth-gated LM updates.
// Instantiated on the tape policy this is the differentiable solver; on
// the plain policy it is the matching value-only forward used by
// finite-difference oracles.

#ifndef WGICP_DETAIL_UNROLLED_HPP
#define WGICP_DETAIL_UNROLLED_HPP

#include <vector>

#include "wgicp/detail/wgicp_kernel.hpp"
#include "wgicp/registration_types.hpp"

namespace wgicp::detail {

/// Rebuilds plain-valued problem constants from any policy's constants.
template <class E>
ProblemConsts<PlainExec> plain_consts_of(PlainExec& plain, const ProblemConsts<E>& pc, const E& ex) {
  ProblemConsts<PlainExec> out;
  out.k_d = pc.k_d;
  out.inv_tau = ex.val(pc.inv_tau);
  out.one = 1.0;
  out.eps_w = ex.val(pc.eps_w);
  out.src_pts.reserve(pc.src_pts.size());
  out.src_covs.reserve(pc.src_covs.size());
  for (const auto& p : pc.src_pts) out.src_pts.push_back({ex.val(p[0]), ex.val(p[1]), ex.val(p[2])});
  for (const auto& m : pc.src_covs) {
    PlainExec::M3 mm{};
    for (int i = 0; i < 9; ++i) mm[static_cast<std::size_t>(i)] = ex.val(m[static_cast<std::size_t>(i)]);
    out.src_covs.push_back(mm);
  }
  out.tgt_pts.reserve(pc.tgt_pts.size());
  out.tgt_covs.reserve(pc.tgt_covs.size());
  for (const auto& p : pc.tgt_pts) out.tgt_pts.push_back({ex.val(p[0]), ex.val(p[1]), ex.val(p[2])});
  for (const auto& m : pc.tgt_covs) {
    PlainExec::M3 mm{};
    for (int i = 0; i < 9; ++i) mm[static_cast<std::size_t>(i)] = ex.val(m[static_cast<std::size_t>(i)]);
    out.tgt_covs.push_back(mm);
  }
  return out;
}

template <class E>
struct UnrolledOutput {
  typename E::M3 R;
  typename E::V3 t;
  std::vector<double> objective_trace;  // objective value at T_0..T_K
  int iterations = 0;
  double last_step_norm = 0.0;
};

template <class E>
UnrolledOutput<E> unrolled_wgicp_solve(E& ex, const ProblemConsts<E>& pc,
                                       const KdTree& tgt_tree,
                                       std::span<const typename E::S> w_src,
                                       std::span<const typename E::S> w_tgt,
                                       const LmParams& lm, const RigidTransform& init) {
  using S = typename E::S;

  const std::size_t n_src = pc.src_pts.size();
  const S inv_n = ex.c(1.0 / static_cast<double>(n_src));
  const S inv_gate_scale = ex.c(1.0 / lm.gate_scale);
  const S lambda_min = ex.c(lm.lambda_min);
  const S lambda_range = ex.c(lm.lambda_max - lm.lambda_min);

  UnrolledOutput<E> out;
  out.R = m3_const(ex, init.R);
  out.t = v3_const(ex, init.t);
  S lambda = ex.c(lm.lambda0);

  for (int iter = 0; iter < lm.max_iterations; ++iter) {
    auto pass = wgicp_pass(ex, pc, tgt_tree, w_src, w_tgt, out.R, out.t, true);
    const double objective = ex.val(pass.objective);
    out.objective_trace.push_back(objective);
    if (!(objective < 1e12)) throw DivergedError("unrolled_wgicp_solve: objective diverged");

    const auto delta = solve_damped6(ex, pass.H, pass.g, lambda);

    // Lookahead at the full step, correspondences re-found there.
    typename E::M3 r_step;
    typename E::V3 t_step;
    se3_exp(ex, std::span<const S>(delta.data(), 6), r_step, t_step);
    const typename E::M3 r_try = ex.matmul3(r_step, out.R);
    const typename E::V3 t_try = v3_add(ex, ex.matvec3(r_step, out.t), t_step);
    auto look = wgicp_pass(ex, pc, tgt_tree, w_src, w_tgt, r_try, t_try, false);

    // Mean-normalized improvement drives both gates; the lambda gate is
    // its complement so lambda grows on bad steps.
    const S improvement =
        ex.mul(ex.mul(ex.sub(pass.objective, look.objective), inv_n), inv_gate_scale);
    const S gate_t = lm.gate_sign == GateSign::Intent ? ex.sigmoid(improvement)
                                                      : ex.sigmoid(ex.neg(improvement));
    const S gate_lambda = ex.sigmoid(ex.neg(improvement));
    lambda = ex.add(lambda_min, ex.mul(lambda_range, gate_lambda));

    std::array<S, 6> gated;
    double step_norm_sq = 0.0;
    for (int k = 0; k < 6; ++k) {
      gated[static_cast<std::size_t>(k)] = ex.mul(gate_t, delta[static_cast<std::size_t>(k)]);
      const double v = ex.val(gated[static_cast<std::size_t>(k)]);
      step_norm_sq += v * v;
    }
    typename E::M3 r_upd;
    typename E::V3 t_upd;
    se3_exp(ex, std::span<const S>(gated.data(), 6), r_upd, t_upd);
    out.t = v3_add(ex, ex.matvec3(r_upd, out.t), t_upd);
    out.R = ex.matmul3(r_upd, out.R);
    out.iterations = iter + 1;
    out.last_step_norm = std::sqrt(step_norm_sq);
  }

  // Final objective, value-only: no recording needed for reporting.
  {
    PlainExec plain;
    const Mat3 r_val = m3_value(ex, out.R);
    const Vec3 t_val = v3_value(ex, out.t);
    ProblemConsts<PlainExec> pv = plain_consts_of(plain, pc, ex);
    std::vector<double> wsrc_v(w_src.size()), wtgt_v(w_tgt.size());
    for (std::size_t i = 0; i < w_src.size(); ++i) wsrc_v[i] = ex.val(w_src[i]);
    for (std::size_t i = 0; i < w_tgt.size(); ++i) wtgt_v[i] = ex.val(w_tgt[i]);
    auto final_pass = wgicp_pass(plain, pv, tgt_tree, std::span<const double>(wsrc_v),
                                 std::span<const double>(wtgt_v), m3_const(plain, r_val),
                                 v3_const(plain, t_val), false);
    out.objective_trace.push_back(final_pass.objective);
  }
  return out;
}

}  // namespace wgicp::detail

#endif  // WGICP_DETAIL_UNROLLED_HPP
