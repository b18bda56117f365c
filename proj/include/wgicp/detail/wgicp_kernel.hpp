// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// The weighted-GICP iteration kernel: soft-KNN correspondence weights,
// Mahalanobis residual terms, and Gauss-Newton normal equations, written
// once over an execution policy so the fast solver and the recorded
// differentiable solver share one definition.

#ifndef WGICP_DETAIL_WGICP_KERNEL_HPP
#define WGICP_DETAIL_WGICP_KERNEL_HPP

#include <span>
#include <vector>

#include "wgicp/detail/exec.hpp"
#include "wgicp/knn.hpp"

namespace wgicp::detail {

/// Per-problem constants lifted into the execution policy once (on a tape
/// these become constant slots reused across all unrolled iterations).
template <class E>
struct ProblemConsts {
  std::vector<typename E::V3> src_pts;
  std::vector<typename E::V3> tgt_pts;
  std::vector<typename E::M3> src_covs;
  std::vector<typename E::M3> tgt_covs;
  typename E::S one, eps_w, inv_tau;
  int k_d = 1;

  ProblemConsts() = default;

  ProblemConsts(E& ex, const PointCloud& src, const PointCloud& tgt, int k, double temperature) {
    k_d = k;
    src_pts.reserve(src.size());
    src_covs.reserve(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      src_pts.push_back(v3_const(ex, src.points[i]));
      src_covs.push_back(m3_const(ex, src.covariances[i]));
    }
    tgt_pts.reserve(tgt.size());
    tgt_covs.reserve(tgt.size());
    for (std::size_t i = 0; i < tgt.size(); ++i) {
      tgt_pts.push_back(v3_const(ex, tgt.points[i]));
      tgt_covs.push_back(m3_const(ex, tgt.covariances[i]));
    }
    one = ex.c(1.0);
    eps_w = ex.c(kWeightFloor);
    inv_tau = ex.c(1.0 / temperature);
  }
};

template <class E>
struct WgicpPass {
  typename E::S objective;           // sum over all terms
  std::array<typename E::S, 36> H;   // lower triangle valid, [trans; rot] blocks
  std::array<typename E::S, 6> g;
};

/// One evaluation of the Eq.-style weighted objective at pose (R, t):
/// for every source point, soft weights over its k_d nearest targets,
/// then sum_i w_i sum_j wbar_ij d_ij^T (Cb_j + R Ca_i R^T)^-1 d_ij.
/// When with_normal_eqs is set, also accumulates H = J^T W J and
/// g = J^T W d with J = [-I | skew(p_i)] per correspondence.
template <class E>
WgicpPass<E> wgicp_pass(E& ex, const ProblemConsts<E>& pc, const KdTree& tgt_tree,
                        std::span<const typename E::S> w_src,
                        std::span<const typename E::S> w_tgt, const typename E::M3& R,
                        const typename E::V3& t, bool with_normal_eqs) {
  using S = typename E::S;
  using V3 = typename E::V3;
  using M3 = typename E::M3;

  WgicpPass<E> out;
  const S zero = ex.c(0.0);
  out.objective = zero;
  for (auto& h : out.H) h = zero;
  for (auto& gi : out.g) gi = zero;

  const M3 Rt = m3_transpose<E>(R);
  std::vector<KdTree::Neighbor> nbrs;
  std::vector<V3> diffs;
  std::vector<S> logits, soft;

  for (std::size_t i = 0; i < pc.src_pts.size(); ++i) {
    const V3 p = v3_add(ex, ex.matvec3(R, pc.src_pts[i]), t);
    tgt_tree.query(Vec3(ex.val(p[0]), ex.val(p[1]), ex.val(p[2])), pc.k_d, nbrs);
    const std::size_t kn = nbrs.size();

    diffs.clear();
    logits.clear();
    for (std::size_t j = 0; j < kn; ++j) {
      const auto jj = static_cast<std::size_t>(nbrs[j].index);
      const V3 d = v3_sub(ex, pc.tgt_pts[jj], p);
      diffs.push_back(d);
      S dist = ex.norm3(d);
      if (!w_tgt.empty()) {
        dist = ex.div(dist, ex.max(w_tgt[jj], pc.eps_w));
      }
      logits.push_back(ex.neg(ex.mul(dist, pc.inv_tau)));
    }

    // Max-subtracted softmax over the k_d logits.
    std::size_t arg_best = 0;
    for (std::size_t j = 1; j < kn; ++j) {
      if (ex.val(logits[j]) > ex.val(logits[arg_best])) arg_best = j;
    }
    soft.clear();
    S denom = zero;
    for (std::size_t j = 0; j < kn; ++j) {
      const S e = ex.exp(ex.sub(logits[j], logits[arg_best]));
      soft.push_back(e);
      denom = ex.add(denom, e);
    }
    for (std::size_t j = 0; j < kn; ++j) soft[j] = ex.div(soft[j], denom);

    const M3 rotated_cov = ex.matmul3(ex.matmul3(R, pc.src_covs[i]), Rt);
    const S wi = w_src.empty() ? pc.one : w_src[i];

    M3 B{}, Bt{};
    if (with_normal_eqs) {
      B = skew3(ex, p);
      Bt = m3_transpose<E>(B);
    }

    for (std::size_t j = 0; j < kn; ++j) {
      const auto jj = static_cast<std::size_t>(nbrs[j].index);
      const M3 M = m3_add(ex, pc.tgt_covs[jj], rotated_cov);
      const M3 Minv = ex.inverse3(M);
      const V3 d = diffs[j];
      const S q = ex.dot3(d, ex.matvec3(Minv, d));
      const S scale = ex.mul(wi, soft[j]);
      out.objective = ex.add(out.objective, ex.mul(scale, q));

      if (!with_normal_eqs) continue;
      const M3 W = m3_scale(ex, scale, Minv);
      const M3 BtW = ex.matmul3(Bt, W);
      const M3 BtWB = ex.matmul3(BtW, B);
      const V3 Wd = ex.matvec3(W, d);
      const V3 BtWd = ex.matvec3(Bt, Wd);
      for (int r = 0; r < 3; ++r) {
        for (int c2 = 0; c2 <= r; ++c2) {
          auto& tl = out.H[static_cast<std::size_t>(6 * r + c2)];
          tl = ex.add(tl, W[static_cast<std::size_t>(3 * r + c2)]);
          auto& br = out.H[static_cast<std::size_t>(6 * (r + 3) + c2 + 3)];
          br = ex.add(br, BtWB[static_cast<std::size_t>(3 * r + c2)]);
        }
        for (int c2 = 0; c2 < 3; ++c2) {
          auto& bl = out.H[static_cast<std::size_t>(6 * (r + 3) + c2)];
          bl = ex.sub(bl, BtW[static_cast<std::size_t>(3 * r + c2)]);
        }
        out.g[static_cast<std::size_t>(r)] = ex.sub(out.g[static_cast<std::size_t>(r)], Wd[static_cast<std::size_t>(r)]);
        out.g[static_cast<std::size_t>(r + 3)] = ex.add(out.g[static_cast<std::size_t>(r + 3)], BtWd[static_cast<std::size_t>(r)]);
      }
    }
  }
  return out;
}

}  // namespace wgicp::detail

#endif  // WGICP_DETAIL_WGICP_KERNEL_HPP
