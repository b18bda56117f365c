// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Execution policies: the same numeric kernels run either on plain
// doubles (fast solvers, finite-difference oracles) or on the autodiff
// tape (unrolled differentiable solver). Keeping one source for both
// guarantees the recorded computation matches the value-only one.

#ifndef WGICP_DETAIL_EXEC_HPP
#define WGICP_DETAIL_EXEC_HPP

#include <array>
#include <cmath>
#include <span>

#include "wgicp/autodiff.hpp"
#include "wgicp/errors.hpp"
#include "wgicp/geometry.hpp"

namespace wgicp::detail {

struct PlainExec {
  using S = double;
  using V3 = std::array<double, 3>;
  using M3 = std::array<double, 9>;
  static constexpr bool kRecords = false;

  S c(double v) const { return v; }
  double val(S a) const { return a; }

  S add(S a, S b) const { return a + b; }
  S sub(S a, S b) const { return a - b; }
  S mul(S a, S b) const { return a * b; }
  S div(S a, S b) const { return a / b; }
  S neg(S a) const { return -a; }
  S exp(S a) const { return std::exp(a); }
  S log(S a) const {
    if (!(a > 0.0)) throw DomainError("log: argument must be positive");
    return std::log(a);
  }
  S sqrt(S a) const {
    if (a < 0.0) throw DomainError("sqrt: argument must be nonnegative");
    return std::sqrt(a);
  }
  S sin(S a) const { return std::sin(a); }
  S cos(S a) const { return std::cos(a); }
  S sigmoid(S a) const {
    return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
  }
  S relu(S a) const { return a > 0.0 ? a : 0.0; }
  S max(S a, S b) const { return b > a ? b : a; }

  S linear(std::span<const S> w, std::span<const S> x, S bias) const {
    double acc = bias;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x[i];
    return acc;
  }

  S dot3(const V3& a, const V3& b) const { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
  S norm3(const V3& a) const { return std::sqrt(dot3(a, a)); }

  V3 matvec3(const M3& m, const V3& x) const {
    V3 y{};
    for (int i = 0; i < 3; ++i) {
      double acc = 0.0;
      for (int j = 0; j < 3; ++j) acc += m[static_cast<std::size_t>(3 * i + j)] * x[static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(i)] = acc;
    }
    return y;
  }

  M3 matmul3(const M3& a, const M3& b) const {
    M3 out{};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) {
          acc += a[static_cast<std::size_t>(3 * i + k)] * b[static_cast<std::size_t>(3 * k + j)];
        }
        out[static_cast<std::size_t>(3 * i + j)] = acc;
      }
    }
    return out;
  }

  M3 inverse3(const M3& m) const {
    M3 out{};
    Tape::invert3(m, out);
    return out;
  }
};

struct TapeExec {
  Tape* tape;
  using S = Var;
  using V3 = TapeVec3;
  using M3 = TapeMat3;
  static constexpr bool kRecords = true;

  S c(double v) const { return tape->constant(v); }
  double val(S a) const { return tape->value(a); }

  S add(S a, S b) const { return tape->add(a, b); }
  S sub(S a, S b) const { return tape->sub(a, b); }
  S mul(S a, S b) const { return tape->mul(a, b); }
  S div(S a, S b) const { return tape->div(a, b); }
  S neg(S a) const { return tape->neg(a); }
  S exp(S a) const { return tape->exp(a); }
  S log(S a) const { return tape->log(a); }
  S sqrt(S a) const { return tape->sqrt(a); }
  S sin(S a) const { return tape->sin(a); }
  S cos(S a) const { return tape->cos(a); }
  S sigmoid(S a) const { return tape->sigmoid(a); }
  S relu(S a) const { return tape->relu(a); }
  S max(S a, S b) const { return tape->max(a, b); }
  S linear(std::span<const S> w, std::span<const S> x, S bias) const {
    return tape->linear(w, x, bias);
  }
  S dot3(const V3& a, const V3& b) const { return tape->dot3(a, b); }
  S norm3(const V3& a) const { return tape->norm3(a); }
  V3 matvec3(const M3& m, const V3& x) const { return tape->matvec3(m, x); }
  M3 matmul3(const M3& a, const M3& b) const { return tape->matmul3(a, b); }
  M3 inverse3(const M3& m) const { return tape->inverse3(m); }
};

// ---- small generic linear algebra ------------------------------------------

template <class E>
typename E::V3 v3_const(E& ex, const Vec3& v) {
  return {ex.c(v.x()), ex.c(v.y()), ex.c(v.z())};
}

template <class E>
typename E::M3 m3_const(E& ex, const Mat3& m) {
  typename E::M3 out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[static_cast<std::size_t>(3 * i + j)] = ex.c(m(i, j));
  return out;
}

template <class E>
Vec3 v3_value(const E& ex, const typename E::V3& v) {
  return Vec3(ex.val(v[0]), ex.val(v[1]), ex.val(v[2]));
}

template <class E>
Mat3 m3_value(const E& ex, const typename E::M3& m) {
  Mat3 out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out(i, j) = ex.val(m[static_cast<std::size_t>(3 * i + j)]);
  return out;
}

template <class E>
typename E::V3 v3_add(E& ex, const typename E::V3& a, const typename E::V3& b) {
  return {ex.add(a[0], b[0]), ex.add(a[1], b[1]), ex.add(a[2], b[2])};
}

template <class E>
typename E::V3 v3_sub(E& ex, const typename E::V3& a, const typename E::V3& b) {
  return {ex.sub(a[0], b[0]), ex.sub(a[1], b[1]), ex.sub(a[2], b[2])};
}

template <class E>
typename E::V3 v3_scale(E& ex, typename E::S s, const typename E::V3& a) {
  return {ex.mul(s, a[0]), ex.mul(s, a[1]), ex.mul(s, a[2])};
}

template <class E>
typename E::M3 m3_add(E& ex, const typename E::M3& a, const typename E::M3& b) {
  typename E::M3 out;
  for (int i = 0; i < 9; ++i) out[static_cast<std::size_t>(i)] = ex.add(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(i)]);
  return out;
}

template <class E>
typename E::M3 m3_scale(E& ex, typename E::S s, const typename E::M3& a) {
  typename E::M3 out;
  for (int i = 0; i < 9; ++i) out[static_cast<std::size_t>(i)] = ex.mul(s, a[static_cast<std::size_t>(i)]);
  return out;
}

template <class E>
typename E::M3 m3_transpose(const typename E::M3& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

template <class E>
typename E::M3 skew3(E& ex, const typename E::V3& p) {
  const typename E::S zero = ex.c(0.0);
  return {zero,          ex.neg(p[2]), p[1],
          p[2],          zero,         ex.neg(p[0]),
          ex.neg(p[1]),  p[0],         zero};
}

// ---- SE(3) exponential ------------------------------------------------------

/// exp of a twist packed [trans(3); rot(3)], matching Twist::vector().
/// Returns (R, t). Uses the series branch below theta^2 = 1e-8 so the
/// computation stays smooth through zero rotation.
template <class E>
void se3_exp(E& ex, std::span<const typename E::S> xi, typename E::M3& r_out,
             typename E::V3& t_out) {
  using S = typename E::S;
  const typename E::V3 rho{xi[0], xi[1], xi[2]};
  const typename E::V3 phi{xi[3], xi[4], xi[5]};

  const S theta_sq = ex.dot3(phi, phi);
  S a, b, cc;
  if (ex.val(theta_sq) < 1e-8) {
    // a = 1 - t/6 + t^2/120, b = 1/2 - t/24 + t^2/720, c = 1/6 - t/120 + t^2/5040
    const S t2 = ex.mul(theta_sq, theta_sq);
    a = ex.add(ex.sub(ex.c(1.0), ex.mul(ex.c(1.0 / 6.0), theta_sq)), ex.mul(ex.c(1.0 / 120.0), t2));
    b = ex.add(ex.sub(ex.c(0.5), ex.mul(ex.c(1.0 / 24.0), theta_sq)), ex.mul(ex.c(1.0 / 720.0), t2));
    cc = ex.add(ex.sub(ex.c(1.0 / 6.0), ex.mul(ex.c(1.0 / 120.0), theta_sq)),
                ex.mul(ex.c(1.0 / 5040.0), t2));
  } else {
    const S theta = ex.sqrt(theta_sq);
    a = ex.div(ex.sin(theta), theta);
    b = ex.div(ex.sub(ex.c(1.0), ex.cos(theta)), theta_sq);
    cc = ex.div(ex.sub(ex.c(1.0), a), theta_sq);
  }

  const typename E::M3 k = skew3(ex, phi);
  const typename E::M3 k2 = ex.matmul3(k, k);
  const typename E::M3 eye = m3_const(ex, Mat3::Identity());
  r_out = m3_add(ex, eye, m3_add(ex, m3_scale(ex, a, k), m3_scale(ex, b, k2)));
  const typename E::M3 v = m3_add(ex, eye, m3_add(ex, m3_scale(ex, b, k), m3_scale(ex, cc, k2)));
  t_out = ex.matvec3(v, rho);
}

// ---- damped 6x6 Cholesky solve ----------------------------------------------

/// Solves (H + lambda*diag(H) + lambda*eps0*I) delta = -g for the LM step.
/// H is a full row-major 6x6 of which only the lower triangle is read.
template <class E>
std::array<typename E::S, 6> solve_damped6(E& ex, const std::array<typename E::S, 36>& h,
                                           const std::array<typename E::S, 6>& g,
                                           typename E::S lambda) {
  using S = typename E::S;
  constexpr double kDiagFloor = 1e-9;

  std::array<S, 36> l{};
  std::array<S, 6> diag;
  const S one = ex.c(1.0);
  const S floor_scale = ex.mul(lambda, ex.c(kDiagFloor));
  for (int i = 0; i < 6; ++i) {
    const S hii = h[static_cast<std::size_t>(7 * i)];
    diag[static_cast<std::size_t>(i)] =
        ex.add(ex.mul(hii, ex.add(one, lambda)), floor_scale);
  }

  for (int j = 0; j < 6; ++j) {
    S d = diag[static_cast<std::size_t>(j)];
    for (int k = 0; k < j; ++k) {
      const S ljk = l[static_cast<std::size_t>(6 * j + k)];
      d = ex.sub(d, ex.mul(ljk, ljk));
    }
    if (!(ex.val(d) > 0.0)) {
      throw SingularNormalEquationsError("solve_damped6: non-positive pivot");
    }
    const S ljj = ex.sqrt(d);
    l[static_cast<std::size_t>(7 * j)] = ljj;
    for (int i = j + 1; i < 6; ++i) {
      S acc = h[static_cast<std::size_t>(6 * i + j)];
      for (int k = 0; k < j; ++k) {
        acc = ex.sub(acc, ex.mul(l[static_cast<std::size_t>(6 * i + k)], l[static_cast<std::size_t>(6 * j + k)]));
      }
      l[static_cast<std::size_t>(6 * i + j)] = ex.div(acc, ljj);
    }
  }

  // L y = -g
  std::array<S, 6> y;
  for (int i = 0; i < 6; ++i) {
    S acc = ex.neg(g[static_cast<std::size_t>(i)]);
    for (int k = 0; k < i; ++k) {
      acc = ex.sub(acc, ex.mul(l[static_cast<std::size_t>(6 * i + k)], y[static_cast<std::size_t>(k)]));
    }
    y[static_cast<std::size_t>(i)] = ex.div(acc, l[static_cast<std::size_t>(7 * i)]);
  }
  // L^T delta = y
  std::array<S, 6> delta;
  for (int i = 5; i >= 0; --i) {
    S acc = y[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < 6; ++k) {
      acc = ex.sub(acc, ex.mul(l[static_cast<std::size_t>(6 * k + i)], delta[static_cast<std::size_t>(k)]));
    }
    delta[static_cast<std::size_t>(i)] = ex.div(acc, l[static_cast<std::size_t>(7 * i)]);
  }
  return delta;
}

// ---- Frobenius pose loss ------------------------------------------------------

/// || hom(R, t) - hom(gt) ||_F; only the top 3x4 rows can differ.
template <class E>
typename E::S pose_loss_expr(E& ex, const typename E::M3& r, const typename E::V3& t,
                             const RigidTransform& gt) {
  using S = typename E::S;
  S acc = ex.c(0.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const S d = ex.sub(r[static_cast<std::size_t>(3 * i + j)], ex.c(gt.R(i, j)));
      acc = ex.add(acc, ex.mul(d, d));
    }
    const S d = ex.sub(t[static_cast<std::size_t>(i)], ex.c(gt.t(i)));
    acc = ex.add(acc, ex.mul(d, d));
  }
  return ex.sqrt(acc);
}

}  // namespace wgicp::detail

#endif  // WGICP_DETAIL_EXEC_HPP
