// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Reverse-mode autodiff over an append-only tape of scalar and fused
// small-matrix operations. The tape evaluates eagerly on record, so
// values are always available; backward() fills adjoints for every
// variable reachable from the seeded scalar.

#ifndef WGICP_AUTODIFF_HPP
#define WGICP_AUTODIFF_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "wgicp/errors.hpp"

namespace wgicp {

class Tape;

/// Handle into a Tape slot. Valid only for the tape that created it.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t index = 0;
};

using TapeVec3 = std::array<Var, 3>;
using TapeMat3 = std::array<Var, 9>;  // row-major

namespace testing {
// Test hook: deliberately corrupts adjoints after each backward pass so
// gradient checks must fail. Never set outside negative-control tests.
inline bool corrupt_adjoints = false;
}  // namespace testing

class Tape {
 public:
  enum class Op : std::uint8_t {
    Add, Sub, Mul, Div, Neg,
    Exp, Log, Sqrt, Sin, Cos, Sigmoid, Relu, Max,
    Dot3, Norm3, MatVec3, MatMul3, Inverse3,
    Linear,  // bias + sum_i w_i * x_i; args = [w..., x..., bias]
  };

  Var constant(double value) { return make(value); }
  Var input(double value) { return make(value); }

  std::vector<Var> inputs(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(make(v));
    return out;
  }

  double value(Var v) const { return values_[v.index]; }
  double adjoint(Var v) const { return adjoints_[v.index]; }
  std::size_t num_variables() const { return values_.size(); }
  std::size_t num_operations() const { return ops_.size(); }

  void clear() {
    values_.clear();
    adjoints_.clear();
    ops_.clear();
    args_.clear();
  }

  // ---- scalar primitives -------------------------------------------------

  Var add(Var a, Var b) { return record2(Op::Add, a, b, values_[a.index] + values_[b.index]); }
  Var sub(Var a, Var b) { return record2(Op::Sub, a, b, values_[a.index] - values_[b.index]); }
  Var mul(Var a, Var b) { return record2(Op::Mul, a, b, values_[a.index] * values_[b.index]); }
  Var div(Var a, Var b) { return record2(Op::Div, a, b, values_[a.index] / values_[b.index]); }
  Var neg(Var a) { return record1(Op::Neg, a, -values_[a.index]); }
  Var exp(Var a) { return record1(Op::Exp, a, std::exp(values_[a.index])); }

  Var log(Var a) {
    if (!(values_[a.index] > 0.0)) throw DomainError("tape log: argument must be positive");
    return record1(Op::Log, a, std::log(values_[a.index]));
  }

  Var sqrt(Var a) {
    if (values_[a.index] < 0.0) throw DomainError("tape sqrt: argument must be nonnegative");
    return record1(Op::Sqrt, a, std::sqrt(values_[a.index]));
  }

  Var sin(Var a) { return record1(Op::Sin, a, std::sin(values_[a.index])); }
  Var cos(Var a) { return record1(Op::Cos, a, std::cos(values_[a.index])); }

  Var sigmoid(Var a) {
    const double x = values_[a.index];
    const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return record1(Op::Sigmoid, a, s);
  }

  Var relu(Var a) { return record1(Op::Relu, a, values_[a.index] > 0.0 ? values_[a.index] : 0.0); }

  /// max(a, b); on ties the adjoint flows to a.
  Var max(Var a, Var b) {
    return record2(Op::Max, a, b, values_[b.index] > values_[a.index] ? values_[b.index] : values_[a.index]);
  }

  // ---- fused vector/matrix primitives -------------------------------------

  Var dot3(const TapeVec3& a, const TapeVec3& b) {
    const std::uint32_t begin = push_args({a[0], a[1], a[2], b[0], b[1], b[2]});
    double v = 0.0;
    for (int i = 0; i < 3; ++i) v += values_[a[i].index] * values_[b[i].index];
    return finish(Op::Dot3, begin, 6, v);
  }

  /// Euclidean norm of a 3-vector. The adjoint at the origin is zero.
  Var norm3(const TapeVec3& a) {
    const std::uint32_t begin = push_args({a[0], a[1], a[2]});
    double v = 0.0;
    for (int i = 0; i < 3; ++i) v += values_[a[i].index] * values_[a[i].index];
    return finish(Op::Norm3, begin, 3, std::sqrt(v));
  }

  TapeVec3 matvec3(const TapeMat3& m, const TapeVec3& x) {
    const std::uint32_t begin =
        push_args({m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8], x[0], x[1], x[2]});
    std::array<double, 3> y{};
    for (int i = 0; i < 3; ++i) {
      double acc = 0.0;
      for (int j = 0; j < 3; ++j) acc += values_[m[3 * i + j].index] * values_[x[j].index];
      y[static_cast<std::size_t>(i)] = acc;
    }
    return finish_vec3(Op::MatVec3, begin, 12, y);
  }

  TapeMat3 matmul3(const TapeMat3& a, const TapeMat3& b) {
    std::array<Var, 18> all;
    for (int i = 0; i < 9; ++i) all[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)];
    for (int i = 0; i < 9; ++i) all[static_cast<std::size_t>(9 + i)] = b[static_cast<std::size_t>(i)];
    const std::uint32_t begin = push_args(std::span<const Var>(all));
    std::array<double, 9> c{};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) {
          acc += values_[a[3 * i + k].index] * values_[b[3 * k + j].index];
        }
        c[static_cast<std::size_t>(3 * i + j)] = acc;
      }
    }
    return finish_mat3(Op::MatMul3, begin, 18, c);
  }

  /// 3x3 inverse via adjugate; rejects matrices conditioned worse than 1e12.
  TapeMat3 inverse3(const TapeMat3& m) {
    const std::uint32_t begin =
        push_args({m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]});
    std::array<double, 9> a{};
    for (int i = 0; i < 9; ++i) a[static_cast<std::size_t>(i)] = values_[m[static_cast<std::size_t>(i)].index];
    std::array<double, 9> inv{};
    invert3(a, inv);
    return finish_mat3(Op::Inverse3, begin, 9, inv);
  }

  /// bias + sum_i weights[i] * xs[i], recorded as one fused operation.
  Var linear(std::span<const Var> weights, std::span<const Var> xs, Var bias) {
    const std::size_t n = weights.size();
    const std::uint32_t begin = static_cast<std::uint32_t>(args_.size());
    args_.reserve(args_.size() + 2 * n + 1);
    for (const Var& w : weights) args_.push_back(w.index);
    for (const Var& x : xs) args_.push_back(x.index);
    args_.push_back(bias.index);
    double acc = values_[bias.index];
    for (std::size_t i = 0; i < n; ++i) acc += values_[weights[i].index] * values_[xs[i].index];
    return finish(Op::Linear, begin, static_cast<std::uint32_t>(2 * n + 1), acc);
  }

  // ---- reverse pass --------------------------------------------------------

  /// Seeds d(seed)/d(seed) = 1 and propagates adjoints tape-backwards.
  /// Always starts from zeroed adjoints, so repeated calls are identical.
  void backward(Var seed) {
    adjoints_.assign(values_.size(), 0.0);
    adjoints_[seed.index] = 1.0;
    for (std::size_t k = ops_.size(); k-- > 0;) {
      const OpRecord& op = ops_[k];
      propagate(op);
    }
    if (testing::corrupt_adjoints) {
      for (auto& a : adjoints_) a = a * 1.05 + 1e-3;
    }
  }

  // 3x3 inverse on raw values; shared with the plain execution policy.
  static void invert3(const std::array<double, 9>& a, std::array<double, 9>& inv) {
    const double c00 = a[4] * a[8] - a[5] * a[7];
    const double c01 = a[5] * a[6] - a[3] * a[8];
    const double c02 = a[3] * a[7] - a[4] * a[6];
    const double det = a[0] * c00 + a[1] * c01 + a[2] * c02;
    if (det == 0.0) throw SingularMatrixError("inverse3: singular matrix");
    const double inv_det = 1.0 / det;
    inv[0] = c00 * inv_det;
    inv[1] = (a[2] * a[7] - a[1] * a[8]) * inv_det;
    inv[2] = (a[1] * a[5] - a[2] * a[4]) * inv_det;
    inv[3] = c01 * inv_det;
    inv[4] = (a[0] * a[8] - a[2] * a[6]) * inv_det;
    inv[5] = (a[2] * a[3] - a[0] * a[5]) * inv_det;
    inv[6] = c02 * inv_det;
    inv[7] = (a[1] * a[6] - a[0] * a[7]) * inv_det;
    inv[8] = (a[0] * a[4] - a[1] * a[3]) * inv_det;
    double na = 0.0, ni = 0.0;
    for (int i = 0; i < 9; ++i) {
      na += a[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)];
      ni += inv[static_cast<std::size_t>(i)] * inv[static_cast<std::size_t>(i)];
    }
    if (!(std::sqrt(na * ni) < 1e12)) {
      throw SingularMatrixError("inverse3: condition number exceeds 1e12");
    }
  }

 private:
  struct OpRecord {
    Op kind;
    std::uint32_t out;
    std::uint32_t arg_begin;
    std::uint32_t arg_count;
  };

  Var make(double v) {
    values_.push_back(v);
    return Var{this, static_cast<std::uint32_t>(values_.size() - 1)};
  }

  std::uint32_t push_args(std::span<const Var> vars) {
    const std::uint32_t begin = static_cast<std::uint32_t>(args_.size());
    for (const Var& v : vars) args_.push_back(v.index);
    return begin;
  }
  std::uint32_t push_args(std::initializer_list<Var> vars) {
    return push_args(std::span<const Var>(vars.begin(), vars.size()));
  }

  Var finish(Op kind, std::uint32_t arg_begin, std::uint32_t arg_count, double value) {
    Var out = make(value);
    ops_.push_back({kind, out.index, arg_begin, arg_count});
    return out;
  }

  TapeVec3 finish_vec3(Op kind, std::uint32_t arg_begin, std::uint32_t arg_count,
                       const std::array<double, 3>& v) {
    TapeVec3 out;
    out[0] = make(v[0]);
    out[1] = make(v[1]);
    out[2] = make(v[2]);
    ops_.push_back({kind, out[0].index, arg_begin, arg_count});
    return out;
  }

  TapeMat3 finish_mat3(Op kind, std::uint32_t arg_begin, std::uint32_t arg_count,
                       const std::array<double, 9>& v) {
    TapeMat3 out;
    for (int i = 0; i < 9; ++i) out[static_cast<std::size_t>(i)] = make(v[static_cast<std::size_t>(i)]);
    ops_.push_back({kind, out[0].index, arg_begin, arg_count});
    return out;
  }

  Var record1(Op kind, Var a, double value) {
    const std::uint32_t begin = push_args({a});
    return finish(kind, begin, 1, value);
  }
  Var record2(Op kind, Var a, Var b, double value) {
    const std::uint32_t begin = push_args({a, b});
    return finish(kind, begin, 2, value);
  }

  void propagate(const OpRecord& op) {
    const double yb = adjoints_[op.out];
    const std::uint32_t* in = args_.data() + op.arg_begin;
    switch (op.kind) {
      case Op::Add:
        adjoints_[in[0]] += yb;
        adjoints_[in[1]] += yb;
        break;
      case Op::Sub:
        adjoints_[in[0]] += yb;
        adjoints_[in[1]] -= yb;
        break;
      case Op::Mul:
        adjoints_[in[0]] += yb * values_[in[1]];
        adjoints_[in[1]] += yb * values_[in[0]];
        break;
      case Op::Div: {
        const double b = values_[in[1]];
        adjoints_[in[0]] += yb / b;
        adjoints_[in[1]] -= yb * values_[op.out] / b;
        break;
      }
      case Op::Neg:
        adjoints_[in[0]] -= yb;
        break;
      case Op::Exp:
        adjoints_[in[0]] += yb * values_[op.out];
        break;
      case Op::Log:
        adjoints_[in[0]] += yb / values_[in[0]];
        break;
      case Op::Sqrt:
        if (values_[op.out] > 0.0) adjoints_[in[0]] += yb * 0.5 / values_[op.out];
        break;
      case Op::Sin:
        adjoints_[in[0]] += yb * std::cos(values_[in[0]]);
        break;
      case Op::Cos:
        adjoints_[in[0]] -= yb * std::sin(values_[in[0]]);
        break;
      case Op::Sigmoid: {
        const double s = values_[op.out];
        adjoints_[in[0]] += yb * s * (1.0 - s);
        break;
      }
      case Op::Relu:
        if (values_[in[0]] > 0.0) adjoints_[in[0]] += yb;
        break;
      case Op::Max:
        if (values_[in[1]] > values_[in[0]]) {
          adjoints_[in[1]] += yb;
        } else {
          adjoints_[in[0]] += yb;
        }
        break;
      case Op::Dot3:
        for (int i = 0; i < 3; ++i) {
          adjoints_[in[i]] += yb * values_[in[3 + i]];
          adjoints_[in[3 + i]] += yb * values_[in[i]];
        }
        break;
      case Op::Norm3: {
        const double r = values_[op.out];
        if (r > 0.0) {
          for (int i = 0; i < 3; ++i) adjoints_[in[i]] += yb * values_[in[i]] / r;
        }
        break;
      }
      case Op::MatVec3:
        // y = M x: Mbar_ij += ybar_i x_j, xbar_j += ybar_i M_ij
        for (int i = 0; i < 3; ++i) {
          const double yi = adjoints_[op.out + static_cast<std::uint32_t>(i)];
          if (yi == 0.0) continue;
          for (int j = 0; j < 3; ++j) {
            adjoints_[in[3 * i + j]] += yi * values_[in[9 + j]];
            adjoints_[in[9 + j]] += yi * values_[in[3 * i + j]];
          }
        }
        break;
      case Op::MatMul3:
        // C = A B: Abar += Cbar B^T, Bbar += A^T Cbar
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) {
            const double cb = adjoints_[op.out + static_cast<std::uint32_t>(3 * i + j)];
            if (cb == 0.0) continue;
            for (int k = 0; k < 3; ++k) {
              adjoints_[in[3 * i + k]] += cb * values_[in[9 + 3 * k + j]];
              adjoints_[in[9 + 3 * k + j]] += cb * values_[in[3 * i + k]];
            }
          }
        }
        break;
      case Op::Inverse3: {
        // X = A^-1: Abar -= X^T Xbar X^T
        std::array<double, 9> xbar{}, x{};
        for (int i = 0; i < 9; ++i) {
          xbar[static_cast<std::size_t>(i)] = adjoints_[op.out + static_cast<std::uint32_t>(i)];
          x[static_cast<std::size_t>(i)] = values_[op.out + static_cast<std::uint32_t>(i)];
        }
        std::array<double, 9> tmp{};  // X^T Xbar
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += x[static_cast<std::size_t>(3 * k + i)] * xbar[static_cast<std::size_t>(3 * k + j)];
            tmp[static_cast<std::size_t>(3 * i + j)] = acc;
          }
        }
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += tmp[static_cast<std::size_t>(3 * i + k)] * x[static_cast<std::size_t>(3 * j + k)];
            adjoints_[in[3 * i + j]] -= acc;
          }
        }
        break;
      }
      case Op::Linear: {
        const std::uint32_t n = (op.arg_count - 1) / 2;
        for (std::uint32_t i = 0; i < n; ++i) {
          adjoints_[in[i]] += yb * values_[in[n + i]];
          adjoints_[in[n + i]] += yb * values_[in[i]];
        }
        adjoints_[in[2 * n]] += yb;
        break;
      }
    }
  }

  std::vector<double> values_;
  std::vector<double> adjoints_;
  std::vector<OpRecord> ops_;
  std::vector<std::uint32_t> args_;
};

// Operator sugar for scalar Vars (both operands on the same tape).
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator-(Var a) { return a.tape->neg(a); }

}  // namespace wgicp

#endif  // WGICP_AUTODIFF_HPP
