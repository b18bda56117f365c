#include <catch2/catch_amalgamated.hpp>
#include <functional>
#include <random>

#include "wgicp/autodiff.hpp"
#include "wgicp/geometry.hpp"

using namespace wgicp;

namespace {

// Central finite differences with the step tied to the input magnitude.
double central_fd(const std::function<double(double)>& f, double x) {
  const double h = 1e-6 * std::max(1.0, std::abs(x));
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_CASE("autodiff scalar basics") {
  Tape tape;
  Var x = tape.input(3.0);
  Var y = x * x;
  tape.backward(y);
  CHECK(tape.adjoint(x) == 6.0);

  Tape t2;
  Var z = t2.input(0.0);
  Var s = t2.sigmoid(z);
  t2.backward(s);
  CHECK(t2.adjoint(z) == 0.25);

  // chain rule: f(g(x)), g = 2x, f = y^2 at x = 1 -> d/dx = 8
  Tape t3;
  Var a = t3.input(1.0);
  Var g = t3.constant(2.0) * a;
  Var f = g * g;
  t3.backward(f);
  CHECK(t3.adjoint(a) == 8.0);
}

TEST_CASE("constant-only tape has zero adjoints") {
  Tape tape;
  Var a = tape.constant(2.0);
  Var b = tape.constant(5.0);
  Var c = a * b + a;
  Var seed = tape.input(1.0);
  Var out = seed + c;
  tape.backward(out);
  CHECK(tape.adjoint(a) == 1.0 + 5.0);  // reachable, not a "constant" in the calculus sense
  Tape t2;
  Var p = t2.constant(4.0);
  Var q = t2.constant(3.0);
  Var r = p * q;
  Var unrelated = t2.input(1.0);
  Var seed2 = unrelated * unrelated;
  t2.backward(seed2);
  CHECK(t2.adjoint(p) == 0.0);
  CHECK(t2.adjoint(q) == 0.0);
  CHECK(t2.adjoint(r) == 0.0);
}

TEST_CASE("backward is deterministic across repeated calls") {
  Tape tape;
  Var x = tape.input(0.7);
  Var y = tape.exp(tape.sin(x) * x);
  tape.backward(y);
  const double first = tape.adjoint(x);
  tape.backward(y);
  CHECK(tape.adjoint(x) == first);
}

TEST_CASE("every scalar primitive matches finite differences") {
  struct Case {
    const char* name;
    std::function<double(Tape&, Var)> build;  // unary on-tape
    std::function<double(double)> eval;       // plain forward
    double lo, hi;
  };

  std::mt19937_64 rng(101);

  auto check_unary = [&](const char* name, auto record, auto plain, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (int i = 0; i < 100; ++i) {
      const double x0 = u(rng);
      Tape tape;
      Var x = tape.input(x0);
      Var y = record(tape, x);
      tape.backward(y);
      const double fd = central_fd(plain, x0);
      INFO(name << " at " << x0);
      CHECK(rel_err(tape.adjoint(x), fd) < 1e-5);
    }
  };

  check_unary("exp", [](Tape& t, Var x) { return t.exp(x); },
              [](double x) { return std::exp(x); }, -2.0, 2.0);
  check_unary("log", [](Tape& t, Var x) { return t.log(x); },
              [](double x) { return std::log(x); }, 0.1, 5.0);
  check_unary("sqrt", [](Tape& t, Var x) { return t.sqrt(x); },
              [](double x) { return std::sqrt(x); }, 0.1, 5.0);
  check_unary("sin", [](Tape& t, Var x) { return t.sin(x); },
              [](double x) { return std::sin(x); }, -3.0, 3.0);
  check_unary("cos", [](Tape& t, Var x) { return t.cos(x); },
              [](double x) { return std::cos(x); }, -3.0, 3.0);
  check_unary("sigmoid", [](Tape& t, Var x) { return t.sigmoid(x); },
              [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, -4.0, 4.0);
  check_unary("relu", [](Tape& t, Var x) { return t.relu(x); },
              [](double x) { return x > 0.0 ? x : 0.0; }, 0.2, 4.0);
  check_unary("neg", [](Tape& t, Var x) { return t.neg(x); },
              [](double x) { return -x; }, -4.0, 4.0);

  // binary ops
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    const double a0 = u(rng);
    const double b0 = u(rng) + 3.0;  // keep divisors away from zero
    auto check_pair = [&](auto record, auto plain) {
      Tape tape;
      Var a = tape.input(a0);
      Var b = tape.input(b0);
      Var y = record(tape, a, b);
      tape.backward(y);
      const double fa = central_fd([&](double x) { return plain(x, b0); }, a0);
      const double fb = central_fd([&](double x) { return plain(a0, x); }, b0);
      CHECK(rel_err(tape.adjoint(a), fa) < 1e-5);
      CHECK(rel_err(tape.adjoint(b), fb) < 1e-5);
    };
    check_pair([](Tape& t, Var a, Var b) { return t.add(a, b); },
               [](double a, double b) { return a + b; });
    check_pair([](Tape& t, Var a, Var b) { return t.sub(a, b); },
               [](double a, double b) { return a - b; });
    check_pair([](Tape& t, Var a, Var b) { return t.mul(a, b); },
               [](double a, double b) { return a * b; });
    check_pair([](Tape& t, Var a, Var b) { return t.div(a, b); },
               [](double a, double b) { return a / b; });
  }
}

TEST_CASE("fused matrix primitives match finite differences") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  SECTION("d/dA of v^T A^-1 v on random SPD matrices") {
    for (int rep = 0; rep < 20; ++rep) {
      Mat3 base;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) base(i, j) = u(rng);
      const Mat3 spd = base * base.transpose() + 0.5 * Mat3::Identity();
      const Vec3 v(u(rng), u(rng), u(rng));

      auto eval = [&](const Mat3& m) {
        return static_cast<double>(v.transpose() * m.inverse() * v);
      };

      Tape tape;
      TapeMat3 a;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a[static_cast<std::size_t>(3 * i + j)] = tape.input(spd(i, j));
      TapeVec3 tv{tape.constant(v.x()), tape.constant(v.y()), tape.constant(v.z())};
      const TapeMat3 inv = tape.inverse3(a);
      const Var q = tape.dot3(tv, tape.matvec3(inv, tv));
      tape.backward(q);

      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          const double fd = central_fd(
              [&](double x) {
                Mat3 m = spd;
                m(i, j) = x;
                return eval(m);
              },
              spd(i, j));
          CHECK(rel_err(tape.adjoint(a[static_cast<std::size_t>(3 * i + j)]), fd) < 1e-6);
        }
      }
    }
  }

  SECTION("matmul3, matvec3, dot3, norm3, linear adjoints") {
    for (int rep = 0; rep < 20; ++rep) {
      std::array<double, 9> av{}, bv{};
      std::array<double, 3> xv{};
      for (auto& x : av) x = u(rng);
      for (auto& x : bv) x = u(rng);
      for (auto& x : xv) x = u(rng) + 2.0;

      Tape tape;
      TapeMat3 a, b;
      TapeVec3 x;
      for (int i = 0; i < 9; ++i) {
        a[static_cast<std::size_t>(i)] = tape.input(av[static_cast<std::size_t>(i)]);
        b[static_cast<std::size_t>(i)] = tape.input(bv[static_cast<std::size_t>(i)]);
      }
      for (int i = 0; i < 3; ++i) x[static_cast<std::size_t>(i)] = tape.input(xv[static_cast<std::size_t>(i)]);

      const TapeMat3 c = tape.matmul3(a, b);
      const TapeVec3 y = tape.matvec3(c, x);
      const Var n = tape.norm3(y);
      const Var d = tape.dot3(y, x);
      const Var out = tape.add(n, d);
      tape.backward(out);

      auto plain = [&](const std::array<double, 9>& aa, const std::array<double, 9>& bb,
                       const std::array<double, 3>& xx) {
        Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> A(aa.data()), B(bb.data());
        Eigen::Map<const Vec3> X(xx.data());
        const Vec3 Y = A * B * X;
        return Y.norm() + Y.dot(X);
      };

      for (int i = 0; i < 9; ++i) {
        const double fd = central_fd(
            [&](double t) {
              auto aa = av;
              aa[static_cast<std::size_t>(i)] = t;
              return plain(aa, bv, xv);
            },
            av[static_cast<std::size_t>(i)]);
        CHECK(rel_err(tape.adjoint(a[static_cast<std::size_t>(i)]), fd) < 1e-5);
      }
      for (int i = 0; i < 3; ++i) {
        const double fd = central_fd(
            [&](double t) {
              auto xx = xv;
              xx[static_cast<std::size_t>(i)] = t;
              return plain(av, bv, xx);
            },
            xv[static_cast<std::size_t>(i)]);
        CHECK(rel_err(tape.adjoint(x[static_cast<std::size_t>(i)]), fd) < 1e-5);
      }
    }

    // fused linear: y = bias + w . x
    std::vector<double> wv(7), xv(7);
    for (auto& t : wv) t = u(rng);
    for (auto& t : xv) t = u(rng);
    Tape tape;
    auto w = tape.inputs(wv);
    auto x = tape.inputs(xv);
    Var bias = tape.input(0.3);
    Var y = tape.linear(w, x, bias);
    tape.backward(y);
    for (std::size_t i = 0; i < wv.size(); ++i) {
      CHECK(rel_err(tape.adjoint(w[i]), xv[i]) < 1e-12);
      CHECK(rel_err(tape.adjoint(x[i]), wv[i]) < 1e-12);
    }
    CHECK(tape.adjoint(bias) == 1.0);
  }
}

TEST_CASE("adjoint linearity") {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int rep = 0; rep < 30; ++rep) {
    const double x0 = u(rng);
    const double a = u(rng), b = u(rng);
    auto grad_of = [&](auto make) {
      Tape tape;
      Var x = tape.input(x0);
      Var y = make(tape, x);
      tape.backward(y);
      return tape.adjoint(x);
    };
    const double gf = grad_of([](Tape& t, Var x) { return t.sin(x); });
    const double gg = grad_of([](Tape& t, Var x) { return t.mul(x, x); });
    const double gsum = grad_of([&](Tape& t, Var x) {
      return t.add(t.mul(t.constant(a), t.sin(x)), t.mul(t.constant(b), t.mul(x, x)));
    });
    CHECK(std::abs(gsum - (a * gf + b * gg)) < 1e-12);
  }
}

TEST_CASE("domain and singularity errors") {
  Tape tape;
  Var neg = tape.input(-1.0);
  CHECK_THROWS_AS(tape.log(neg), DomainError);
  CHECK_THROWS_AS(tape.sqrt(neg), DomainError);

  TapeMat3 singular;
  for (int i = 0; i < 9; ++i) singular[static_cast<std::size_t>(i)] = tape.constant(1.0);
  CHECK_THROWS_AS(tape.inverse3(singular), SingularMatrixError);
}
