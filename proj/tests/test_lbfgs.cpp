#include <gtest/gtest.h>

#include <cmath>

#include "spst/lbfgs.hpp"
#include "support/fixtures.hpp"

using namespace spst;

namespace {

template <typename T>
struct Eval {
  double loss;
  Tensor<T> grad;
};

template <typename T>
Eval<T> shifted_quadratic(const Tensor<T>& x, const std::vector<double>& a) {
  Eval<T> e{0.0, Tensor<T>(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - a[i];
    e.loss += d * d;
    e.grad[i] = static_cast<T>(2.0 * d);
  }
  return e;
}

Eval<double> rosenbrock(const Tensor<double>& x) {
  const double a = x[0], b = x[1];
  Eval<double> e{(1 - a) * (1 - a) + 100 * (b - a * a) * (b - a * a), Tensor<double>({2})};
  e.grad[0] = -2 * (1 - a) - 400 * a * (b - a * a);
  e.grad[1] = 200 * (b - a * a);
  return e;
}

// Sum of (x_i^2 - c_i)^2 + 0.5 (x_i - x_{i+1})^2: nonconvex, smooth.
Eval<double> coupled_quartic(const Tensor<double>& x) {
  Eval<double> e{0.0, Tensor<double>(x.shape())};
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double c = 0.5 + 0.01 * static_cast<double>(i);
    const double r = x[i] * x[i] - c;
    e.loss += r * r;
    e.grad[i] += 4 * r * x[i];
    if (i + 1 < n) {
      const double d = x[i] - x[i + 1];
      e.loss += 0.5 * d * d;
      e.grad[i] += d;
      e.grad[i + 1] -= d;
    }
  }
  return e;
}

LBFGSConfig config(int m, int iters) {
  LBFGSConfig c;
  c.history_size = m;
  c.max_iters = iters;
  return c;
}

}  // namespace

TEST(TwoLoop, EmptyHistoryIsNegativeGradient) {
  const LBFGSState st(5);
  const std::vector<double> g{0.5, -2.0, 3.0};
  const auto d = two_loop_direction(std::span<const double>(g), st);
  EXPECT_EQ(d, (std::vector<double>{-0.5, 2.0, -3.0}));
}

TEST(TwoLoop, SinglePairActsAsIdentity) {
  LBFGSState st(5);
  const std::vector<double> e1{1.0, 0.0, 0.0};
  ASSERT_TRUE(st.push(std::span<const double>(e1), std::span<const double>(e1)));
  const auto d = two_loop_direction(std::span<const double>(e1), st);
  EXPECT_EQ(d, (std::vector<double>{-1.0, 0.0, 0.0}));
}

TEST(TwoLoop, DescentOnRandomValidStates) {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const std::size_t n = 6;
    // y = A s with A symmetric positive definite guarantees positive curvature.
    const auto m = fixture::random_vector(n * n, trial);
    std::vector<double> A(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < n; ++k) A[i * n + j] += m[i * n + k] * m[j * n + k];
        if (i == j) A[i * n + j] += 0.1;
      }
    LBFGSState st(4);
    for (int p = 0; p < 7; ++p) {
      const auto s = fixture::random_vector(n, 1000 * trial + static_cast<std::uint64_t>(p));
      std::vector<double> y(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) y[i] += A[i * n + j] * s[j];
      st.push(std::span<const double>(s), std::span<const double>(y));
    }
    EXPECT_LE(st.size(), 4u);
    const auto g = fixture::random_vector(n, 77 + trial);
    const auto d = two_loop_direction(std::span<const double>(g), st);
    double slope = 0;
    for (std::size_t i = 0; i < n; ++i) slope += d[i] * g[i];
    EXPECT_LT(slope, 0.0);
  }
}

TEST(LBFGSState, CurvatureGuardAndEviction) {
  LBFGSState st(2);
  const std::vector<double> s{1.0, 0.0}, flat{0.0, 1.0};
  EXPECT_FALSE(st.push(std::span<const double>(s), std::span<const double>(flat)));
  EXPECT_EQ(st.size(), 0u);
  const std::vector<double> a{1.0, 0.0}, b{2.0, 0.0}, c{3.0, 0.0};
  st.push(std::span<const double>(a), std::span<const double>(a));
  st.push(std::span<const double>(b), std::span<const double>(b));
  st.push(std::span<const double>(c), std::span<const double>(c));
  ASSERT_EQ(st.size(), 2u);
  EXPECT_EQ(st.s.front()[0], 2.0);
  EXPECT_EQ(st.s.back()[0], 3.0);
  EXPECT_DOUBLE_EQ(st.rho.back(), 1.0 / 9.0);
}

TEST(Minimize, ShiftedQuadratic) {
  const auto a = fixture::random_vector(100, 5, -3.0, 3.0);
  const auto x0 = fixture::random_tensor<double>({100}, 6);
  const auto r = minimize([&](const Tensor<double>& x) { return shifted_quadratic(x, a); }, x0,
                          config(10, 30));
  double err = 0;
  for (std::size_t i = 0; i < 100; ++i) err += (r.x[i] - a[i]) * (r.x[i] - a[i]);
  EXPECT_LE(std::sqrt(err), 1e-6);
  EXPECT_TRUE(monotone_non_increasing(r.initial_loss, r.trace));
}

TEST(Minimize, ShiftedQuadraticF32) {
  const auto a = fixture::random_vector(50, 8, 0.0, 1.0);
  const auto x0 = fixture::random_tensor<float>({50}, 9, 0.0, 1.0);
  const auto r = minimize([&](const Tensor<float>& x) { return shifted_quadratic(x, a); }, x0,
                          config(10, 30));
  for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(r.x[i], a[i], 1e-5);
}

TEST(Minimize, Rosenbrock) {
  const Tensor<double> x0({2}, {-1.2, 1.0});
  const auto r = minimize(rosenbrock, x0, config(10, 200));
  EXPECT_LE(r.final_loss(), 1e-8);
  EXPECT_LE(r.iterations, 200);
  EXPECT_TRUE(monotone_non_increasing(r.initial_loss, r.trace));
}

TEST(Minimize, ConstantObjective) {
  const auto x0 = fixture::random_tensor<double>({10}, 3);
  auto constant = [](const Tensor<double>& x) { return Eval<double>{4.0, Tensor<double>(x.shape())}; };
  auto cfg = config(5, 4);
  const auto stopped = minimize(constant, x0, cfg);
  EXPECT_EQ(stopped.x, x0);
  EXPECT_EQ(stopped.reason, StopReason::grad_tol);

  cfg.grad_tol = -1.0;
  const auto r = minimize(constant, x0, cfg);
  EXPECT_EQ(r.x, x0);
  EXPECT_EQ(r.line_search_failures, 4);
  EXPECT_EQ(r.trace, (std::vector<double>{4.0, 4.0, 4.0, 4.0}));
}

TEST(Minimize, FailedLineSearchTakesZeroStep) {
  // Gradient with the wrong sign: every trial step goes uphill.
  auto liar = [](const Tensor<double>& x) {
    Eval<double> e{x[0] * x[0], Tensor<double>({1})};
    e.grad[0] = -2 * x[0];
    return e;
  };
  const Tensor<double> x0({1}, {1.0});
  auto cfg = config(3, 3);
  cfg.line_search.max_evals = 5;
  const auto r = minimize(liar, x0, cfg);
  EXPECT_EQ(r.x, x0);
  EXPECT_EQ(r.iterations, 3);
  EXPECT_EQ(r.line_search_failures, 3);
  EXPECT_EQ(r.evaluations, 1 + 3 * 5);
}

TEST(Minimize, HistoryBoundedAndCallbackPerIteration) {
  const auto x0 = fixture::random_tensor<double>({40}, 10, 0.1, 1.0);
  std::vector<IterationInfo> seen;
  const auto r = minimize(coupled_quartic, x0, config(3, 25),
                          [&](const IterationInfo& info, const Tensor<double>&) { seen.push_back(info); });
  ASSERT_EQ(static_cast<int>(seen.size()), r.iterations);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    EXPECT_EQ(seen[i].iter, static_cast<int>(i) + 1);
    EXPECT_LE(seen[i].history, 3u);
    EXPECT_EQ(seen[i].loss, r.trace[i]);
  }
  EXPECT_TRUE(monotone_non_increasing(r.initial_loss, r.trace));
}

TEST(Minimize, HostAndDeviceResidencyAgreeBitwise) {
  const auto x0 = fixture::random_tensor<double>({64}, 11, 0.1, 1.0);
  auto cfg = config(5, 40);
  const auto dev = minimize(coupled_quartic, x0, cfg);
  cfg.state_residency = Residency::host;
  const auto host = minimize(coupled_quartic, x0, cfg);
  EXPECT_EQ(dev.x, host.x);
  EXPECT_EQ(dev.trace, host.trace);
}

TEST(Minimize, NonFiniteLossCarriesLastFiniteX) {
  auto wall = [](const Tensor<double>& x) {
    Eval<double> e{x[0] < 1.0 ? (x[0] - 10) * (x[0] - 10) : std::numeric_limits<double>::infinity(),
                   Tensor<double>({1})};
    e.grad[0] = 2 * (x[0] - 10);
    return e;
  };
  try {
    minimize(wall, Tensor<double>({1}, {0.0}), config(3, 5));
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.last_finite_x(), std::vector<double>{0.0});
  }
}

TEST(Minimize, RejectsBadConfig) {
  auto cfg = config(0, 5);
  const Tensor<double> x0({2}, {0.0, 0.0});
  EXPECT_THROW(minimize(rosenbrock, x0, cfg), ConfigError);
  cfg = config(3, 5);
  cfg.line_search.c1 = 1.0;
  EXPECT_THROW(minimize(rosenbrock, x0, cfg), ConfigError);
}
