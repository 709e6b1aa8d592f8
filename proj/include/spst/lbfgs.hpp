#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "spst/errors.hpp"
#include "spst/memory.hpp"
#include "spst/tensor.hpp"

namespace spst {

// Where the s/y history and the two-loop arithmetic live. Device state is
// kept in the iterate's precision next to x; host state is f64 in plain
// host memory and only x and grad cross over.
enum class Residency { device, host };

inline const char* residency_name(Residency r) { return r == Residency::host ? "host" : "device"; }

struct LineSearchParams {
  double c1 = 1e-4;
  double shrink = 0.5;
  int max_evals = 20;
};

struct LBFGSConfig {
  int history_size = 10;
  int max_iters = 100;
  LineSearchParams line_search;
  double grad_tol = 0.0;
  Residency state_residency = Residency::device;

  void validate() const {
    if (history_size < 1) throw ConfigError("history_size must be >= 1");
    if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
    if (!(line_search.c1 > 0.0 && line_search.c1 < 1.0)) throw ConfigError("c1 must lie in (0, 1)");
    if (!(line_search.shrink > 0.0 && line_search.shrink < 1.0)) {
      throw ConfigError("line search shrink must lie in (0, 1)");
    }
    if (line_search.max_evals < 1) throw ConfigError("line search needs at least one evaluation");
  }
};

template <typename S, typename Alloc = std::allocator<S>>
struct BasicLBFGSState {
  using Vec = std::vector<S, Alloc>;

  explicit BasicLBFGSState(int m = 10) : capacity(m) {}

  int capacity;
  std::deque<Vec> s;
  std::deque<Vec> y;
  std::deque<double> rho;
  int iter = 0;

  std::size_t size() const { return s.size(); }
  bool empty() const { return s.empty(); }

  // Adds (s, y) unless the curvature guard rejects it. Evicts the oldest pair
  // once the history is full.
  template <typename A, typename B>
  bool push(std::span<const A> sk, std::span<const B> yk) {
    double sy = 0.0, ss = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < sk.size(); ++i) {
      const double a = sk[i], b = yk[i];
      sy += a * b;
      ss += a * a;
      yy += b * b;
    }
    if (!(sy > 1e-10 * std::sqrt(ss) * std::sqrt(yy))) return false;
    if (static_cast<int>(s.size()) == capacity) drop_oldest();
    s.emplace_back(sk.begin(), sk.end());
    y.emplace_back(yk.begin(), yk.end());
    rho.push_back(1.0 / sy);
    return true;
  }

  void drop_oldest() {
    if (s.empty()) return;
    s.pop_front();
    y.pop_front();
    rho.pop_front();
  }

  void clear() {
    s.clear();
    y.clear();
    rho.clear();
  }
};

using LBFGSState = BasicLBFGSState<double>;

namespace detail {

template <typename A, typename B>
double dotd(const A& a, const B& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

}  // namespace detail

// -H grad by the two-loop recursion, H0 = gamma I with gamma from the newest pair.
template <typename S, typename Alloc, typename G>
std::vector<S, Alloc> two_loop_direction(std::span<const G> grad,
                                         const BasicLBFGSState<S, Alloc>& st) {
  std::vector<S, Alloc> q(grad.begin(), grad.end());
  const std::size_t k = st.size();
  std::vector<double> alpha(k);
  for (std::size_t i = k; i-- > 0;) {
    alpha[i] = st.rho[i] * detail::dotd(st.s[i], q);
    for (std::size_t j = 0; j < q.size(); ++j) q[j] -= static_cast<S>(alpha[i] * st.y[i][j]);
  }
  double gamma = 1.0;
  if (k > 0) gamma = 1.0 / (st.rho[k - 1] * detail::dotd(st.y[k - 1], st.y[k - 1]));
  for (auto& v : q) v = static_cast<S>(gamma * v);
  for (std::size_t i = 0; i < k; ++i) {
    const double beta = st.rho[i] * detail::dotd(st.y[i], q);
    for (std::size_t j = 0; j < q.size(); ++j) {
      q[j] += static_cast<S>((alpha[i] - beta) * st.s[i][j]);
    }
  }
  for (auto& v : q) v = -v;
  return q;
}

enum class StopReason { max_iters, grad_tol };

struct IterationInfo {
  int iter = 0;  // 1-based
  double loss = 0.0;
  double grad_norm = 0.0;  // infinity norm
  double step = 0.0;       // accepted step length, 0 after a failed line search
  int evals = 0;
  std::size_t history = 0;
};

template <typename T>
struct MinimizeResult {
  Tensor<T> x;
  double initial_loss = 0.0;
  std::vector<double> trace;  // loss after each iteration
  int iterations = 0;
  int evaluations = 0;
  int line_search_failures = 0;
  std::size_t history = 0;
  StopReason reason = StopReason::max_iters;

  double final_loss() const { return trace.empty() ? initial_loss : trace.back(); }
};

template <typename T>
using IterationCallback = std::function<void(const IterationInfo&, const Tensor<T>&)>;

inline bool monotone_non_increasing(double start, const std::vector<double>& trace) {
  double prev = start;
  for (double v : trace) {
    if (v > prev) return false;
    prev = v;
  }
  return true;
}

namespace detail {

template <typename T>
double inf_norm(std::span<const T> g) {
  double m = 0.0;
  for (T v : g) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

template <typename T, typename State, typename F>
MinimizeResult<T> run_lbfgs(F& f, const Tensor<T>& x0, const LBFGSConfig& cfg,
                            const IterationCallback<T>& callback, State& state) {
  using S = typename State::Vec::value_type;

  MinimizeResult<T> out;
  Tensor<T> x = x0;
  auto first = f(x);
  ++out.evaluations;
  if (!std::isfinite(first.loss)) {
    throw NonFiniteError("objective is not finite at the starting point", to_doubles(x));
  }
  double loss = first.loss;
  Tensor<T> grad = std::move(first.grad);
  out.initial_loss = loss;
  const std::size_t n = x.size();

  for (int it = 1; it <= cfg.max_iters; ++it) {
    const double gnorm = inf_norm<T>(grad.values());
    if (gnorm <= cfg.grad_tol) {
      out.reason = StopReason::grad_tol;
      break;
    }

    auto dir = two_loop_direction(std::span<const T>(grad.values()), state);
    double slope = dotd(dir, grad.values());
    if (state.empty() || !(slope < 0.0)) {
      // First step, or a stale history that no longer gives descent.
      state.clear();
      dir.assign(grad.values().begin(), grad.values().end());
      const double scale = gnorm > 0.0 ? 1.0 / gnorm : 0.0;
      for (auto& v : dir) v = static_cast<S>(-scale * v);
      slope = dotd(dir, grad.values());
    }

    IterationInfo info;
    info.iter = it;
    double t = 1.0;
    bool accepted = false;
    Tensor<T> trial(x.shape());
    if (slope < 0.0) {
      for (int e = 0; e < cfg.line_search.max_evals; ++e) {
        for (std::size_t i = 0; i < n; ++i) trial[i] = static_cast<T>(x[i] + t * dir[i]);
        auto r = f(trial);
        ++out.evaluations;
        ++info.evals;
        if (!std::isfinite(r.loss)) {
          throw NonFiniteError("objective became non-finite at iteration " + std::to_string(it),
                               to_doubles(x));
        }
        if (r.loss <= loss + cfg.line_search.c1 * t * slope) {
          std::vector<S> sk(n), yk(n);
          for (std::size_t i = 0; i < n; ++i) {
            sk[i] = static_cast<S>(static_cast<double>(trial[i]) - static_cast<double>(x[i]));
            yk[i] = static_cast<S>(static_cast<double>(r.grad[i]) - static_cast<double>(grad[i]));
          }
          state.push(std::span<const S>(sk), std::span<const S>(yk));
          x = std::move(trial);
          grad = std::move(r.grad);
          loss = r.loss;
          accepted = true;
          break;
        }
        t *= cfg.line_search.shrink;
      }
    }
    if (!accepted) {
      ++out.line_search_failures;
      state.drop_oldest();
      t = 0.0;
    }

    ++state.iter;
    out.iterations = it;
    out.trace.push_back(loss);
    info.loss = loss;
    info.grad_norm = inf_norm<T>(grad.values());
    info.step = t;
    info.history = state.size();
    if (callback) callback(info, x);
  }

  out.history = state.size();
  out.x = std::move(x);
  return out;
}

}  // namespace detail

// Minimizes f(x) -> {loss, grad} from x0. The loss trace never increases.
template <typename T, typename F>
MinimizeResult<T> minimize(F&& f, const Tensor<T>& x0, const LBFGSConfig& cfg,
                           const std::type_identity_t<IterationCallback<T>>& callback = {}) {
  cfg.validate();
  if (cfg.state_residency == Residency::host) {
    LBFGSState state(cfg.history_size);
    return detail::run_lbfgs(f, x0, cfg, callback, state);
  }
  BasicLBFGSState<T, memory::TrackedAllocator<T>> state(cfg.history_size);
  return detail::run_lbfgs(f, x0, cfg, callback, state);
}

}  // namespace spst
