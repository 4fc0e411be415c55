#include "neuralmrf/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <string>

#include "neuralmrf/error.hpp"

namespace nmrf {

namespace {

constexpr double kMinCurvature = 1e-10;

struct CurvaturePair {
  std::vector<double> s;
  std::vector<double> y;
  double rho = 0.0;
};

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

bool all_finite(std::span<const double> v) {
  return std::ranges::all_of(v, [](double x) { return std::isfinite(x); });
}

// Two-loop recursion: returns -H * g.
std::vector<double> direction(const std::deque<CurvaturePair>& history, std::span<const double> g,
                              double gamma) {
  std::vector<double> q(g.begin(), g.end());
  std::vector<double> alpha(history.size());
  for (std::size_t i = history.size(); i-- > 0;) {
    const auto& p = history[i];
    alpha[i] = p.rho * dot(p.s, q);
    for (std::size_t j = 0; j < q.size(); ++j) q[j] -= alpha[i] * p.y[j];
  }
  for (double& v : q) v *= gamma;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& p = history[i];
    const double beta = p.rho * dot(p.y, q);
    for (std::size_t j = 0; j < q.size(); ++j) q[j] += (alpha[i] - beta) * p.s[j];
  }
  for (double& v : q) v = -v;
  return q;
}

}  // namespace

std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::kMaxIterations:
      return "max-iterations";
    case StopReason::kGradientTolerance:
      return "gradient-tolerance";
    case StopReason::kLineSearchFailure:
      return "line-search-failure";
  }
  return "unknown";
}

LbfgsResult minimize(const EnergyFunction& f, std::vector<double> x0, const LbfgsOptions& opts,
                     const IterationCallback& on_iteration) {
  if (opts.max_iters < 1) throw ConfigError("L-BFGS needs max_iters >= 1");
  if (opts.memory < 0) throw ConfigError("L-BFGS memory must be >= 0");

  LbfgsResult res;
  const std::size_t n = x0.size();
  std::vector<double> x = std::move(x0);
  std::vector<double> g(n);

  const auto eval = [&](std::span<const double> at, std::span<double> grad, int iteration) {
    const double e = f(at, grad);
    ++res.evaluations;
    if (!std::isfinite(e) || !all_finite(grad)) {
      throw OptimizationError("non-finite energy or gradient at iteration " +
                              std::to_string(iteration));
    }
    return e;
  };

  double energy = eval(x, g, 0);
  res.trace.push_back(energy);
  res.reason = StopReason::kMaxIterations;
  if (max_abs(g) < opts.tolerance) {
    res.reason = StopReason::kGradientTolerance;
    res.x = std::move(x);
    return res;
  }

  std::deque<CurvaturePair> history;
  double gamma = 0.0;
  std::vector<double> x_new(n);
  std::vector<double> g_new(n);

  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    std::vector<double> d;
    if (gamma > 0.0) {
      d = direction(history, g, gamma);
    }
    double slope = d.empty() ? 0.0 : dot(g, d);
    if (d.empty() || !(slope < 0.0)) {
      // No curvature information yet (or a non-descent direction): unit-length
      // steepest descent step.
      history.clear();
      const double scale = gamma > 0.0 ? gamma : 1.0 / std::sqrt(dot(g, g));
      d.assign(n, 0.0);
      for (std::size_t j = 0; j < n; ++j) d[j] = -scale * g[j];
      slope = dot(g, d);
    }

    double step = 1.0;
    double e_new = 0.0;
    bool accepted = false;
    for (int trial = 0; trial < opts.max_line_search; ++trial) {
      for (std::size_t j = 0; j < n; ++j) x_new[j] = x[j] + step * d[j];
      e_new = eval(x_new, g_new, iter);
      if (e_new <= energy + opts.armijo_c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.reason = StopReason::kLineSearchFailure;
      break;
    }

    CurvaturePair pair{std::vector<double>(n), std::vector<double>(n), 0.0};
    for (std::size_t j = 0; j < n; ++j) {
      pair.s[j] = x_new[j] - x[j];
      pair.y[j] = g_new[j] - g[j];
    }
    const double sy = dot(pair.s, pair.y);
    if (sy > kMinCurvature) {
      gamma = sy / dot(pair.y, pair.y);
      if (opts.memory > 0) {
        pair.rho = 1.0 / sy;
        history.push_back(std::move(pair));
        if (static_cast<int>(history.size()) > opts.memory) history.pop_front();
      }
    }

    std::swap(x, x_new);
    std::swap(g, g_new);
    energy = e_new;
    res.trace.push_back(energy);
    res.iterations = iter;
    if (on_iteration) on_iteration(iter, energy);
    if (max_abs(g) < opts.tolerance) {
      res.reason = StopReason::kGradientTolerance;
      break;
    }
  }
  res.x = std::move(x);
  return res;
}

}  // namespace nmrf
