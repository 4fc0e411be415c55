#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace nmrf {

struct LbfgsOptions {
  int max_iters = 200;
  /// Number of stored curvature pairs; 0 gives scaled gradient descent.
  int memory = 10;
  /// Stop once the largest gradient component falls below this.
  double tolerance = 1e-6;
  double armijo_c1 = 1e-4;
  int max_line_search = 20;
};

enum class StopReason { kMaxIterations, kGradientTolerance, kLineSearchFailure };

std::string_view to_string(StopReason r);

/// Writes the gradient at `x` into `grad` and returns the energy.
using EnergyFunction = std::function<double(std::span<const double> x, std::span<double> grad)>;
/// Called after every accepted step with the iteration number (from 1).
using IterationCallback = std::function<void(int iteration, double energy)>;

struct LbfgsResult {
  std::vector<double> x;
  /// Energy at x0 followed by the energy after each accepted step.
  std::vector<double> trace;
  int iterations = 0;
  int evaluations = 0;
  StopReason reason = StopReason::kMaxIterations;
};

/// Limited-memory BFGS with an Armijo backtracking line search.
/// Throws OptimizationError if f produces a non-finite energy or gradient.
LbfgsResult minimize(const EnergyFunction& f, std::vector<double> x0, const LbfgsOptions& opts = {},
                     const IterationCallback& on_iteration = {});

}  // namespace nmrf
