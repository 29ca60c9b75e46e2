#pragma once

#include "difficp/types.hpp"

#include <functional>

namespace difficp {

struct OptimOptions {
  int max_iters = 100;
  double grad_tol = 1e-6;  ///< infinity-norm threshold on the gradient
  int memory = 10;         ///< number of stored (s, y) correction pairs
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_line_search = 20;

  void validate() const;
};

enum class OptimStatus { Converged, MaxIters, NoProgress };

const char* to_string(OptimStatus status);

struct OptimResult {
  Vector x;
  double value = 0.0;
  double initial_value = 0.0;
  Vector gradient;
  OptimStatus status = OptimStatus::NoProgress;
  int iterations = 0;
  int evaluations = 0;
};

/// Returns f(x) and writes the gradient into `grad` (already sized like x).
/// May throw IntegrationBlowup; inside the line search that is read as f = +inf.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

/// Limited-memory BFGS with a strong-Wolfe line search.
///
/// Every accepted step satisfies both Wolfe conditions, so the returned value
/// never exceeds f(x0). When a line search fails the curvature memory is
/// dropped and a steepest-descent step is tried; a second consecutive failure
/// ends the run with NoProgress.
OptimResult lbfgs_minimize(const Objective& objective, Vector x0, const OptimOptions& opts = {});

}  // namespace difficp
