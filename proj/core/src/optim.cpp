#include "difficp/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace difficp {

void OptimOptions::validate() const {
  if (max_iters < 1 || memory < 1 || max_line_search < 1)
    throw std::invalid_argument("optimizer iteration, memory and line-search budgets must be positive");
  if (!(grad_tol >= 0.0)) throw std::invalid_argument("gradient tolerance must be non-negative");
  if (!(0.0 < wolfe_c1 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0))
    throw std::invalid_argument("Wolfe constants must satisfy 0 < c1 < c2 < 1");
}

const char* to_string(OptimStatus status) {
  switch (status) {
    case OptimStatus::Converged: return "converged";
    case OptimStatus::MaxIters: return "max_iters";
    case OptimStatus::NoProgress: return "no_progress";
  }
  return "unknown";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Trial {
  double alpha = 0.0;
  double f = kInf;
  double slope = std::numeric_limits<double>::quiet_NaN();
  Vector x;
  Vector g;
};

class LineSearch {
 public:
  LineSearch(const Objective& objective, const OptimOptions& opts, int& evaluations)
      : objective_(objective), opts_(opts), evaluations_(evaluations) {}

  // Strong-Wolfe search along p from (x0, f0, g0). Returns false when no
  // acceptable step was found within the evaluation budget.
  bool run(const Vector& x0, double f0, const Vector& g0, const Vector& p, double alpha0, Trial& out) {
    x0_ = &x0;
    p_ = &p;
    f0_ = f0;
    slope0_ = g0.dot(p);
    budget_ = opts_.max_line_search;

    Trial prev;
    prev.alpha = 0.0;
    prev.f = f0;
    prev.slope = slope0_;
    double alpha = alpha0;
    for (bool first = true; budget_ > 0; first = false) {
      Trial cur = probe(alpha);
      if (!armijo(cur) || (!first && cur.f >= prev.f)) return zoom(prev, cur, out);
      if (std::abs(cur.slope) <= -opts_.wolfe_c2 * slope0_) {
        out = std::move(cur);
        return true;
      }
      if (cur.slope >= 0.0) return zoom(cur, prev, out);
      prev = std::move(cur);
      alpha *= 2.0;
    }
    return false;
  }

 private:
  Trial probe(double alpha) {
    --budget_;
    ++evaluations_;
    Trial t;
    t.alpha = alpha;
    t.x = *x0_ + alpha * *p_;
    t.g = Vector::Zero(t.x.size());
    try {
      t.f = objective_(t.x, t.g);
    } catch (const IntegrationBlowup&) {
      t.f = kInf;
    }
    if (!std::isfinite(t.f) || !t.g.allFinite()) {
      t.f = kInf;
      return t;
    }
    t.slope = t.g.dot(*p_);
    return t;
  }

  bool armijo(const Trial& t) const {
    return t.f <= f0_ + opts_.wolfe_c1 * t.alpha * slope0_;
  }

  static double interpolate(const Trial& lo, const Trial& hi) {
    const double a_lo = lo.alpha, a_hi = hi.alpha;
    const double mid = 0.5 * (a_lo + a_hi);
    if (!std::isfinite(hi.f) || !std::isfinite(hi.slope) || !std::isfinite(lo.slope)) return mid;
    const double d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a_lo - a_hi);
    const double disc = d1 * d1 - lo.slope * hi.slope;
    if (!(disc >= 0.0)) return mid;
    const double d2 = std::copysign(std::sqrt(disc), a_hi - a_lo);
    const double denom = hi.slope - lo.slope + 2.0 * d2;
    if (denom == 0.0) return mid;
    const double a = a_hi - (a_hi - a_lo) * (hi.slope + d2 - d1) / denom;
    const double left = std::min(a_lo, a_hi), right = std::max(a_lo, a_hi);
    const double margin = 0.1 * (right - left);
    if (!std::isfinite(a) || a < left + margin || a > right - margin) return mid;
    return a;
  }

  bool zoom(Trial lo, Trial hi, Trial& out) {
    while (budget_ > 0) {
      if (std::abs(hi.alpha - lo.alpha) <= 1e-14 * std::max(1.0, std::abs(lo.alpha))) return false;
      Trial cur = probe(interpolate(lo, hi));
      if (!armijo(cur) || cur.f >= lo.f) {
        hi = std::move(cur);
        continue;
      }
      if (std::abs(cur.slope) <= -opts_.wolfe_c2 * slope0_) {
        out = std::move(cur);
        return true;
      }
      if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
      lo = std::move(cur);
    }
    return false;
  }

  const Objective& objective_;
  const OptimOptions& opts_;
  int& evaluations_;
  const Vector* x0_ = nullptr;
  const Vector* p_ = nullptr;
  double f0_ = 0.0;
  double slope0_ = 0.0;
  int budget_ = 0;
};

struct Correction {
  Vector s;
  Vector y;
  double rho;
};

Vector two_loop_direction(const Vector& g, const std::deque<Correction>& memory) {
  Vector q = g;
  std::vector<double> alpha(memory.size());
  for (std::size_t i = memory.size(); i-- > 0;) {
    alpha[i] = memory[i].rho * memory[i].s.dot(q);
    q -= alpha[i] * memory[i].y;
  }
  if (!memory.empty()) {
    const auto& last = memory.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t i = 0; i < memory.size(); ++i) {
    const double b = memory[i].rho * memory[i].y.dot(q);
    q += (alpha[i] - b) * memory[i].s;
  }
  return -q;
}

}  // namespace

OptimResult lbfgs_minimize(const Objective& objective, Vector x0, const OptimOptions& opts) {
  opts.validate();
  OptimResult res;
  res.x = std::move(x0);
  res.gradient = Vector::Zero(res.x.size());
  res.value = objective(res.x, res.gradient);
  res.evaluations = 1;
  res.initial_value = res.value;
  if (!std::isfinite(res.value) || !res.gradient.allFinite())
    throw std::runtime_error("lbfgs_minimize: objective is not finite at the starting point");

  auto converged = [&] {
    return res.gradient.size() == 0 || res.gradient.lpNorm<Eigen::Infinity>() <= opts.grad_tol;
  };
  if (converged()) {
    res.status = OptimStatus::Converged;
    return res;
  }

  std::deque<Correction> memory;
  LineSearch search(objective, opts, res.evaluations);
  res.status = OptimStatus::MaxIters;
  while (res.iterations < opts.max_iters) {
    Vector p = two_loop_direction(res.gradient, memory);
    if (!(p.dot(res.gradient) < 0.0)) {
      memory.clear();
      p = -res.gradient;
    }
    double alpha0 = memory.empty() ? std::min(1.0, 1.0 / res.gradient.norm()) : 1.0;

    Trial step;
    if (!search.run(res.x, res.value, res.gradient, p, alpha0, step)) {
      if (memory.empty()) {
        res.status = OptimStatus::NoProgress;
        break;
      }
      memory.clear();
      p = -res.gradient;
      alpha0 = std::min(1.0, 1.0 / res.gradient.norm());
      if (!search.run(res.x, res.value, res.gradient, p, alpha0, step)) {
        res.status = OptimStatus::NoProgress;
        break;
      }
    }

    Correction c{step.x - res.x, step.g - res.gradient, 0.0};
    const double sy = c.s.dot(c.y);
    if (sy > std::numeric_limits<double>::epsilon() * c.y.squaredNorm()) {
      c.rho = 1.0 / sy;
      memory.push_back(std::move(c));
      if (static_cast<int>(memory.size()) > opts.memory) memory.pop_front();
    }
    res.x = std::move(step.x);
    res.gradient = std::move(step.g);
    res.value = step.f;
    ++res.iterations;
    if (converged()) {
      res.status = OptimStatus::Converged;
      break;
    }
  }
  return res;
}

}  // namespace difficp
