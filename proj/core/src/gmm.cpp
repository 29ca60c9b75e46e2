#include "difficp/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace difficp {

namespace {

constexpr double kSumTolerance = 1e-12;

void check_points(const GmmModel& model, const PointSet& points, const char* who) {
  if (points.cols() != model.dim())
    throw std::invalid_argument(std::string(who) + ": points have dimension " +
                                std::to_string(points.cols()) + ", model has " +
                                std::to_string(model.dim()));
}

void check_gamma(const Responsibilities& gamma, Eigen::Index n, Eigen::Index c, const char* who) {
  if (gamma.gamma.rows() != n || gamma.gamma.cols() != c)
    throw std::invalid_argument(std::string(who) + ": responsibilities have shape " +
                                std::to_string(gamma.gamma.rows()) + "x" +
                                std::to_string(gamma.gamma.cols()) + ", expected " +
                                std::to_string(n) + "x" + std::to_string(c));
}

// log(pi_c) - |z - mu_c|^2 / 2 sigma^2 for every component, and their log-sum-exp.
double component_logits(const GmmModel& model, const double* z, Eigen::Ref<Vector> logits) {
  const int d = model.dim();
  const double inv_two_s2 = 0.5 / (model.sigma * model.sigma);
  double best = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < model.components(); ++c) {
    double r2 = 0.0;
    for (int i = 0; i < d; ++i) {
      const double diff = z[i] - model.means(c, i);
      r2 += diff * diff;
    }
    logits[c] = std::log(model.weights[c]) - r2 * inv_two_s2;
    best = std::max(best, logits[c]);
  }
  double acc = 0.0;
  for (int c = 0; c < model.components(); ++c) acc += std::exp(logits[c] - best);
  return best + std::log(acc);
}

}  // namespace

void GmmModel::validate() const {
  if (means.rows() < 1) throw std::invalid_argument("GMM needs at least one component");
  if (means.cols() < 1) throw std::invalid_argument("GMM means have zero dimension");
  if (weights.size() != means.rows())
    throw std::invalid_argument("GMM has " + std::to_string(means.rows()) + " means but " +
                                std::to_string(weights.size()) + " weights");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::invalid_argument("GMM sigma must be positive and finite");
  if (!means.allFinite()) throw std::invalid_argument("GMM means must be finite");
  if ((weights.array() <= 0.0).any() || !weights.allFinite())
    throw std::invalid_argument("GMM weights must be positive");
  if (std::abs(weights.sum() - 1.0) > kSumTolerance)
    throw std::invalid_argument("GMM weights must sum to one");
}

double gmm_log_density(const GmmModel& model, std::span<const double> z) {
  if (static_cast<int>(z.size()) != model.dim())
    throw std::invalid_argument("gmm_log_density: point dimension mismatch");
  Vector logits(model.components());
  const double lse = component_logits(model, z.data(), logits);
  const double d = model.dim();
  return lse - 0.5 * d * std::log(2.0 * std::numbers::pi) - d * std::log(model.sigma);
}

double pullback_log_density(const GmmModel& model, std::span<const double> warped_point,
                            double log_jacobian) {
  return gmm_log_density(model, warped_point) + log_jacobian;
}

Responsibilities e_step(const GmmModel& model, const PointSet& warped_points) {
  check_points(model, warped_points, "e_step");
  const Eigen::Index n = warped_points.rows();
  const int c = model.components();
  Responsibilities out{Matrix(n, c)};
  Vector logits(c);
  for (Eigen::Index row = 0; row < n; ++row) {
    const double lse = component_logits(model, warped_points.row(row).data(), logits);
    for (int k = 0; k < c; ++k) out.gamma(row, k) = std::exp(logits[k] - lse);
  }
  return out;
}

double sigma_floor(const PointSet& points) {
  // Coincident points give a zero diagonal; keep the floor strictly positive.
  return std::max(1e-4 * bounding_box(points).diagonal(), std::numeric_limits<double>::min());
}

GmmModel m_step(const PointSet& warped_points, const Responsibilities& gamma,
                const GmmModel& current, UpdateFlags flags, EmptyComponentPolicy policy) {
  check_points(current, warped_points, "m_step");
  const Eigen::Index n = warped_points.rows();
  const int c = current.components();
  const int d = current.dim();
  check_gamma(gamma, n, c, "m_step");

  GmmModel next = current;
  if (!flags.any()) return next;

  const Vector mass = gamma.gamma.colwise().sum().transpose();
  std::vector<bool> empty(c, false);
  for (int k = 0; k < c; ++k) {
    if (!(mass[k] > 0.0)) {
      if (policy == EmptyComponentPolicy::Throw) throw DegenerateClustering(k);
      empty[k] = true;
    }
  }

  if (flags.means) {
    const PointSet weighted = gamma.gamma.transpose() * warped_points;
    for (int k = 0; k < c; ++k)
      if (!empty[k]) next.means.row(k) = weighted.row(k) / mass[k];
  }

  if (flags.sigma) {
    double scatter = 0.0;
    for (Eigen::Index row = 0; row < n; ++row)
      for (int k = 0; k < c; ++k)
        scatter += gamma.gamma(row, k) * (warped_points.row(row) - next.means.row(k)).squaredNorm();
    const double s2 = scatter / (static_cast<double>(d) * static_cast<double>(n));
    next.sigma = std::max(std::sqrt(s2), sigma_floor(warped_points));
  }

  if (flags.weights) {
    double kept = 0.0;
    for (int k = 0; k < c; ++k)
      if (empty[k]) kept += current.weights[k];
    const double scale = (1.0 - kept) / static_cast<double>(n);
    for (int k = 0; k < c; ++k)
      if (!empty[k]) next.weights[k] = mass[k] * scale;
  }
  return next;
}

PointSet barycentric_targets(const Responsibilities& gamma, const GmmModel& model) {
  if (gamma.gamma.cols() != model.components())
    throw std::invalid_argument("barycentric_targets: responsibility columns do not match components");
  return gamma.gamma * model.means;
}

FreeEnergyBreakdown free_energy(const Responsibilities& gamma, const GmmModel& model,
                                const PointSet& warped, const Vector& log_jacobians,
                                double prior_energy, double lambda) {
  check_points(model, warped, "free_energy");
  const Eigen::Index n = warped.rows();
  const int c = model.components();
  check_gamma(gamma, n, c, "free_energy");
  if (log_jacobians.size() != n)
    throw std::invalid_argument("free_energy: need one log-Jacobian per point");

  const double inv_two_s2 = 0.5 / (model.sigma * model.sigma);
  const double d_log_sigma = model.dim() * std::log(model.sigma);
  Vector log_w(c);
  for (int k = 0; k < c; ++k) log_w[k] = std::log(model.weights[k]);

  FreeEnergyBreakdown f;
  for (Eigen::Index row = 0; row < n; ++row) {
    for (int k = 0; k < c; ++k) {
      const double g = gamma.gamma(row, k);
      if (g == 0.0) continue;
      const double r2 = (warped.row(row) - model.means.row(k)).squaredNorm();
      f.data_term += g * (r2 * inv_two_s2 + d_log_sigma - log_w[k]);
      f.entropy_term += g * std::log(g);
    }
  }
  f.logdet_term = log_jacobians.sum();
  f.prior_term = lambda * prior_energy;
  f.total = f.data_term + f.entropy_term - f.logdet_term + f.prior_term;
  return f;
}

}  // namespace difficp
