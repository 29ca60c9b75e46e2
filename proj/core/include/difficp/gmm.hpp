#pragma once

#include "difficp/types.hpp"

#include <span>

namespace difficp {

/// Isotropic Gaussian mixture with one shared variance sigma^2.
struct GmmModel {
  PointSet means;  ///< C x d centroids
  Vector weights;  ///< C mixing weights, positive, summing to one
  double sigma = 1.0;

  int components() const noexcept { return static_cast<int>(means.rows()); }
  int dim() const noexcept { return static_cast<int>(means.cols()); }

  /// Throws std::invalid_argument when the model breaks its invariants.
  void validate() const;
};

/// N x C row-stochastic matrix of posterior assignment probabilities.
struct Responsibilities {
  Matrix gamma;
};

struct UpdateFlags {
  bool sigma = false;
  bool means = false;
  bool weights = false;

  bool any() const noexcept { return sigma || means || weights; }
  static UpdateFlags all() { return {true, true, true}; }
};

enum class EmptyComponentPolicy {
  Throw,        ///< raise DegenerateClustering
  KeepPrevious  ///< leave that component's mean and weight as they were
};

/// Terms of the EM free energy. total = data + entropy - logdet + prior.
struct FreeEnergyBreakdown {
  double data_term = 0.0;     ///< sum gamma (|z - mu|^2 / 2 sigma^2 + log(sigma^d / pi))
  double entropy_term = 0.0;  ///< sum gamma log gamma, with 0 log 0 = 0
  double logdet_term = 0.0;   ///< sum_n log det D psi(x_n)
  double prior_term = 0.0;    ///< lambda * D_G(psi)
  double total = 0.0;
};

/// log f(z) of the mixture, via log-sum-exp over components.
double gmm_log_density(const GmmModel& model, std::span<const double> z);

/// Pullback density of the mixture through a warp: log f(psi(x)) + log det D psi(x).
double pullback_log_density(const GmmModel& model, std::span<const double> warped_point,
                            double log_jacobian);

Responsibilities e_step(const GmmModel& model, const PointSet& warped_points);

/// Lower bound on sigma: 1e-4 times the bounding-box diagonal of the points.
double sigma_floor(const PointSet& points);

/// Closed-form parameter updates for the flagged parameters. Means are updated
/// first, then sigma against the new means, then the weights.
GmmModel m_step(const PointSet& warped_points, const Responsibilities& gamma,
                const GmmModel& current, UpdateFlags flags,
                EmptyComponentPolicy policy = EmptyComponentPolicy::Throw);

/// y_n = sum_c gamma_nc mu_c.
PointSet barycentric_targets(const Responsibilities& gamma, const GmmModel& model);

/// EM free energy at (gamma, model, warp). `log_jacobians` holds log det D psi at
/// each data point and `prior_energy` is D_G(psi); the prior term is lambda * D_G.
FreeEnergyBreakdown free_energy(const Responsibilities& gamma, const GmmModel& model,
                                const PointSet& warped, const Vector& log_jacobians,
                                double prior_energy, double lambda);

}  // namespace difficp
