#pragma once

#include "difficp/kernel.hpp"
#include "difficp/optim.hpp"
#include "difficp/types.hpp"

#include <vector>

namespace difficp {

/// Landmark shooting problem: push `source` along a geodesic so that its
/// endpoints land near `targets`.
///
/// beta is 1/lambda when the log-Jacobian term is part of the model and 0 for
/// classic landmark matching; no other value can be constructed.
class ShootingProblem {
 public:
  ShootingProblem(PointSet source, PointSet targets, double sigma, double lambda, bool use_logdet,
                  KernelParams kernel, int steps = 10);

  const PointSet& source() const noexcept { return source_; }
  const PointSet& targets() const noexcept { return targets_; }
  double sigma() const noexcept { return sigma_; }
  double lambda() const noexcept { return lambda_; }
  double beta() const noexcept { return beta_; }
  bool use_logdet() const noexcept { return beta_ > 0.0; }
  const KernelParams& kernel() const noexcept { return kernel_; }
  int steps() const noexcept { return steps_; }
  int size() const noexcept { return static_cast<int>(source_.rows()); }
  int dim() const noexcept { return static_cast<int>(source_.cols()); }

  /// Same problem with new targets (and optionally a new sigma).
  ShootingProblem with_targets(PointSet targets, double sigma) const;

 private:
  PointSet source_;
  PointSet targets_;
  double sigma_;
  double lambda_;
  double beta_;
  KernelParams kernel_;
  int steps_;
};

/// Discrete geodesic produced by Ralston integration of the landmark Hamiltonian system.
struct GeodesicPath {
  std::vector<double> times;            ///< S+1 grid times from 0 to 1
  std::vector<PointSet> q;              ///< landmark positions at each grid time
  std::vector<MomentumField> a;         ///< momenta at each grid time
  std::vector<PointSet> q_stage;        ///< second Ralston stage, one per step
  std::vector<MomentumField> a_stage;
  Vector logdet;                        ///< accumulated integral of div v along each trajectory
  double reg_integral = 0.0;            ///< integral of sum_{m,n} [(a_m.a_n) K + beta^2 Lap K]
  double hamiltonian_quadrature = 0.0;  ///< time integral of H with the integrator's weights
  std::vector<double> hamiltonian_trace;
  double beta = 0.0;

  int steps() const noexcept { return static_cast<int>(times.size()) - 1; }
  const PointSet& endpoints() const { return q.back(); }
  const MomentumField& initial_momenta() const { return a.front(); }

  /// max_s |H(t_s) - H(0)| / |H(0)| (0 when H(0) vanishes).
  double relative_hamiltonian_drift() const;
};

/// H(q, a) = 1/2 sum_{n,m} [(a_m.a_n) K + beta (a_n - a_m).grad K - beta^2 Lap K](q_m - q_n).
double hamiltonian(const PointSet& q, const MomentumField& a, double beta, const KernelParams& kernel);

struct HamiltonianGradients {
  MomentumField dH_da;
  PointSet dH_dq;
};

HamiltonianGradients hamiltonian_grads(const PointSet& q, const MomentumField& a, double beta,
                                       const KernelParams& kernel);

/// The three state functions tied together by the log-Jacobian energy identity:
/// (lambda/2) reg_integrand == lambda H - divergence_sum whenever beta = 1/lambda.
struct EnergyIdentityTerms {
  double reg_integrand = 0.0;   ///< sum_{m,n} [(a_m.a_n) K + beta^2 Lap K](q_m - q_n)
  double hamiltonian = 0.0;
  double divergence_sum = 0.0;  ///< sum_n div v(q_n)
};

EnergyIdentityTerms energy_identity_terms(const PointSet& q, const MomentumField& a, double beta,
                                          const KernelParams& kernel);

/// Integrates the geodesic from (source, a0) with Ralston's RK2 over problem.steps() steps.
/// Throws IntegrationBlowup if any coordinate or momentum leaves [-1e6, 1e6] or turns non-finite.
GeodesicPath shoot(const ShootingProblem& problem, const MomentumField& a0);

struct FlowResult {
  PointSet warped;
  Vector logdet;
};

/// Transports arbitrary points through the velocity field stored in `path`,
/// accumulating log det of the warp's Jacobian along the way.
FlowResult flow_apply(const GeodesicPath& path, const ShootingProblem& problem, const PointSet& z);

struct ShootingEnergy {
  double energy = 0.0;
  double data_term = 0.0;
  GeodesicPath path;
};

/// E(a0) = sum_n |q_n(1) - y_n|^2 / 2 sigma^2 + (lambda/2) reg_integral.
ShootingEnergy shooting_energy(const ShootingProblem& problem, const MomentumField& a0);

struct ShootingGradient {
  double energy = 0.0;
  MomentumField grad;
  GeodesicPath path;
};

/// Energy and its exact gradient for the Ralston-discretized problem, by a
/// reverse sweep through the integrator.
ShootingGradient shooting_energy_grad(const ShootingProblem& problem, const MomentumField& a0);

struct LandmarkRegistration {
  MomentumField a0;
  GeodesicPath path;
  double energy = 0.0;
  OptimStatus status = OptimStatus::NoProgress;
  bool no_progress = false;  ///< optimizer could not decrease E at all
  int iterations = 0;
};

/// Minimizes E(a0) with L-BFGS starting from `a0_init`. With beta = 0 this is
/// classic LDDMM landmark matching.
LandmarkRegistration register_landmarks(const ShootingProblem& problem, const MomentumField& a0_init,
                                        const OptimOptions& opts = {});

}  // namespace difficp
