#pragma once

#include "difficp/geodesic.hpp"
#include "difficp/gmm.hpp"
#include "difficp/kernel.hpp"
#include "difficp/optim.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace difficp {

struct RegistrationConfig {
  KernelParams kernel{0.2, 2};
  double lambda = 500.0;
  int steps = 10;
  bool use_logdet = true;   ///< false gives classic landmark matching (beta = 0)
  UpdateFlags optimize{};   ///< GMM parameters updated by register_to_gmm
  int max_outer = 50;
  double ftol = 1e-6;       ///< relative change of the objective that ends the loop
  int em_inner_loops = 10;  ///< E/M passes per atlas outer iteration
  OptimOptions optim{};
  int threads = 1;          ///< worker threads for per-set shooting in build_atlas
  std::uint64_t init_seed = 0;  ///< k-means++ seed for the atlas GMM

  void validate() const;
};

enum class RegistrationStatus { Converged, MaxOuter };

const char* to_string(RegistrationStatus status);

/// Raised when a warp update blows up; carries where it happened.
class RegistrationError : public std::runtime_error {
 public:
  RegistrationError(const std::string& what, int iteration, int set_index, double momenta_norm)
      : std::runtime_error(what),
        iteration_(iteration),
        set_index_(set_index),
        momenta_norm_(momenta_norm) {}
  int iteration() const noexcept { return iteration_; }
  int set_index() const noexcept { return set_index_; }  ///< -1 for single-set registration
  double momenta_norm() const noexcept { return momenta_norm_; }

 private:
  int iteration_;
  int set_index_;
  double momenta_norm_;
};

struct RegistrationResult {
  MomentumField momenta;
  GeodesicPath path;
  Responsibilities gamma;
  GmmModel model;
  std::vector<FreeEnergyBreakdown> free_energy_history;  ///< entry 0 is the starting state
  std::vector<double> residual_history;  ///< mean |psi(x_n) - y_n| at the same states
  RegistrationStatus status = RegistrationStatus::MaxOuter;
  int outer_iterations = 0;
};

/// Registers one point set to a mixture: E-step, optional M-step, then a
/// warm-started shooting update of the warp, until the free energy settles.
RegistrationResult register_to_gmm(const PointSet& points, const GmmModel& model,
                                   const RegistrationConfig& config);

struct AtlasSetResult {
  MomentumField momenta;
  GeodesicPath path;
  Responsibilities gamma;
};

struct AtlasResult {
  GmmModel model;
  GmmModel initial_model;
  std::vector<AtlasSetResult> per_set;
  std::vector<double> objective_history;  ///< entry 0 is the starting state
  RegistrationStatus status = RegistrationStatus::MaxOuter;
  int outer_iterations = 0;
};

/// Builds a shared mixture ("atlas") for several point sets, each with its own
/// warp. All mixture parameters are estimated; config.optimize is not consulted.
AtlasResult build_atlas(const std::vector<PointSet>& sets, int components,
                        const RegistrationConfig& config);

/// k-means++ seeding and 10 Lloyd passes on the pooled points; uniform weights
/// and the hard-assignment sigma.
GmmModel initial_atlas_model(const PointSet& pooled, int components, std::uint64_t seed);

/// `loops` passes of E-step then full M-step on the pooled warped points.
GmmModel atlas_stage1(const PointSet& pooled_warped, GmmModel model, int loops);

/// Negative log posterior over all sets:
/// sum_k [ lambda D_G(psi_k) - sum_n log f*(x_n^k | psi_k, theta) ].
/// The log-Jacobian enters only when config.use_logdet is set.
double total_objective(const std::vector<PointSet>& sets, const std::vector<GeodesicPath>& paths,
                       const GmmModel& model, const RegistrationConfig& config);

/// Stacks point sets row-wise.
PointSet pool(const std::vector<PointSet>& sets);

}  // namespace difficp
