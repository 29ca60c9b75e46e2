#pragma once

#include "difficp/geodesic.hpp"
#include "difficp/gmm.hpp"
#include "difficp/kernel.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace difficp {

struct SynthSpec {
  std::uint64_t seed = 0;
  int n_points = 100;
  int n_sets = 10;
  int components = 4;
  double sigma = 0.1;
  /// Std-dev of the control-point momenta. Unset means: calibrate each warp so
  /// its mean displacement over the set is displacement_factor * tau.
  std::optional<double> warp_strength;
  double displacement_factor = 2.0;
  KernelParams kernel{0.2, 2};
  int control_points = 20;
  int steps = 160;  ///< time steps for the ground-truth warp, finer than registration uses

  void validate() const;
};

enum class Experiment {
  SingleSet,  ///< one warped set drawn from a known mixture
  MultiSet    ///< n_sets independently warped sets sharing one mixture
};

/// Ground-truth diffeomorphism: a geodesic with random momenta on random
/// control points, shot without the log-Jacobian term.
struct RandomWarp {
  ShootingProblem problem;
  MomentumField momenta;
  GeodesicPath path;
  double strength = 0.0;

  PointSet control_points() const { return problem.source(); }
  FlowResult apply(const PointSet& z) const { return flow_apply(path, problem, z); }
};

/// Components evenly spaced on the circle of radius sqrt(1/2) starting at 45
/// degrees (so C = 4 gives (+-0.5, +-0.5)); uniform weights. Extra dimensions are zero.
GmmModel default_generating_gmm(const SynthSpec& spec);

PointSet sample_gmm(const GmmModel& model, int n, std::uint64_t seed);

/// Control points uniform in `box`, momenta i.i.d. Normal(0, strength^2).
RandomWarp random_diffeo(const SynthSpec& spec, std::uint64_t seed, const BoundingBox& box,
                         double strength);

/// Strength at which random_diffeo(spec, seed, box, .) moves `points` by
/// `target` on average, found by bisection.
double calibrate_warp_strength(const SynthSpec& spec, std::uint64_t seed, const BoundingBox& box,
                               const PointSet& points, double target);

struct SynthSet {
  PointSet latent;  ///< samples from the mixture before warping
  PointSet points;  ///< observed, warped samples
  RandomWarp warp;
};

struct SynthDataset {
  SynthSpec spec;
  GmmModel truth;
  std::vector<SynthSet> sets;
};

/// Set k draws its samples from stream 2k and its warp from stream 2k+1 of spec.seed.
SynthDataset generate_dataset(const SynthSpec& spec, Experiment experiment);

}  // namespace difficp
