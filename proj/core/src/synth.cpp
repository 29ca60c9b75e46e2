#include "difficp/synth.hpp"

#include "difficp/random.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace difficp {

void SynthSpec::validate() const {
  kernel.validate();
  if (n_points < 1 || n_sets < 1 || components < 1 || control_points < 1 || steps < 1)
    throw std::invalid_argument("synthetic data counts must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("synthetic sigma must be positive");
  if (warp_strength && !(*warp_strength >= 0.0))
    throw std::invalid_argument("warp strength must be non-negative");
  if (!(displacement_factor >= 0.0))
    throw std::invalid_argument("displacement factor must be non-negative");
}

GmmModel default_generating_gmm(const SynthSpec& spec) {
  spec.validate();
  const int c = spec.components;
  const int d = spec.kernel.dim;
  GmmModel model;
  model.means = PointSet::Zero(c, d);
  const double radius = std::sqrt(0.5);
  for (int k = 0; k < c; ++k) {
    const double angle = std::numbers::pi / 4.0 + 2.0 * std::numbers::pi * k / c;
    model.means(k, 0) = radius * std::cos(angle);
    if (d > 1) model.means(k, 1) = radius * std::sin(angle);
  }
  model.weights = Vector::Constant(c, 1.0 / c);
  model.sigma = spec.sigma;
  return model;
}

PointSet sample_gmm(const GmmModel& model, int n, std::uint64_t seed) {
  model.validate();
  if (n < 0) throw std::invalid_argument("sample_gmm: negative sample count");
  Rng rng(seed);
  const int c = model.components();
  const int d = model.dim();
  PointSet out(n, d);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    int comp = c - 1;
    double acc = 0.0;
    for (int k = 0; k < c; ++k) {
      acc += model.weights[k];
      if (u < acc) {
        comp = k;
        break;
      }
    }
    for (int j = 0; j < d; ++j) out(i, j) = model.means(comp, j) + model.sigma * rng.normal();
  }
  return out;
}

RandomWarp random_diffeo(const SynthSpec& spec, std::uint64_t seed, const BoundingBox& box,
                         double strength) {
  spec.validate();
  const int m = spec.control_points;
  const int d = spec.kernel.dim;
  if (box.lower.size() != d || box.upper.size() != d)
    throw std::invalid_argument("random_diffeo: bounding box dimension mismatch");
  Rng rng(seed);
  PointSet controls(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) controls(i, j) = rng.uniform(box.lower[j], box.upper[j]);
  MomentumField momenta(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) momenta(i, j) = strength * rng.normal();

  // sigma and lambda do not influence the flow; beta = 0 keeps the warp a plain LDDMM geodesic.
  ShootingProblem problem(controls, controls, 1.0, 1.0, false, spec.kernel, spec.steps);
  GeodesicPath path = shoot(problem, momenta);
  return RandomWarp{std::move(problem), std::move(momenta), std::move(path), strength};
}

double calibrate_warp_strength(const SynthSpec& spec, std::uint64_t seed, const BoundingBox& box,
                               const PointSet& points, double target) {
  if (!(target > 0.0)) return 0.0;
  // A blown-up flow counts as overshooting the target.
  auto displacement = [&](double strength) {
    try {
      const auto warp = random_diffeo(spec, seed, box, strength);
      return (warp.apply(points).warped - points).rowwise().norm().mean();
    } catch (const IntegrationBlowup&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  double lo = 0.0;
  double hi = 0.1;
  for (int grow = 0; displacement(hi) < target; ++grow) {
    if (grow == 60) throw std::runtime_error("calibrate_warp_strength: target displacement unreachable");
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 50 && hi - lo > 1e-6 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (displacement(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SynthDataset generate_dataset(const SynthSpec& spec, Experiment experiment) {
  spec.validate();
  SynthDataset out;
  out.spec = spec;
  out.truth = default_generating_gmm(spec);
  const int count = experiment == Experiment::SingleSet ? 1 : spec.n_sets;
  const double target = spec.displacement_factor * spec.kernel.tau;
  out.sets.reserve(count);
  for (int k = 0; k < count; ++k) {
    const std::uint64_t sample_seed = stream_seed(spec.seed, 2 * static_cast<std::uint64_t>(k));
    const std::uint64_t warp_seed = stream_seed(spec.seed, 2 * static_cast<std::uint64_t>(k) + 1);
    PointSet latent = sample_gmm(out.truth, spec.n_points, sample_seed);
    const BoundingBox box = bounding_box(latent);
    const double strength = spec.warp_strength
                                ? *spec.warp_strength
                                : calibrate_warp_strength(spec, warp_seed, box, latent, target);
    RandomWarp warp = random_diffeo(spec, warp_seed, box, strength);
    PointSet points = warp.apply(latent).warped;
    out.sets.push_back({std::move(latent), std::move(points), std::move(warp)});
  }
  return out;
}

}  // namespace difficp
