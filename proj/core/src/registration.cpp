#include "difficp/registration.hpp"

#include "difficp/random.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

namespace difficp {

void RegistrationConfig::validate() const {
  kernel.validate();
  optim.validate();
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (steps < 1) throw std::invalid_argument("steps must be at least 1");
  if (max_outer < 1) throw std::invalid_argument("max_outer must be at least 1");
  if (!(ftol >= 0.0)) throw std::invalid_argument("ftol must be non-negative");
  if (em_inner_loops < 1) throw std::invalid_argument("em_inner_loops must be at least 1");
  if (threads < 1) throw std::invalid_argument("threads must be at least 1");
}

const char* to_string(RegistrationStatus status) {
  return status == RegistrationStatus::Converged ? "converged" : "max_outer";
}

namespace {

bool settled(double previous, double current, double ftol) {
  return std::abs(previous - current) <= ftol * std::max(1.0, std::abs(previous));
}

GmmModel robust_m_step(const PointSet& warped, const Responsibilities& gamma, const GmmModel& model,
                       UpdateFlags flags) {
  try {
    return m_step(warped, gamma, model, flags);
  } catch (const DegenerateClustering&) {
    return m_step(warped, gamma, model, flags, EmptyComponentPolicy::KeepPrevious);
  }
}

Vector model_log_jacobians(const GeodesicPath& path, const RegistrationConfig& config) {
  return config.use_logdet ? path.logdet : Vector::Zero(path.logdet.size());
}

double mean_residual(const PointSet& warped, const PointSet& targets) {
  return (warped - targets).rowwise().norm().mean();
}

void check_inputs(const PointSet& points, const RegistrationConfig& config, const char* who) {
  if (points.rows() < 1) throw std::invalid_argument(std::string(who) + ": empty point set");
  if (points.cols() != config.kernel.dim)
    throw std::invalid_argument(std::string(who) + ": points have dimension " +
                                std::to_string(points.cols()) + " but kernel expects " +
                                std::to_string(config.kernel.dim));
}

GeodesicPath initial_shoot(const ShootingProblem& problem, const MomentumField& a0, int set_index) {
  try {
    return shoot(problem, a0);
  } catch (const IntegrationBlowup& e) {
    std::ostringstream msg;
    msg << "initial flow failed";
    if (set_index >= 0) msg << " for set " << set_index;
    msg << ": " << e.what();
    throw RegistrationError(msg.str(), 0, set_index, a0.norm());
  }
}

LandmarkRegistration warp_update(const ShootingProblem& problem, const MomentumField& a0,
                                 const RegistrationConfig& config, int iteration, int set_index) {
  try {
    return register_landmarks(problem, a0, config.optim);
  } catch (const IntegrationBlowup& e) {
    std::ostringstream msg;
    msg << "warp update failed at outer iteration " << iteration;
    if (set_index >= 0) msg << " for set " << set_index;
    msg << " (|a0| = " << a0.norm() << "): " << e.what();
    throw RegistrationError(msg.str(), iteration, set_index, a0.norm());
  }
}

// Runs body(0..count-1) on up to `threads` workers. Rethrows the exception of
// the lowest failing index so failures are reported deterministically.
template <class Body>
void parallel_for(int count, int threads, Body&& body) {
  const int workers = std::clamp(threads, 1, std::max(count, 1));
  std::vector<std::exception_ptr> errors(count);
  auto run = [&](int i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (workers == 1) {
    for (int i = 0; i < count; ++i) run(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int i = next++; i < count; i = next++) run(i);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

RegistrationResult register_to_gmm(const PointSet& points, const GmmModel& model,
                                   const RegistrationConfig& config) {
  config.validate();
  model.validate();
  check_inputs(points, config, "register_to_gmm");
  if (model.dim() != points.cols())
    throw std::invalid_argument("register_to_gmm: model and points differ in dimension");

  RegistrationResult out;
  out.model = model;
  out.momenta = MomentumField::Zero(points.rows(), points.cols());
  ShootingProblem problem(points, points, model.sigma, config.lambda, config.use_logdet,
                          config.kernel, config.steps);
  out.path = initial_shoot(problem, out.momenta, -1);

  auto record = [&] {
    const PointSet& warped = out.path.endpoints();
    out.gamma = e_step(out.model, warped);
    out.free_energy_history.push_back(free_energy(out.gamma, out.model, warped,
                                                  model_log_jacobians(out.path, config),
                                                  out.path.hamiltonian_quadrature, config.lambda));
    out.residual_history.push_back(mean_residual(warped, barycentric_targets(out.gamma, out.model)));
  };
  record();

  out.status = RegistrationStatus::MaxOuter;
  for (int it = 1; it <= config.max_outer; ++it) {
    if (config.optimize.any())
      out.model = robust_m_step(out.path.endpoints(), out.gamma, out.model, config.optimize);
    problem = problem.with_targets(barycentric_targets(out.gamma, out.model), out.model.sigma);
    auto update = warp_update(problem, out.momenta, config, it, -1);
    out.momenta = std::move(update.a0);
    out.path = std::move(update.path);
    out.outer_iterations = it;

    const double previous = out.free_energy_history.back().total;
    record();
    if (settled(previous, out.free_energy_history.back().total, config.ftol)) {
      out.status = RegistrationStatus::Converged;
      break;
    }
  }
  return out;
}

PointSet pool(const std::vector<PointSet>& sets) {
  Eigen::Index rows = 0;
  for (const auto& s : sets) rows += s.rows();
  const Eigen::Index d = sets.empty() ? 0 : sets.front().cols();
  PointSet out(rows, d);
  Eigen::Index at = 0;
  for (const auto& s : sets) {
    if (s.cols() != d) throw std::invalid_argument("pool: point sets differ in dimension");
    out.middleRows(at, s.rows()) = s;
    at += s.rows();
  }
  return out;
}

GmmModel initial_atlas_model(const PointSet& pooled, int components, std::uint64_t seed) {
  const Eigen::Index n = pooled.rows();
  const Eigen::Index d = pooled.cols();
  if (components < 1) throw std::invalid_argument("atlas needs at least one component");
  if (n < components)
    throw std::invalid_argument("atlas: fewer pooled points than mixture components");

  Rng rng(seed);
  PointSet centers(components, d);
  centers.row(0) = pooled.row(std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(rng.uniform() * n)));
  Vector dist2 = (pooled.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < components; ++c) {
    const double total = dist2.sum();
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(rng.uniform() * n));
    }
    centers.row(c) = pooled.row(pick);
    dist2 = dist2.cwiseMin((pooled.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> label(n, 0);
  auto assign = [&] {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < components; ++c) {
        const double r2 = (pooled.row(i) - centers.row(c)).squaredNorm();
        if (r2 < best) {
          best = r2;
          label[i] = c;
        }
      }
    }
  };
  for (int lloyd = 0; lloyd < 10; ++lloyd) {
    assign();
    PointSet sums = PointSet::Zero(components, d);
    std::vector<int> counts(components, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(label[i]) += pooled.row(i);
      ++counts[label[i]];
    }
    for (int c = 0; c < components; ++c)
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
  }
  assign();

  GmmModel model;
  model.means = centers;
  model.weights = Vector::Constant(components, 1.0 / components);
  double scatter = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) scatter += (pooled.row(i) - centers.row(label[i])).squaredNorm();
  model.sigma = std::max(std::sqrt(scatter / (static_cast<double>(d) * n)), sigma_floor(pooled));
  return model;
}

GmmModel atlas_stage1(const PointSet& pooled_warped, GmmModel model, int loops) {
  for (int i = 0; i < loops; ++i)
    model = robust_m_step(pooled_warped, e_step(model, pooled_warped), model, UpdateFlags::all());
  return model;
}

double total_objective(const std::vector<PointSet>& sets, const std::vector<GeodesicPath>& paths,
                       const GmmModel& model, const RegistrationConfig& config) {
  if (sets.size() != paths.size())
    throw std::invalid_argument("total_objective: one path per point set required");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const PointSet& warped = paths[k].endpoints();
    if (warped.rows() != sets[k].rows())
      throw std::invalid_argument("total_objective: path does not match its point set");
    const auto f = free_energy(e_step(model, warped), model, warped,
                               model_log_jacobians(paths[k], config),
                               paths[k].hamiltonian_quadrature, config.lambda);
    // With optimal responsibilities the free energy is the negative log
    // posterior minus the Gaussian normalization constant.
    total += f.total + static_cast<double>(warped.rows() * warped.cols()) * half_log_2pi;
  }
  return total;
}

AtlasResult build_atlas(const std::vector<PointSet>& sets, int components,
                        const RegistrationConfig& config) {
  config.validate();
  if (sets.size() < 2) throw std::invalid_argument("build_atlas needs at least two point sets");
  for (const auto& s : sets) check_inputs(s, config, "build_atlas");
  const int count = static_cast<int>(sets.size());

  AtlasResult out;
  out.initial_model = initial_atlas_model(pool(sets), components, config.init_seed);
  out.model = out.initial_model;

  std::vector<ShootingProblem> problems;
  std::vector<MomentumField> momenta;
  std::vector<GeodesicPath> paths;
  problems.reserve(count);
  for (int k = 0; k < count; ++k) {
    problems.emplace_back(sets[k], sets[k], out.model.sigma, config.lambda, config.use_logdet,
                          config.kernel, config.steps);
    momenta.push_back(MomentumField::Zero(sets[k].rows(), sets[k].cols()));
    paths.push_back(initial_shoot(problems[k], momenta[k], k));
  }
  out.objective_history.push_back(total_objective(sets, paths, out.model, config));

  auto pooled_endpoints = [&] {
    std::vector<PointSet> ends;
    ends.reserve(count);
    for (const auto& p : paths) ends.push_back(p.endpoints());
    return pool(ends);
  };

  out.status = RegistrationStatus::MaxOuter;
  for (int it = 1; it <= config.max_outer; ++it) {
    const PointSet pooled = pooled_endpoints();
    out.model = atlas_stage1(pooled, out.model, config.em_inner_loops);
    const Responsibilities gamma = e_step(out.model, pooled);

    std::vector<Eigen::Index> offsets(count, 0);
    for (int k = 1; k < count; ++k) offsets[k] = offsets[k - 1] + sets[k - 1].rows();

    parallel_for(count, config.threads, [&](int k) {
      const Responsibilities gk{gamma.gamma.middleRows(offsets[k], sets[k].rows())};
      const ShootingProblem problem =
          problems[k].with_targets(barycentric_targets(gk, out.model), out.model.sigma);
      auto update = warp_update(problem, momenta[k], config, it, k);
      momenta[k] = std::move(update.a0);
      paths[k] = std::move(update.path);
    });
    out.outer_iterations = it;

    const double previous = out.objective_history.back();
    out.objective_history.push_back(total_objective(sets, paths, out.model, config));
    if (settled(previous, out.objective_history.back(), config.ftol)) {
      out.status = RegistrationStatus::Converged;
      break;
    }
  }

  out.per_set.reserve(count);
  for (int k = 0; k < count; ++k)
    out.per_set.push_back({momenta[k], paths[k], e_step(out.model, paths[k].endpoints())});
  return out;
}

}  // namespace difficp
