#include "difficp/geodesic.hpp"

#include "difficp/detail/dual.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>

namespace difficp {

using detail::Dual;

namespace {

constexpr double kBlowupLimit = 1e6;
constexpr double kIdentityTolerance = 1e-8;

// Ralston's RK2: stage at 2h/3, weights 1/4 and 3/4.
struct Ralston {
  explicit Ralston(int steps)
      : h(1.0 / steps), stage(2.0 * h / 3.0), w1(0.25), w2(0.75) {}
  double h, stage, w1, w2;
};

template <class T>
struct CachedPair {
  T s;
  RadialProfile<T> p;
};

template <class T>
struct FieldEval {
  std::vector<T> dH_da;  // velocity at the landmarks
  std::vector<T> dH_dq;
  std::vector<T> div;    // div v at the landmarks
  std::vector<T> dI_dq;  // gradient of the regularization integrand
  std::vector<T> dI_da;
  T H{0.0};
  T I{0.0};
};

// Evaluates every state function the integrator and its reverse sweep need,
// sharing one table of pairwise kernel profiles.
template <class T>
class FieldEvaluator {
 public:
  FieldEvaluator(const GaussianKernel& kernel, int n) : kernel_(kernel), n_(n), cache_(n * n) {}

  void operator()(const T* q, const T* a, double beta, FieldEval<T>& out) {
    const int n = n_;
    const int d = kernel_.dim();
    out.dH_da.assign(n * d, T(0.0));
    out.dH_dq.assign(n * d, T(0.0));
    out.div.assign(n, T(0.0));
    out.dI_dq.assign(n * d, T(0.0));
    out.dI_da.assign(n * d, T(0.0));

    for (int p = 0; p < n; ++p) {
      for (int m = p; m < n; ++m) {
        T s(0.0);
        for (int i = 0; i < d; ++i) {
          const T w = q[p * d + i] - q[m * d + i];
          s += w * w;
        }
        const CachedPair<T> entry{s, kernel_.profile(s)};
        cache_[p * n + m] = entry;
        cache_[m * n + p] = entry;
      }
    }

    T two_h(0.0);
    T lap_total(0.0);
    for (int p = 0; p < n; ++p) {
      T lap_sum(0.0);
      T* v = out.dH_da.data() + p * d;
      detail::accumulate_velocity<T>(
          n, d, q, a, beta, q + p * d,
          [&](int m, const T&) { return cache_[p * n + m].p; }, v, out.div[p], lap_sum);
      T a_dot_v(0.0);
      for (int i = 0; i < d; ++i) a_dot_v += a[p * d + i] * v[i];
      two_h += a_dot_v + beta * out.div[p];
      lap_total += lap_sum;
    }
    out.H = 0.5 * two_h;

    const double beta2 = beta * beta;
    const double lap_grad_coef = 8.0 + 4.0 * d;
    T reg(0.0);
    for (int p = 0; p < n; ++p) {
      const T* qp = q + p * d;
      const T* ap = a + p * d;
      T* gq = out.dH_dq.data() + p * d;
      T* iq = out.dI_dq.data() + p * d;
      T span_a[kMaxDim];
      for (int i = 0; i < d; ++i) span_a[i] = T(0.0);
      for (int m = 0; m < n; ++m) {
        if (m == p) {
          for (int i = 0; i < d; ++i) span_a[i] += ap[i] * cache_[p * n + p].p.k0;
          continue;
        }
        const T* qm = q + m * d;
        const T* am = a + m * d;
        const CachedPair<T>& c = cache_[p * n + m];
        T w[kMaxDim];
        T diff[kMaxDim];
        T a_pm(0.0);
        T w_dot_diff(0.0);
        for (int i = 0; i < d; ++i) {
          w[i] = qp[i] - qm[i];
          diff[i] = am[i] - ap[i];
          a_pm += ap[i] * am[i];
          w_dot_diff += w[i] * diff[i];
        }
        const T two_k1 = 2.0 * c.p.k1;
        const T lap_grad = lap_grad_coef * c.p.k2 + 8.0 * (c.s * c.p.k3);
        const T radial_q = a_pm * two_k1 + beta * (4.0 * (c.p.k2 * w_dot_diff)) - beta2 * lap_grad;
        const T radial_i = 2.0 * (a_pm * two_k1 + beta2 * lap_grad);
        for (int i = 0; i < d; ++i) {
          gq[i] += radial_q * w[i] + beta * (two_k1 * diff[i]);
          iq[i] += radial_i * w[i];
          span_a[i] += am[i] * c.p.k0;
        }
      }
      for (int i = 0; i < d; ++i) {
        out.dI_da[p * d + i] = 2.0 * span_a[i];
        reg += ap[i] * span_a[i];
      }
    }
    out.I = reg + beta2 * lap_total;
  }

 private:
  const GaussianKernel& kernel_;
  int n_;
  std::vector<CachedPair<T>> cache_;
};

void check_shapes(const PointSet& q, const MomentumField& a, const KernelParams& kernel,
                  const char* who) {
  kernel.validate();
  if (q.rows() != a.rows() || q.cols() != a.cols())
    throw std::invalid_argument(std::string(who) + ": points are " + std::to_string(q.rows()) + "x" +
                                std::to_string(q.cols()) + " but momenta are " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  if (q.cols() != kernel.dim)
    throw std::invalid_argument(std::string(who) + ": point dimension does not match kernel");
}

FieldEval<double> evaluate(const PointSet& q, const MomentumField& a, double beta,
                           const KernelParams& params) {
  const GaussianKernel kernel(params);
  FieldEvaluator<double> eval(kernel, static_cast<int>(q.rows()));
  FieldEval<double> out;
  eval(q.data(), a.data(), beta, out);
  return out;
}

void guard_state(const PointSet& q, const MomentumField& a, int step, const char* phase) {
  auto bad = [](const auto& m) {
    return !m.allFinite() || (m.size() > 0 && m.cwiseAbs().maxCoeff() > kBlowupLimit);
  };
  if (bad(q) || bad(a)) {
    std::ostringstream msg;
    msg << "integration blowup at step " << step << " (" << phase
        << "): state is non-finite or exceeds " << kBlowupLimit;
    throw IntegrationBlowup(step, msg.str());
  }
}

// The tolerance is relative to the size of the summands, which can dwarf the
// sums themselves when large momenta cancel.
void check_energy_identity(const FieldEval<double>& f, const MomentumField& a, double lambda,
                           int step) {
  double div_sum = 0.0;
  for (double dv : f.div) div_sum += dv;
  const double lhs = 0.5 * lambda * f.I;
  const double rhs = lambda * f.H - div_sum;
  const double momentum_mass = a.rowwise().norm().sum();
  const double scale = std::max({1.0, std::abs(lhs), std::abs(lambda * f.H), std::abs(div_sum),
                                 0.5 * lambda * momentum_mass * momentum_mass});
  if (!(std::abs(lhs - rhs) <= kIdentityTolerance * scale)) {
    std::ostringstream msg;
    msg << "energy identity violated at grid step " << step << ": " << std::setprecision(17) << lhs << " vs " << rhs;
    throw std::logic_error(msg.str());
  }
}

}  // namespace

ShootingProblem::ShootingProblem(PointSet source, PointSet targets, double sigma, double lambda,
                                 bool use_logdet, KernelParams kernel, int steps)
    : source_(std::move(source)),
      targets_(std::move(targets)),
      sigma_(sigma),
      lambda_(lambda),
      beta_(use_logdet ? 1.0 / lambda : 0.0),
      kernel_(kernel),
      steps_(steps) {
  kernel_.validate();
  if (source_.rows() < 1) throw std::invalid_argument("shooting problem needs at least one point");
  if (source_.rows() != targets_.rows() || source_.cols() != targets_.cols())
    throw std::invalid_argument("shooting problem: source and targets differ in shape");
  if (source_.cols() != kernel_.dim)
    throw std::invalid_argument("shooting problem: point dimension does not match kernel");
  if (!(sigma_ > 0.0)) throw std::invalid_argument("shooting problem: sigma must be positive");
  if (!(lambda_ > 0.0)) throw std::invalid_argument("shooting problem: lambda must be positive");
  if (steps_ < 1) throw std::invalid_argument("shooting problem: need at least one time step");
}

ShootingProblem ShootingProblem::with_targets(PointSet targets, double sigma) const {
  return ShootingProblem(source_, std::move(targets), sigma, lambda_, use_logdet(), kernel_, steps_);
}

double GeodesicPath::relative_hamiltonian_drift() const {
  if (hamiltonian_trace.empty()) return 0.0;
  const double h0 = hamiltonian_trace.front();
  if (h0 == 0.0) return 0.0;
  double worst = 0.0;
  for (double h : hamiltonian_trace) worst = std::max(worst, std::abs(h - h0));
  return worst / std::abs(h0);
}

double hamiltonian(const PointSet& q, const MomentumField& a, double beta, const KernelParams& kernel) {
  check_shapes(q, a, kernel, "hamiltonian");
  return evaluate(q, a, beta, kernel).H;
}

HamiltonianGradients hamiltonian_grads(const PointSet& q, const MomentumField& a, double beta,
                                       const KernelParams& kernel) {
  check_shapes(q, a, kernel, "hamiltonian_grads");
  const auto f = evaluate(q, a, beta, kernel);
  HamiltonianGradients out{MomentumField(q.rows(), q.cols()), PointSet(q.rows(), q.cols())};
  std::copy(f.dH_da.begin(), f.dH_da.end(), out.dH_da.data());
  std::copy(f.dH_dq.begin(), f.dH_dq.end(), out.dH_dq.data());
  return out;
}

EnergyIdentityTerms energy_identity_terms(const PointSet& q, const MomentumField& a, double beta,
                                          const KernelParams& kernel) {
  check_shapes(q, a, kernel, "energy_identity_terms");
  const auto f = evaluate(q, a, beta, kernel);
  EnergyIdentityTerms out;
  out.reg_integrand = f.I;
  out.hamiltonian = f.H;
  for (double dv : f.div) out.divergence_sum += dv;
  return out;
}

GeodesicPath shoot(const ShootingProblem& problem, const MomentumField& a0) {
  check_shapes(problem.source(), a0, problem.kernel(), "shoot");
  const int n = problem.size();
  const int d = problem.dim();
  const int steps = problem.steps();
  const double beta = problem.beta();
  const Ralston rk(steps);
  const GaussianKernel kernel(problem.kernel());
  FieldEvaluator<double> eval(kernel, n);

  GeodesicPath path;
  path.beta = beta;
  path.times.resize(steps + 1);
  for (int s = 0; s < steps; ++s) path.times[s] = s * rk.h;
  path.times[steps] = 1.0;
  path.q.reserve(steps + 1);
  path.a.reserve(steps + 1);
  path.q_stage.reserve(steps);
  path.a_stage.reserve(steps);
  path.logdet = Vector::Zero(n);
  path.hamiltonian_trace.reserve(steps + 1);

  PointSet q = problem.source();
  MomentumField a = a0;
  guard_state(q, a, 0, "initial state");
  path.q.push_back(q);
  path.a.push_back(a);

  FieldEval<double> f1;
  FieldEval<double> f2;
  PointSet q2(n, d);
  MomentumField a2(n, d);
  for (int s = 0; s < steps; ++s) {
    eval(q.data(), a.data(), beta, f1);
    if (beta > 0.0) check_energy_identity(f1, a, problem.lambda(), s);
    path.hamiltonian_trace.push_back(f1.H);

    for (int i = 0; i < n * d; ++i) {
      q2.data()[i] = q.data()[i] + rk.stage * f1.dH_da[i];
      a2.data()[i] = a.data()[i] - rk.stage * f1.dH_dq[i];
    }
    guard_state(q2, a2, s, "Ralston stage");
    eval(q2.data(), a2.data(), beta, f2);

    for (int i = 0; i < n * d; ++i) {
      q.data()[i] = q.data()[i] + rk.h * (rk.w1 * f1.dH_da[i] + rk.w2 * f2.dH_da[i]);
      a.data()[i] = a.data()[i] - rk.h * (rk.w1 * f1.dH_dq[i] + rk.w2 * f2.dH_dq[i]);
    }
    guard_state(q, a, s, "step update");
    for (int p = 0; p < n; ++p)
      path.logdet[p] = path.logdet[p] + rk.h * (rk.w1 * f1.div[p] + rk.w2 * f2.div[p]);
    path.reg_integral += rk.h * (rk.w1 * f1.I + rk.w2 * f2.I);
    path.hamiltonian_quadrature += rk.h * (rk.w1 * f1.H + rk.w2 * f2.H);

    path.q_stage.push_back(q2);
    path.a_stage.push_back(a2);
    path.q.push_back(q);
    path.a.push_back(a);
  }
  eval(q.data(), a.data(), beta, f1);
  if (beta > 0.0) check_energy_identity(f1, a, problem.lambda(), steps);
  path.hamiltonian_trace.push_back(f1.H);
  return path;
}

FlowResult flow_apply(const GeodesicPath& path, const ShootingProblem& problem, const PointSet& z) {
  const int d = problem.dim();
  const int n = problem.size();
  const int steps = path.steps();
  if (steps < 1 || static_cast<int>(path.q_stage.size()) != steps)
    throw std::invalid_argument("flow_apply: path has no integration steps");
  if (path.q.front().rows() != n || path.q.front().cols() != d)
    throw std::invalid_argument("flow_apply: path was not produced by this problem");
  if (z.cols() != d) throw std::invalid_argument("flow_apply: point dimension mismatch");

  const Ralston rk(steps);
  const GaussianKernel kernel(problem.kernel());
  const double beta = path.beta;
  auto profile_of = [&](int, const double& s) { return kernel.profile(s); };

  FlowResult out{z, Vector::Zero(z.rows())};
  double v1[kMaxDim], v2[kMaxDim], z2[kMaxDim];
  for (Eigen::Index j = 0; j < z.rows(); ++j) {
    double* zz = out.warped.row(j).data();
    double ld = 0.0;
    for (int s = 0; s < steps; ++s) {
      double div1 = 0.0, div2 = 0.0, lap = 0.0;
      detail::accumulate_velocity<double>(n, d, path.q[s].data(), path.a[s].data(), beta, zz,
                                          profile_of, v1, div1, lap);
      for (int i = 0; i < d; ++i) z2[i] = zz[i] + rk.stage * v1[i];
      detail::accumulate_velocity<double>(n, d, path.q_stage[s].data(), path.a_stage[s].data(), beta,
                                          z2, profile_of, v2, div2, lap);
      for (int i = 0; i < d; ++i) zz[i] = zz[i] + rk.h * (rk.w1 * v1[i] + rk.w2 * v2[i]);
      ld = ld + rk.h * (rk.w1 * div1 + rk.w2 * div2);
      for (int i = 0; i < d; ++i) {
        if (!std::isfinite(zz[i]) || std::abs(zz[i]) > kBlowupLimit) {
          std::ostringstream msg;
          msg << "integration blowup at step " << s << " while transporting point " << j;
          throw IntegrationBlowup(s, msg.str());
        }
      }
    }
    out.logdet[j] = ld;
  }
  return out;
}

ShootingEnergy shooting_energy(const ShootingProblem& problem, const MomentumField& a0) {
  ShootingEnergy out;
  out.path = shoot(problem, a0);
  const double inv_two_s2 = 0.5 / (problem.sigma() * problem.sigma());
  out.data_term = (out.path.endpoints() - problem.targets()).squaredNorm() * inv_two_s2;
  out.energy = out.data_term + 0.5 * problem.lambda() * out.path.reg_integral;
  return out;
}

ShootingGradient shooting_energy_grad(const ShootingProblem& problem, const MomentumField& a0) {
  auto fwd = shooting_energy(problem, a0);
  const int n = problem.size();
  const int d = problem.dim();
  const int nd = n * d;
  const int steps = problem.steps();
  const double beta = problem.beta();
  const Ralston rk(steps);
  const double reg_bar = 0.5 * problem.lambda();
  const GaussianKernel kernel(problem.kernel());
  FieldEvaluator<Dual> eval(kernel, n);

  std::vector<double> q_bar(nd), a_bar(nd, 0.0);
  const double inv_s2 = 1.0 / (problem.sigma() * problem.sigma());
  for (int i = 0; i < nd; ++i)
    q_bar[i] = (fwd.path.endpoints().data()[i] - problem.targets().data()[i]) * inv_s2;

  std::vector<Dual> qd(nd), ad(nd);
  FieldEval<Dual> f;
  std::vector<double> stage_q_bar(nd), stage_a_bar(nd);

  // Vector-Jacobian product of the Hamiltonian vector field (dH/da, -dH/dq) at
  // (q, a) with cotangent (u_q, u_a): Hess H applied to (-u_a, u_q), read off
  // the dual parts. The value parts of dI give the quadrature gradient.
  auto pullback = [&](const PointSet& q, const MomentumField& a, const std::vector<double>& u_q,
                      const std::vector<double>& u_a) {
    for (int i = 0; i < nd; ++i) {
      qd[i] = Dual(q.data()[i], -u_a[i]);
      ad[i] = Dual(a.data()[i], u_q[i]);
    }
    eval(qd.data(), ad.data(), beta, f);
  };

  std::vector<double> u_q(nd), u_a(nd);
  for (int s = steps - 1; s >= 0; --s) {
    // second stage
    for (int i = 0; i < nd; ++i) {
      u_q[i] = rk.h * rk.w2 * q_bar[i];
      u_a[i] = rk.h * rk.w2 * a_bar[i];
    }
    pullback(fwd.path.q_stage[s], fwd.path.a_stage[s], u_q, u_a);
    const double reg_w2 = reg_bar * rk.h * rk.w2;
    for (int i = 0; i < nd; ++i) {
      stage_q_bar[i] = f.dH_dq[i].d + reg_w2 * f.dI_dq[i].v;
      stage_a_bar[i] = f.dH_da[i].d + reg_w2 * f.dI_da[i].v;
    }
    // first stage, k1 feeds both the update and the stage state
    for (int i = 0; i < nd; ++i) {
      u_q[i] = rk.h * rk.w1 * q_bar[i] + rk.stage * stage_q_bar[i];
      u_a[i] = rk.h * rk.w1 * a_bar[i] + rk.stage * stage_a_bar[i];
    }
    pullback(fwd.path.q[s], fwd.path.a[s], u_q, u_a);
    const double reg_w1 = reg_bar * rk.h * rk.w1;
    for (int i = 0; i < nd; ++i) {
      q_bar[i] += stage_q_bar[i] + f.dH_dq[i].d + reg_w1 * f.dI_dq[i].v;
      a_bar[i] += stage_a_bar[i] + f.dH_da[i].d + reg_w1 * f.dI_da[i].v;
    }
  }

  ShootingGradient out;
  out.energy = fwd.energy;
  out.grad = MomentumField(n, d);
  std::copy(a_bar.begin(), a_bar.end(), out.grad.data());
  out.path = std::move(fwd.path);
  return out;
}

LandmarkRegistration register_landmarks(const ShootingProblem& problem, const MomentumField& a0_init,
                                        const OptimOptions& opts) {
  const Eigen::Index n = a0_init.rows();
  const Eigen::Index d = a0_init.cols();
  Objective objective = [&](const Vector& x, Vector& grad) {
    const MomentumField a0 = Eigen::Map<const MomentumField>(x.data(), n, d);
    const auto eg = shooting_energy_grad(problem, a0);
    grad = Eigen::Map<const Vector>(eg.grad.data(), n * d);
    return eg.energy;
  };

  const Vector x0 = Eigen::Map<const Vector>(a0_init.data(), n * d);
  const OptimResult res = lbfgs_minimize(objective, x0, opts);

  LandmarkRegistration out;
  out.status = res.status;
  out.iterations = res.iterations;
  out.no_progress = res.status == OptimStatus::NoProgress && !(res.value < res.initial_value);
  out.a0 = out.no_progress ? a0_init : MomentumField(Eigen::Map<const MomentumField>(res.x.data(), n, d));
  auto final_energy = shooting_energy(problem, out.a0);
  out.energy = final_energy.energy;
  out.path = std::move(final_energy.path);
  return out;
}

}  // namespace difficp
