#include <difficp/geodesic.hpp>

#include "oracles/classic_landmark.hpp"
#include "oracles/finite_difference.hpp"
#include "oracles/random_instances.hpp"

#include <Eigen/LU>
#include <gtest/gtest.h>

#include <cmath>

namespace difficp {
namespace {

using oracle::flatten;
using oracle::unflatten;

const KernelParams kKernel{0.2, 2};

// Literal transcription of the Hamiltonian's double sum.
double literal_hamiltonian(const PointSet& q, const MomentumField& a, double beta, const KernelParams& p) {
  double total = 0.0;
  for (Eigen::Index n = 0; n < q.rows(); ++n) {
    for (Eigen::Index m = 0; m < q.rows(); ++m) {
      const Vector w = (q.row(m) - q.row(n)).transpose();
      const auto k = kernel_derivatives(p, {w.data(), std::size_t(w.size())});
      const double kv = kernel_eval(p, {w.data(), std::size_t(w.size())});
      total += a.row(m).dot(a.row(n)) * kv + beta * (a.row(n) - a.row(m)).dot(k.grad.transpose()) -
               beta * beta * k.laplacian;
    }
  }
  return 0.5 * total;
}

ShootingProblem random_problem(int n, std::uint64_t seed, bool logdet, double lambda = 500.0,
                               double sigma = 0.1, int steps = 10) {
  PointSet x = oracle::uniform_points(n, 2, seed);
  PointSet y = x + oracle::normal_momenta(n, 2, seed + 1, 0.1);
  return ShootingProblem(x, y, sigma, lambda, logdet, kKernel, steps);
}

TEST(Hamiltonian, ZeroMomentaNoBetaIsZero) {
  const PointSet q = oracle::uniform_points(4, 2, 1);
  EXPECT_EQ(hamiltonian(q, MomentumField::Zero(4, 2), 0.0, kKernel), 0.0);
}

TEST(Hamiltonian, SingleLandmark) {
  PointSet q(1, 2);
  q << 0.3, 0.4;
  MomentumField a(1, 2);
  a << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(hamiltonian(q, a, 0.0, kKernel), 0.5);
  a << 0.7, -0.2;
  const double beta = 0.05;
  EXPECT_NEAR(hamiltonian(q, a, beta, kKernel),
              0.5 * (a.squaredNorm() + beta * beta * 2.0 / (0.2 * 0.2)), 1e-15);
}

TEST(Hamiltonian, MatchesLiteralDoubleSum) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const PointSet q = oracle::uniform_points(7, 2, seed);
    const MomentumField a = oracle::normal_momenta(7, 2, seed + 50, 0.8);
    for (double beta : {0.0, 1.0 / 500.0, 0.05}) {
      const double lit = literal_hamiltonian(q, a, beta, kKernel);
      EXPECT_NEAR(hamiltonian(q, a, beta, kKernel), lit, 1e-12 * std::max(1.0, std::abs(lit)));
    }
  }
}

TEST(HamiltonianGrads, VelocityIdentity) {
  const PointSet q = oracle::uniform_points(8, 2, 3);
  const MomentumField a = oracle::normal_momenta(8, 2, 4, 1.0);
  for (double beta : {0.0, 0.002, 0.1}) {
    const auto g = hamiltonian_grads(q, a, beta, kKernel);
    for (int n = 0; n < 8; ++n) {
      const auto v = velocity_eval(kKernel, q, a, beta, {q.row(n).data(), 2});
      EXPECT_LT((g.dH_da.row(n).transpose() - v.v).norm(), 1e-12);
    }
  }
}

TEST(HamiltonianGrads, SingleLandmarkHasNoForce) {
  PointSet q(1, 2);
  q << -0.2, 0.1;
  MomentumField a(1, 2);
  a << 3.0, -1.0;
  const auto g = hamiltonian_grads(q, a, 0.3, kKernel);
  EXPECT_EQ(g.dH_dq.norm(), 0.0);
}

TEST(HamiltonianGrads, MatchFiniteDifferences) {
  const int n = 4;
  for (double beta : {0.0, 1.0 / 500.0, 0.05}) {
    const PointSet q = oracle::uniform_points(n, 2, 7);
    const MomentumField a = oracle::normal_momenta(n, 2, 8, 1.0);
    const auto g = hamiltonian_grads(q, a, beta, kKernel);
    auto h_of_q = [&](const Vector& x) { return hamiltonian(unflatten(x, n, 2), a, beta, kKernel); };
    auto h_of_a = [&](const Vector& x) { return hamiltonian(q, unflatten(x, n, 2), beta, kKernel); };
    EXPECT_LT(oracle::relative_error(oracle::central_gradient(h_of_q, flatten(q), 1e-6), flatten(g.dH_dq)), 1e-6);
    EXPECT_LT(oracle::relative_error(oracle::central_gradient(h_of_a, flatten(a), 1e-6), flatten(g.dH_da)), 1e-6);
  }
}

TEST(EnergyIdentity, HoldsForLogdetModel) {
  const double lambda = 500.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const PointSet q = oracle::uniform_points(9, 2, seed);
    const MomentumField a = oracle::normal_momenta(9, 2, seed + 100, 0.5);
    const auto t = energy_identity_terms(q, a, 1.0 / lambda, kKernel);
    const double lhs = 0.5 * lambda * t.reg_integrand;
    const double rhs = lambda * t.hamiltonian - t.divergence_sum;
    EXPECT_NEAR(lhs, rhs, 1e-8 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(Shoot, StationaryFlow) {
  const auto problem = random_problem(6, 1, false);
  const auto path = shoot(problem, MomentumField::Zero(6, 2));
  for (const auto& q : path.q) EXPECT_EQ((q - problem.source()).norm(), 0.0);
  EXPECT_EQ(path.logdet.norm(), 0.0);
  EXPECT_EQ(path.reg_integral, 0.0);
  ASSERT_EQ(path.times.size(), 11u);
  EXPECT_EQ(path.times.front(), 0.0);
  EXPECT_EQ(path.times.back(), 1.0);
}

TEST(Shoot, SingleLandmarkMovesStraight) {
  PointSet x(1, 2);
  x << 0.1, 0.2;
  MomentumField u(1, 2);
  u << 0.3, -0.4;
  const ShootingProblem problem(x, x, 0.1, 500.0, false, kKernel, 10);
  const auto path = shoot(problem, u);
  EXPECT_LT((path.endpoints() - (x + u)).norm(), 1e-15);
  for (const auto& a : path.a) EXPECT_EQ((a - u).norm(), 0.0);
  EXPECT_EQ(path.logdet[0], 0.0);
}

// Two-stage second-order schemes conserve quadratic energies to third order, so the
// observed ratio sits near 8; at least second order is required.
TEST(Shoot, HamiltonianDriftIsSecondOrder) {
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PointSet x = oracle::uniform_points(10, 2, seed);
    const MomentumField a0 = oracle::normal_momenta(10, 2, seed + 7, 0.2);
    const ShootingProblem coarse(x, x, 0.1, 500.0, true, kKernel, 10);
    const ShootingProblem fine(x, x, 0.1, 500.0, true, kKernel, 20);
    const double ratio = shoot(coarse, a0).relative_hamiltonian_drift() /
                         shoot(fine, a0).relative_hamiltonian_drift();
    EXPECT_GT(ratio, 3.5);
    EXPECT_LT(ratio, 10.0);
    ++checked;
  }
  EXPECT_EQ(checked, 5);
}

TEST(Shoot, BlowupIsReported) {
  const auto problem = random_problem(5, 3, false);
  const MomentumField huge = MomentumField::Constant(5, 2, 1e7);
  EXPECT_THROW(shoot(problem, huge), IntegrationBlowup);
  try {
    MomentumField nan = MomentumField::Zero(5, 2);
    nan(2, 1) = std::nan("");
    shoot(problem, nan);
    FAIL() << "expected a blowup";
  } catch (const IntegrationBlowup& e) {
    EXPECT_EQ(e.step(), 0);
  }
}

TEST(Shoot, RejectsShapeMismatch) {
  const auto problem = random_problem(5, 3, false);
  EXPECT_THROW(shoot(problem, MomentumField::Zero(4, 2)), std::invalid_argument);
}

TEST(Problem, OnlyClassicOrLogdetBeta) {
  const auto with = random_problem(3, 1, true, 250.0);
  const auto without = random_problem(3, 1, false, 250.0);
  EXPECT_DOUBLE_EQ(with.beta(), 1.0 / 250.0);
  EXPECT_EQ(without.beta(), 0.0);
  PointSet x = oracle::uniform_points(3, 2, 1);
  EXPECT_THROW(ShootingProblem(x, x, 0.1, 0.0, true, kKernel), std::invalid_argument);
  EXPECT_THROW(ShootingProblem(x, x, -1.0, 1.0, true, kKernel), std::invalid_argument);
  EXPECT_THROW(ShootingProblem(x, PointSet::Zero(2, 2), 0.1, 1.0, true, kKernel), std::invalid_argument);
}

TEST(FlowApply, ReproducesLandmarksExactly) {
  for (bool logdet : {false, true}) {
    const auto problem = random_problem(12, 5, logdet);
    const auto path = shoot(problem, oracle::normal_momenta(12, 2, 6, 0.3));
    const auto flow = flow_apply(path, problem, problem.source());
    EXPECT_EQ((flow.warped - path.endpoints()).norm(), 0.0);
    EXPECT_EQ((flow.logdet - path.logdet).norm(), 0.0);
  }
}

TEST(FlowApply, IdentityForStationaryFlow) {
  const auto problem = random_problem(6, 2, false);
  const auto path = shoot(problem, MomentumField::Zero(6, 2));
  const PointSet z = oracle::uniform_points(15, 2, 99, -1.0, 1.0);
  const auto flow = flow_apply(path, problem, z);
  EXPECT_EQ((flow.warped - z).norm(), 0.0);
  EXPECT_EQ(flow.logdet.norm(), 0.0);
}

TEST(FlowApply, LogJacobianMatchesFiniteDifferenceDeterminant) {
  for (bool logdet : {false, true}) {
    const auto problem = random_problem(10, 8, logdet);
    const auto path = shoot(problem, oracle::normal_momenta(10, 2, 9, 0.15));
    const PointSet z = oracle::uniform_points(20, 2, 10, -0.7, 0.7);
    const auto flow = flow_apply(path, problem, z);
    for (int j = 0; j < z.rows(); ++j) {
      auto warp = [&](const Vector& p) {
        return flatten(flow_apply(path, problem, unflatten(p, 1, 2)).warped);
      };
      const Matrix jac = oracle::central_jacobian(warp, z.row(j).transpose(), 1e-6);
      const double det = jac.determinant();
      EXPECT_GT(det, 0.0);
      EXPECT_NEAR(std::exp(flow.logdet[j]) / det, 1.0, 1e-2);
    }
  }
}

TEST(ShootingEnergy, EmptyFlowIsDataTerm) {
  const auto problem = random_problem(7, 11, false);
  const auto e = shooting_energy(problem, MomentumField::Zero(7, 2));
  const double expected = (problem.source() - problem.targets()).squaredNorm() / (2.0 * 0.01);
  EXPECT_NEAR(e.energy, expected, 1e-12 * expected);
}

TEST(ShootingEnergy, ZeroAtIdentityWithMatchedTargets) {
  PointSet x = oracle::uniform_points(5, 2, 3);
  const ShootingProblem problem(x, x, 0.1, 500.0, false, kKernel);
  EXPECT_EQ(shooting_energy(problem, MomentumField::Zero(5, 2)).energy, 0.0);
}

TEST(ShootingEnergy, LogdetModelIdentityMomentaStillFlow) {
  const auto problem = random_problem(10, 21, true);
  const auto e = shooting_energy(problem, MomentumField::Zero(10, 2));
  EXPECT_GT(e.energy, 0.0);
  EXPECT_NEAR(e.energy, e.data_term + 0.5 * problem.lambda() * e.path.reg_integral, 1e-12 * e.energy);
  // With zero momenta only the divergence part of the field acts; it pushes points apart.
  for (Eigen::Index n = 0; n < 10; ++n) EXPECT_GT(e.path.logdet[n], 0.0);
  EXPECT_GT((e.path.endpoints() - problem.source()).norm(), 0.0);
}

TEST(ShootingEnergy, DivergenceSelfTermsLowerTheIntegrand) {
  PointSet x(1, 2);
  x << 0.2, 0.1;
  const ShootingProblem problem(x, x, 0.1, 500.0, true, kKernel);
  const auto e = shooting_energy(problem, MomentumField::Zero(1, 2));
  const double beta = problem.beta();
  // A lone point translates nowhere; the integrand is the constant beta^2 * Laplacian(0).
  EXPECT_NEAR(e.path.reg_integral, -beta * beta * 2.0 / (0.2 * 0.2), 1e-18);
  EXPECT_LT(e.energy, 0.0);
}

TEST(ShootingGradient, VanishesAtGlobalMinimum) {
  PointSet x = oracle::uniform_points(5, 2, 3);
  const ShootingProblem problem(x, x, 0.1, 500.0, false, kKernel);
  EXPECT_EQ(shooting_energy_grad(problem, MomentumField::Zero(5, 2)).grad.norm(), 0.0);
}

TEST(ShootingGradient, SingleLandmarkClosedForm) {
  PointSet x(1, 2), y(1, 2);
  x << 0.1, -0.3;
  y << 0.4, 0.2;
  const double sigma = 0.5, lambda = 3.0;
  const ShootingProblem problem(x, y, sigma, lambda, false, kKernel);
  MomentumField a0(1, 2);
  a0 << 0.2, -0.7;
  const auto g = shooting_energy_grad(problem, a0);
  const Eigen::RowVectorXd r = x.row(0) + a0.row(0) - y.row(0);
  EXPECT_NEAR(g.energy, r.squaredNorm() / (2 * sigma * sigma) + 0.5 * lambda * a0.squaredNorm(), 1e-13);
  const Eigen::RowVectorXd expected = r / (sigma * sigma) + lambda * a0.row(0);
  EXPECT_LT((g.grad.row(0) - expected).norm(), 1e-12);
}

TEST(ShootingGradient, MatchesFiniteDifferences) {
  for (bool logdet : {false, true}) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const auto problem = random_problem(10, seed * 13, logdet);
      const MomentumField a0 = oracle::normal_momenta(10, 2, seed * 17, 0.3);
      const auto g = shooting_energy_grad(problem, a0);
      auto energy = [&](const Vector& x) { return shooting_energy(problem, unflatten(x, 10, 2)).energy; };
      const double step = 1e-6 * (1.0 + a0.norm());
      const Vector fd = oracle::central_gradient(energy, flatten(a0), step);
      EXPECT_LT(oracle::relative_error(fd, flatten(g.grad)), 1e-5) << "logdet=" << logdet << " seed=" << seed;
    }
  }
}

TEST(ShootingGradient, ClassicModelMatchesIndependentOracle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto problem = random_problem(8, seed * 31, false);
    const MomentumField a0 = oracle::normal_momenta(8, 2, seed * 37, 0.3);
    const oracle::ClassicLandmark classic(problem.source(), problem.targets(), problem.sigma(),
                                          problem.lambda(), kKernel.tau, problem.steps());
    const auto ref = classic.run(a0);
    const auto g = shooting_energy_grad(problem, a0);
    EXPECT_NEAR(g.energy, ref.energy, 1e-12 * std::abs(ref.energy));
    EXPECT_LT(oracle::relative_error(flatten(g.grad), flatten(ref.grad)), 1e-12);
    EXPECT_LT((g.path.endpoints() - ref.endpoints).norm(), 1e-12);
  }
}

TEST(RegisterLandmarks, TrivialProblemStaysAtZero) {
  PointSet x = oracle::uniform_points(5, 2, 3);
  const ShootingProblem problem(x, x, 0.1, 500.0, false, kKernel);
  const auto r = register_landmarks(problem, MomentumField::Zero(5, 2));
  EXPECT_EQ(r.a0.norm(), 0.0);
  EXPECT_EQ(r.energy, 0.0);
  EXPECT_EQ(r.status, OptimStatus::Converged);
  EXPECT_FALSE(r.no_progress);
}

TEST(RegisterLandmarks, SingleLandmarkClosedForm) {
  PointSet x(1, 2), y(1, 2);
  x << 0.1, -0.3;
  y << 0.4, 0.2;
  const double sigma = 0.1, lambda = 500.0;
  const ShootingProblem problem(x, y, sigma, lambda, false, kKernel);
  OptimOptions opts;
  opts.grad_tol = 1e-9;
  const auto r = register_landmarks(problem, MomentumField::Zero(1, 2), opts);
  const Eigen::RowVectorXd expected = (y.row(0) - x.row(0)) / (1.0 + lambda * sigma * sigma);
  EXPECT_LT((r.a0.row(0) - expected).norm(), 1e-6);
}

TEST(RegisterLandmarks, ReachesGradientTolerance) {
  for (bool logdet : {false, true}) {
    const auto problem = random_problem(20, 77, logdet);
    OptimOptions opts;
    opts.max_iters = 500;
    const MomentumField start = MomentumField::Zero(20, 2);
    const double e0 = shooting_energy(problem, start).energy;
    const auto r = register_landmarks(problem, start, opts);
    EXPECT_LE(r.energy, e0);
    EXPECT_EQ(r.status, OptimStatus::Converged) << "logdet=" << logdet;
    const auto g = shooting_energy_grad(problem, r.a0);
    EXPECT_LE(g.grad.lpNorm<Eigen::Infinity>(), opts.grad_tol);
  }
}

}  // namespace
}  // namespace difficp
