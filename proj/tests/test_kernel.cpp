#include <difficp/kernel.hpp>

#include "oracles/finite_difference.hpp"
#include "oracles/random_instances.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace difficp {
namespace {

const KernelParams kParams{0.2, 2};

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double eval(const KernelParams& p, const Vector& z) { return kernel_eval(p, {z.data(), std::size_t(z.size())}); }
KernelDerivatives derivs(const KernelParams& p, const Vector& z) {
  return kernel_derivatives(p, {z.data(), std::size_t(z.size())});
}

TEST(Kernel, ValueAtOriginIsOne) { EXPECT_DOUBLE_EQ(eval(kParams, vec({0.0, 0.0})), 1.0); }

TEST(Kernel, ValueAtOneLengthScale) {
  EXPECT_NEAR(eval(kParams, vec({0.2, 0.0})), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(eval(kParams, vec({0.2, 0.0})), 0.606531, 1e-6);
}

TEST(Kernel, EvenFunction) {
  EXPECT_EQ(eval(kParams, vec({0.2, 0.0})), eval(kParams, vec({-0.2, 0.0})));
}

TEST(Kernel, DerivativesAtOrigin) {
  const auto k = derivs(kParams, vec({0.0, 0.0}));
  EXPECT_EQ(k.grad.norm(), 0.0);
  EXPECT_NEAR(k.laplacian, -50.0, 1e-12);
  EXPECT_EQ(k.grad_laplacian.norm(), 0.0);
}

TEST(Kernel, GradientAtOneLengthScale) {
  const auto k = derivs(kParams, vec({0.2, 0.0}));
  EXPECT_NEAR(k.grad[0], -5.0 * std::exp(-0.5), 1e-14);
  EXPECT_NEAR(k.grad[0], -3.03265, 1e-5);
  EXPECT_EQ(k.grad[1], 0.0);
}

TEST(Kernel, RejectsBadParameters) {
  EXPECT_THROW(eval({0.0, 2}, vec({0.0, 0.0})), std::invalid_argument);
  EXPECT_THROW(eval({0.2, 4}, vec({0.0, 0.0, 0.0, 0.0})), std::invalid_argument);
  EXPECT_THROW(eval(kParams, vec({0.0, 0.0, 0.0})), std::invalid_argument);
}

// All analytic derivatives against central differences of kernel_eval, |z| <= 5 tau.
class KernelFiniteDifference : public ::testing::TestWithParam<int> {};

TEST_P(KernelFiniteDifference, MatchesCentralDifferences) {
  const int d = GetParam();
  const KernelParams p{0.2, d};
  const double step = 1e-5;
  auto f = [&](const Vector& z) { return eval(p, z); };
  auto grad = [&](const Vector& z) { return derivs(p, z).grad; };
  auto lap = [&](const Vector& z) { return derivs(p, z).laplacian; };

  Rng rng(11 + d);
  int checked = 0;
  while (checked < 40) {
    Vector z(d);
    for (int i = 0; i < d; ++i) z[i] = rng.uniform(-1.0, 1.0);
    if (z.norm() > 5.0 * p.tau || z.norm() < 0.05 * p.tau) continue;
    ++checked;
    const auto k = derivs(p, z);

    const Vector g_fd = oracle::central_gradient(f, z, step);
    EXPECT_LT(oracle::relative_error(g_fd, k.grad), 1e-6) << "z = " << z.transpose();

    const Matrix h_fd = oracle::central_jacobian(grad, z, step);
    EXPECT_LT((h_fd - k.hess).norm() / k.hess.norm(), 1e-6);
    EXPECT_LT((k.hess - k.hess.transpose()).norm(), 1e-15);
    EXPECT_NEAR(k.laplacian, k.hess.trace(), 1e-12 * std::abs(k.laplacian) + 1e-14);

    // Laplacian from second differences of the value itself.
    double lap_fd = 0.0;
    const double h2 = 1e-4;
    for (int i = 0; i < d; ++i) {
      Vector zp = z, zm = z;
      zp[i] += h2;
      zm[i] -= h2;
      lap_fd += (f(zp) - 2.0 * f(z) + f(zm)) / (h2 * h2);
    }
    EXPECT_NEAR(lap_fd, k.laplacian, 1e-5 * std::max(1.0, std::abs(k.laplacian)));

    const Vector gl_fd = oracle::central_gradient(lap, z, step);
    // Measured against the kernel's own scale; the field has zeros on a sphere.
    const double gl_scale = std::max(k.grad_laplacian.norm(), 1.0 / (p.tau * p.tau * p.tau));
    EXPECT_LT((gl_fd - k.grad_laplacian).norm() / gl_scale, 1e-6);
  }
}

INSTANTIATE_TEST_SUITE_P(Dimensions, KernelFiniteDifference, ::testing::Values(2, 3));

TEST(Kernel, Parity) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector z = vec({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)});
    const auto kp = derivs(kParams, z);
    const auto km = derivs(kParams, -z);
    EXPECT_EQ(eval(kParams, z), eval(kParams, -z));
    EXPECT_EQ((kp.grad + km.grad).norm(), 0.0);
    EXPECT_EQ((kp.grad_laplacian + km.grad_laplacian).norm(), 0.0);
    EXPECT_EQ((kp.hess - km.hess).norm(), 0.0);
    EXPECT_EQ(kp.laplacian, km.laplacian);
  }
}

TEST(Velocity, ZeroMomentaAndBetaGiveZeroField) {
  const PointSet q = oracle::uniform_points(5, 2, 1);
  const MomentumField a = MomentumField::Zero(5, 2);
  const Vector z = vec({0.1, -0.2});
  const auto s = velocity_eval(kParams, q, a, 0.0, {z.data(), 2});
  EXPECT_EQ(s.v.norm(), 0.0);
  EXPECT_EQ(s.div, 0.0);
}

TEST(Velocity, SingleLandmarkAtEvaluationPoint) {
  const Vector z = vec({0.3, -0.1});
  PointSet q(1, 2);
  q.row(0) = z.transpose();
  MomentumField a(1, 2);
  a << 0.7, -1.3;
  const double beta = 0.01;
  const auto s = velocity_eval(kParams, q, a, beta, {z.data(), 2});
  EXPECT_NEAR(s.v[0], 0.7, 1e-15);
  EXPECT_NEAR(s.v[1], -1.3, 1e-15);
  EXPECT_NEAR(s.div, beta * 2.0 / (0.2 * 0.2), 1e-14);
}

TEST(Velocity, DivergenceMatchesJacobianTrace) {
  const PointSet q = oracle::uniform_points(5, 2, 21);
  const MomentumField a = oracle::normal_momenta(5, 2, 22, 0.5);
  const double beta = 1.0 / 500.0;
  auto v = [&](const Vector& z) { return velocity_eval(kParams, q, a, beta, {z.data(), 2}).v; };
  for (int trial = 0; trial < 10; ++trial) {
    const Vector z = oracle::flatten(oracle::uniform_points(1, 2, 100 + trial));
    const Matrix jac = oracle::central_jacobian(v, z, 1e-5);
    const double div = velocity_eval(kParams, q, a, beta, {z.data(), 2}).div;
    EXPECT_NEAR(jac.trace(), div, 1e-5);
  }
}

TEST(Velocity, LinearInMomentaAndBeta) {
  const PointSet q = oracle::uniform_points(6, 2, 31);
  const MomentumField a1 = oracle::normal_momenta(6, 2, 32, 1.0);
  const MomentumField a2 = oracle::normal_momenta(6, 2, 33, 1.0);
  const double b1 = 0.01, b2 = 0.03, s1 = 0.7, s2 = -1.9;
  const Vector z = vec({0.05, 0.12});
  const auto v1 = velocity_eval(kParams, q, a1, b1, {z.data(), 2});
  const auto v2 = velocity_eval(kParams, q, a2, b2, {z.data(), 2});
  const MomentumField a12 = s1 * a1 + s2 * a2;
  const auto v12 = velocity_eval(kParams, q, a12, s1 * b1 + s2 * b2, {z.data(), 2});
  EXPECT_LT((v12.v - (s1 * v1.v + s2 * v2.v)).norm(), 1e-12);
  EXPECT_NEAR(v12.div, s1 * v1.div + s2 * v2.div, 1e-11);
}

TEST(Velocity, RejectsLengthMismatch) {
  const PointSet q = oracle::uniform_points(3, 2, 1);
  const MomentumField a = MomentumField::Zero(4, 2);
  const Vector z = vec({0.0, 0.0});
  EXPECT_THROW(velocity_eval(kParams, q, a, 0.0, {z.data(), 2}), std::invalid_argument);
}

}  // namespace
}  // namespace difficp
