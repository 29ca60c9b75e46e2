#include "difficp/kernel.hpp"

#include <stdexcept>
#include <string>

namespace difficp {

void KernelParams::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("kernel length scale tau must be positive, got " + std::to_string(tau));
  if (dim < 1 || dim > kMaxDim)
    throw std::invalid_argument("spatial dimension must be in [1, 3], got " + std::to_string(dim));
}

GaussianKernel::GaussianKernel(KernelParams params) : params_(params) {
  params_.validate();
  const double inv_tau2 = 1.0 / (params_.tau * params_.tau);
  neg_half_inv_tau2_ = -0.5 * inv_tau2;
  // d^j/ds^j exp(-s / 2tau^2) = (-1 / 2tau^2)^j exp(...)
  c1_ = neg_half_inv_tau2_;
  c2_ = c1_ * c1_;
  c3_ = c2_ * c1_;
}

namespace {

void check_point(const KernelParams& params, std::span<const double> z) {
  if (static_cast<int>(z.size()) != params.dim)
    throw std::invalid_argument("point has " + std::to_string(z.size()) + " coordinates, expected " +
                                std::to_string(params.dim));
}

}  // namespace

double kernel_eval(const KernelParams& params, std::span<const double> z) {
  check_point(params, z);
  const GaussianKernel kernel(params);
  double s = 0.0;
  for (double zi : z) s += zi * zi;
  return kernel.profile(s).k0;
}

KernelDerivatives kernel_derivatives(const KernelParams& params, std::span<const double> z) {
  check_point(params, z);
  const GaussianKernel kernel(params);
  const int d = params.dim;
  const Eigen::Map<const Vector> zv(z.data(), d);
  const double s = zv.squaredNorm();
  const auto p = kernel.profile(s);

  KernelDerivatives out;
  out.grad = 2.0 * p.k1 * zv;
  out.hess = (zv * zv.transpose()) * (4.0 * p.k2) + 2.0 * p.k1 * Matrix::Identity(d, d);
  out.laplacian = 4.0 * s * p.k2 + 2.0 * d * p.k1;
  out.grad_laplacian = ((8.0 + 4.0 * d) * p.k2 + 8.0 * s * p.k3) * zv;
  return out;
}

VelocitySample velocity_eval(const KernelParams& params, const PointSet& q, const MomentumField& a,
                             double beta, std::span<const double> z) {
  check_point(params, z);
  if (q.rows() != a.rows())
    throw std::invalid_argument("velocity_eval: " + std::to_string(q.rows()) + " landmarks but " +
                                std::to_string(a.rows()) + " momenta");
  if (q.cols() != params.dim || a.cols() != params.dim)
    throw std::invalid_argument("velocity_eval: landmark dimension does not match kernel");

  const GaussianKernel kernel(params);
  const int d = params.dim;
  double v[kMaxDim];
  double div = 0.0;
  double lap_sum = 0.0;
  detail::accumulate_velocity<double>(
      static_cast<int>(q.rows()), d, q.data(), a.data(), beta, z.data(),
      [&](int, double s) { return kernel.profile(s); }, v, div, lap_sum);

  VelocitySample out;
  out.v = Eigen::Map<const Vector>(v, d);
  out.div = div;
  return out;
}

}  // namespace difficp
