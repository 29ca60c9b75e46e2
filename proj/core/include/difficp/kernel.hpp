#pragma once

#include "difficp/types.hpp"

#include <cmath>
#include <span>

namespace difficp {

/// Largest supported spatial dimension.
inline constexpr int kMaxDim = 3;

struct KernelParams {
  double tau = 0.2;  ///< length scale, same units as point coordinates
  int dim = 2;       ///< spatial dimension d

  void validate() const;
};

/// Derivatives of a radial profile k(s), s = |z|^2, so that K(z) = k(|z|^2).
template <class T>
struct RadialProfile {
  T k0, k1, k2, k3;
};

/// Gaussian RKHS kernel K(z) = exp(-|z|^2 / 2 tau^2).
///
/// Everything downstream is written against the radial profile k(s) and its
/// first three s-derivatives, so swapping in another radial C^2 kernel only
/// means providing a different profile():
///   grad K      = 2 k'(s) z
///   D^2 K       = 4 k''(s) z z^T + 2 k'(s) I
///   Lap K       = 4 s k''(s) + 2 d k'(s)
///   grad Lap K  = ((8 + 4d) k''(s) + 8 s k'''(s)) z
class GaussianKernel {
 public:
  explicit GaussianKernel(KernelParams params);

  const KernelParams& params() const noexcept { return params_; }
  int dim() const noexcept { return params_.dim; }

  template <class T>
  RadialProfile<T> profile(const T& s) const {
    using std::exp;
    const T e = exp(s * neg_half_inv_tau2_);
    return {e, e * c1_, e * c2_, e * c3_};
  }

 private:
  KernelParams params_;
  double neg_half_inv_tau2_;
  double c1_, c2_, c3_;
};

struct KernelDerivatives {
  Vector grad;
  Matrix hess;
  double laplacian = 0.0;
  Vector grad_laplacian;
};

double kernel_eval(const KernelParams& params, std::span<const double> z);
KernelDerivatives kernel_derivatives(const KernelParams& params, std::span<const double> z);

struct VelocitySample {
  Vector v;
  double div = 0.0;
};

/// Velocity field carried by landmarks q with momenta a, and its divergence at z:
///   v(z)     = sum_n [ a_n K(z - q_n) - beta grad K(z - q_n) ]
///   div v(z) = sum_n [ a_n . grad K(z - q_n) - beta Lap K(z - q_n) ]
VelocitySample velocity_eval(const KernelParams& params, const PointSet& q, const MomentumField& a,
                             double beta, std::span<const double> z);

namespace detail {

// Shared inner loop for the velocity and divergence at one location. Both the
// landmark ODE and the transport of arbitrary points go through this so that
// transporting the landmarks themselves repeats the exact same arithmetic.
// `profile_of(m)` returns the radial profile at s = |z - q_m|^2; `v` has room
// for d entries and is overwritten.
template <class T, class ProfileOf>
void accumulate_velocity(int n, int d, const T* q, const T* a, double beta, const T* z,
                         ProfileOf&& profile_of, T* v, T& div, T& lap_sum) {
  for (int i = 0; i < d; ++i) v[i] = T(0.0);
  div = T(0.0);
  lap_sum = T(0.0);
  for (int m = 0; m < n; ++m) {
    const T* qm = q + m * d;
    const T* am = a + m * d;
    T s(0.0);
    T w[kMaxDim];
    for (int i = 0; i < d; ++i) {
      w[i] = z[i] - qm[i];
      s += w[i] * w[i];
    }
    const RadialProfile<T> p = profile_of(m, s);
    const T two_k1 = 2.0 * p.k1;
    T a_dot_w(0.0);
    for (int i = 0; i < d; ++i) {
      v[i] += am[i] * p.k0 - beta * (two_k1 * w[i]);
      a_dot_w += am[i] * w[i];
    }
    const T lap = 4.0 * (s * p.k2) + (2.0 * d) * p.k1;
    div += two_k1 * a_dot_w - beta * lap;
    lap_sum += lap;
  }
}

}  // namespace detail

}  // namespace difficp
