#pragma once

// Classic LDDMM landmark matching (no divergence term), written from scratch
// with dense Jacobians and forward sensitivities. It shares nothing with the
// library's integrator beyond the choice of Ralston's scheme, so it serves as
// an independent check of the beta = 0 path.

#include <difficp/types.hpp>

#include <cmath>

namespace difficp::oracle {

struct ClassicLandmarkResult {
  double energy = 0.0;
  MomentumField grad;
  PointSet endpoints;
};

class ClassicLandmark {
 public:
  ClassicLandmark(PointSet source, PointSet targets, double sigma, double lambda, double tau, int steps)
      : x_(std::move(source)), y_(std::move(targets)), sigma_(sigma), lambda_(lambda), tau_(tau),
        steps_(steps), n_(x_.rows()), d_(x_.cols()) {}

  ClassicLandmarkResult run(const MomentumField& a0) const {
    const Eigen::Index nd = n_ * d_;
    Vector state(2 * nd);
    state.head(nd) = Eigen::Map<const Vector>(x_.data(), nd);
    state.tail(nd) = Eigen::Map<const Vector>(a0.data(), nd);
    Matrix sens = Matrix::Zero(2 * nd, nd);
    sens.bottomRows(nd).setIdentity();
    Vector reg_sens = Vector::Zero(nd);
    double reg = 0.0;

    const double h = 1.0 / steps_;
    const double c = 2.0 * h / 3.0;
    for (int s = 0; s < steps_; ++s) {
      const Vector k1 = field(state);
      const Matrix j1 = jacobian(state);
      const Matrix s_k1 = j1 * sens;
      const Vector state2 = state + c * k1;
      const Matrix sens2 = sens + c * s_k1;
      const Vector k2 = field(state2);
      const Matrix s_k2 = jacobian(state2) * sens2;

      reg += h * (0.25 * integrand(state) + 0.75 * integrand(state2));
      reg_sens += h * (0.25 * sens.transpose() * integrand_grad(state) +
                       0.75 * sens2.transpose() * integrand_grad(state2));

      state = state + h * (0.25 * k1 + 0.75 * k2);
      sens = sens + h * (0.25 * s_k1 + 0.75 * s_k2);
    }

    ClassicLandmarkResult out;
    out.endpoints = Eigen::Map<const PointSet>(state.data(), n_, d_);
    const Vector resid = state.head(nd) - Eigen::Map<const Vector>(y_.data(), nd);
    const double inv_s2 = 1.0 / (sigma_ * sigma_);
    out.energy = 0.5 * inv_s2 * resid.squaredNorm() + 0.5 * lambda_ * reg;
    const Vector g = sens.topRows(nd).transpose() * (inv_s2 * resid) + 0.5 * lambda_ * reg_sens;
    out.grad = Eigen::Map<const MomentumField>(g.data(), n_, d_);
    return out;
  }

 private:
  double k(const Vector& w) const { return std::exp(-w.squaredNorm() / (2.0 * tau_ * tau_)); }
  Vector grad_k(const Vector& w) const { return -w / (tau_ * tau_) * k(w); }
  Matrix hess_k(const Vector& w) const {
    const double t2 = tau_ * tau_;
    return (w * w.transpose() / (t2 * t2) - Matrix::Identity(d_, d_) / t2) * k(w);
  }

  Vector q_of(const Vector& s, Eigen::Index i) const { return s.segment(i * d_, d_); }
  Vector a_of(const Vector& s, Eigen::Index i) const { return s.segment(n_ * d_ + i * d_, d_); }

  // q' = sum_m a_m K(q_n - q_m),  a' = -sum_m (a_n.a_m) grad K(q_n - q_m)
  Vector field(const Vector& s) const {
    Vector f = Vector::Zero(s.size());
    for (Eigen::Index n = 0; n < n_; ++n) {
      for (Eigen::Index m = 0; m < n_; ++m) {
        const Vector w = q_of(s, n) - q_of(s, m);
        f.segment(n * d_, d_) += a_of(s, m) * k(w);
        f.segment(n_ * d_ + n * d_, d_) -= a_of(s, n).dot(a_of(s, m)) * grad_k(w);
      }
    }
    return f;
  }

  Matrix jacobian(const Vector& s) const {
    const Eigen::Index nd = n_ * d_;
    Matrix jac = Matrix::Zero(2 * nd, 2 * nd);
    for (Eigen::Index n = 0; n < n_; ++n) {
      for (Eigen::Index m = 0; m < n_; ++m) {
        const Vector w = q_of(s, n) - q_of(s, m);
        jac.block(n * d_, nd + m * d_, d_, d_) += k(w) * Matrix::Identity(d_, d_);
        if (m == n) continue;
        const Vector g = grad_k(w);
        const Matrix hk = hess_k(w);
        const Vector an = a_of(s, n), am = a_of(s, m);
        jac.block(n * d_, n * d_, d_, d_) += am * g.transpose();
        jac.block(n * d_, m * d_, d_, d_) -= am * g.transpose();
        jac.block(nd + n * d_, nd + n * d_, d_, d_) -= g * am.transpose();
        jac.block(nd + n * d_, nd + m * d_, d_, d_) -= g * an.transpose();
        jac.block(nd + n * d_, n * d_, d_, d_) -= an.dot(am) * hk;
        jac.block(nd + n * d_, m * d_, d_, d_) += an.dot(am) * hk;
      }
    }
    return jac;
  }

  double integrand(const Vector& s) const {
    double total = 0.0;
    for (Eigen::Index n = 0; n < n_; ++n)
      for (Eigen::Index m = 0; m < n_; ++m)
        total += a_of(s, n).dot(a_of(s, m)) * k(q_of(s, n) - q_of(s, m));
    return total;
  }

  Vector integrand_grad(const Vector& s) const {
    Vector g = Vector::Zero(s.size());
    for (Eigen::Index n = 0; n < n_; ++n) {
      for (Eigen::Index m = 0; m < n_; ++m) {
        const Vector w = q_of(s, n) - q_of(s, m);
        g.segment(n * d_, d_) += 2.0 * a_of(s, n).dot(a_of(s, m)) * grad_k(w);
        g.segment(n_ * d_ + n * d_, d_) += 2.0 * a_of(s, m) * k(w);
      }
    }
    return g;
  }

  PointSet x_;
  PointSet y_;
  double sigma_, lambda_, tau_;
  int steps_;
  Eigen::Index n_, d_;
};

}  // namespace difficp::oracle
