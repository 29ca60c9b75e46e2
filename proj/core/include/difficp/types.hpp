#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace difficp {

/// N points in R^d, one point per row. Row-major so each point is contiguous.
using PointSet = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Initial momenta a_n(0), one row per landmark; same shape as the point set it drives.
using MomentumField = PointSet;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when the Hamiltonian integration produces non-finite or runaway state.
class IntegrationBlowup : public std::runtime_error {
 public:
  IntegrationBlowup(int step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// Raised by the M-step when a mixture component receives zero total responsibility.
class DegenerateClustering : public std::runtime_error {
 public:
  explicit DegenerateClustering(int component)
      : std::runtime_error("degenerate clustering: component " + std::to_string(component) +
                           " has zero total responsibility"),
        component_(component) {}
  int component() const noexcept { return component_; }

 private:
  int component_;
};

struct BoundingBox {
  Vector lower;
  Vector upper;

  double diagonal() const { return (upper - lower).norm(); }
};

inline BoundingBox bounding_box(const PointSet& points) {
  if (points.rows() == 0) throw std::invalid_argument("bounding_box: empty point set");
  return {points.colwise().minCoeff().transpose(), points.colwise().maxCoeff().transpose()};
}

}  // namespace difficp
