#include "difficp/metrics.hpp"

#include <Eigen/LU>

#include <limits>
#include <stdexcept>

namespace difficp {

std::vector<int> hungarian_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("hungarian_assignment: cost matrix must be square");
  if (!cost.allFinite()) throw std::invalid_argument("hungarian_assignment: costs must be finite");
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Potentials formulation, 1-based with a virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int row = 1; row <= n; ++row) {
    match[0] = row;
    int col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const int r = match[col0];
      double delta = inf;
      int col1 = 0;
      for (int c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double reduced = cost(r - 1, c - 1) - u[r] - v[c];
        if (reduced < minv[c]) {
          minv[c] = reduced;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (int c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const int col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<int> assignment(n, -1);
  for (int c = 1; c <= n; ++c) assignment[match[c] - 1] = c - 1;
  return assignment;
}

double matched_centroid_error(const GmmModel& recovered, const GmmModel& truth) {
  const int c = recovered.components();
  if (truth.components() != c || truth.dim() != recovered.dim())
    throw std::invalid_argument("matched_centroid_error: models differ in size");
  Matrix cost(c, c);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) cost(i, j) = (recovered.means.row(i) - truth.means.row(j)).norm();
  const auto assignment = hungarian_assignment(cost);
  double total = 0.0;
  for (int i = 0; i < c; ++i) total += cost(i, assignment[i]);
  return total / c;
}

double covariance_determinant(const PointSet& points) {
  if (points.rows() < 1) throw std::invalid_argument("covariance_determinant: empty point set");
  const Eigen::RowVectorXd mean = points.colwise().mean();
  const Matrix centered = points.rowwise() - mean;
  const Matrix cov = centered.transpose() * centered / static_cast<double>(points.rows());
  return cov.determinant();
}

double mean_negative_pullback_loglik(const GmmModel& model, const PointSet& warped,
                                     const Vector& log_jacobians) {
  if (warped.rows() != log_jacobians.size() || warped.rows() == 0)
    throw std::invalid_argument("mean_negative_pullback_loglik: need one log-Jacobian per point");
  double total = 0.0;
  for (Eigen::Index i = 0; i < warped.rows(); ++i)
    total -= pullback_log_density(model, {warped.row(i).data(), static_cast<std::size_t>(warped.cols())},
                                  log_jacobians[i]);
  return total / static_cast<double>(warped.rows());
}

}  // namespace difficp
