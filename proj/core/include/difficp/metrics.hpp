#pragma once

#include "difficp/gmm.hpp"
#include "difficp/types.hpp"

#include <vector>

namespace difficp {

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method).
/// Returns assignment[row] = column.
std::vector<int> hungarian_assignment(const Matrix& cost);

/// Mean distance between matched centroids under the optimal one-to-one matching.
/// Both models must have the same number of components.
double matched_centroid_error(const GmmModel& recovered, const GmmModel& truth);

/// Determinant of the sample covariance (divides by N).
double covariance_determinant(const PointSet& points);

/// -(1/N) sum_n [ log f(warped_n) + log_jacobians_n ].
double mean_negative_pullback_loglik(const GmmModel& model, const PointSet& warped,
                                     const Vector& log_jacobians);

}  // namespace difficp
