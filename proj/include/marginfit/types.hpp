#pragma once

#include <Eigen/Dense>

namespace marginfit {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

// Margins below this are rejected wherever diag(M pi) is inverted.
inline constexpr double kMarginFloor = 1e-12;

// Fitted cell probabilities below this are reported as boundary estimates.
inline constexpr double kBoundaryFloor = 1e-10;

// A stationary point with some pi below kDriftCheck is accepted only if the
// next update moves theta by at most kDriftStep.
inline constexpr double kDriftCheck = 1e-6;
inline constexpr double kDriftStep = 1e-4;

}  // namespace marginfit
