#pragma once

// Numerical defaults shared by every module. Change them here, nowhere else.

namespace centaur::constants {

inline constexpr double kGradTol = 1e-8;
/// Tolerance on sum(p) == 1 for probability vectors.
inline constexpr double kDistributionSumTol = 1e-9;
/// Tolerance on sum(fractions) == 1 for dataset splits.
inline constexpr double kFractionSumTol = 1e-9;

inline constexpr double kFiniteDiffStep = 1e-5;
/// Gradient checks pass when |analytic - numeric| / max(|analytic|, |numeric|, floor) <= tol.
inline constexpr double kGradCheckRelTol = 1e-4;
inline constexpr double kGradCheckFloor = 1e-4;

/// Backtracking halvings tried per descent iteration before declaring a stall.
inline constexpr int kMaxStepHalvings = 40;

/// Default warm-start budget for a live refit after one feedback event.
inline constexpr int kDefaultRefitIters = 50;

inline constexpr double kBinaryThreshold = 0.5;

}  // namespace centaur::constants
