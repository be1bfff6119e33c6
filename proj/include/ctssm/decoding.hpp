#pragma once

#include <span>
#include <vector>

#include "ctssm/data.hpp"
#include "ctssm/discretization.hpp"
#include "ctssm/emissions.hpp"
#include "ctssm/model.hpp"

namespace ctssm {

/// Most probable state sequence. Indices are 1-based (1..m), matching the
/// decoded-output CSV.
struct DecodedPath {
  std::vector<std::size_t> state_indices;
  std::vector<double> state_values;
  double log_probability = 0.0;
};

/// Viterbi decoding in log space; ties go to the lower state index.
DecodedPath viterbi(const ObservationSequence &seq, const ModelSpec &spec, MatrixCache &cache);

/// Joint log-probability of the data with a given 1-based state path.
double joint_log_probability(const ObservationSequence &seq, const ModelSpec &spec,
                             std::span<const std::size_t> state_indices, MatrixCache &cache);

struct ExpectedTrajectory {
  std::vector<double> expected;
  /// Same covariates with the state at its equilibrium value 0.
  std::vector<double> equilibrium;
};

ExpectedTrajectory expected_trajectory(const DecodedPath &path,
                                       const NegBinSplineEmission &emission,
                                       std::span<const Covariates> covariates);
ExpectedTrajectory expected_trajectory(const DecodedPath &path,
                                       const PoissonScaleEmission &emission);

} // namespace ctssm
