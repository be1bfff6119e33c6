#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ctssm/data.hpp"
#include "ctssm/discretization.hpp"
#include "ctssm/model.hpp"

namespace ctssm::kernels {

/// Scaled forward recursion. Column k of `log_emissions` (m x n) holds
/// log p(y_k | b*_i); `gammas[k - 1]` carries the state from observation
/// k - 1 to k. Each step renormalizes the forward vector and accumulates the
/// log normalizer; a step whose scaled mass underflows is redone in log space.
double forward_pass(const Eigen::RowVectorXd &initial,
                    std::span<const TransitionMatrix *const> gammas,
                    const Eigen::MatrixXd &log_emissions);

/// m x n matrix of log emission probabilities over the grid midpoints.
Eigen::MatrixXd log_emission_matrix(const ObservationSequence &seq, const ModelSpec &spec);

Eigen::RowVectorXd initial_vector(const ModelSpec &spec);

/// Log-likelihood of one sequence; the transition matrices come from `cache`.
double sequence_loglik(const ObservationSequence &seq, const ModelSpec &spec,
                       MatrixCache &cache);
double sequence_loglik(const ObservationSequence &seq, const ModelSpec &spec,
                       const Eigen::RowVectorXd &initial, MatrixCache &cache);

/// Derivatives of the chain's initial vector and transition matrices with
/// respect to a few parameters: initial[p] and steps[p][k - 1] for gap k.
struct ChainSensitivity {
  std::vector<Eigen::RowVectorXd> initial;
  std::vector<std::vector<const RowMatrix *>> steps;
};

struct Posterior {
  double loglik = 0.0;
  /// d loglik / d parameter for the parameters of a ChainSensitivity.
  std::vector<double> chain_gradient;
  /// m x n state marginals P(X_k = b*_i | all observations).
  Eigen::MatrixXd marginals;
  /// False if some forward step underflowed; marginals are then empty and
  /// loglik is not set.
  bool ok = true;
};

/// Scaled forward-backward pass. The forward half performs exactly the
/// operations of forward_pass, so loglik agrees with it bit for bit.
Posterior forward_backward(const Eigen::RowVectorXd &initial,
                           std::span<const TransitionMatrix *const> gammas,
                           const Eigen::MatrixXd &log_emissions,
                           const ChainSensitivity *sensitivity = nullptr);
Posterior sequence_posterior(const ObservationSequence &seq, const ModelSpec &spec,
                             const Eigen::RowVectorXd &initial, MatrixCache &cache,
                             const ChainSensitivity *sensitivity = nullptr);

/// Pairwise summation in the given order.
double tree_sum(std::span<const double> values);

namespace serial {

/// Per-sequence log-likelihoods in id order.
std::vector<double> sequence_logliks(const PanelDataset &panel, const ModelSpec &spec,
                                     MatrixCache &cache);
double panel_loglik(const PanelDataset &panel, const ModelSpec &spec, MatrixCache &cache);

} // namespace serial

namespace parallel {

std::vector<double> sequence_logliks(const PanelDataset &panel, const ModelSpec &spec,
                                     MatrixCache &cache);
double panel_loglik(const PanelDataset &panel, const ModelSpec &spec, MatrixCache &cache);

} // namespace parallel

} // namespace ctssm::kernels
