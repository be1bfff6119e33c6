#include "ctssm/decoding.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <memory>

#include "ctssm/errors.hpp"
#include "ctssm/kernels.hpp"

namespace ctssm {

namespace {

struct LogTransitions {
  std::vector<std::shared_ptr<const TransitionMatrix>> owned;
  std::map<const TransitionMatrix *, RowMatrix> logs;
  std::vector<const RowMatrix *> per_gap;
};

LogTransitions log_transitions(const ObservationSequence &seq, const ModelSpec &spec,
                               MatrixCache &cache) {
  LogTransitions out;
  const OUProcess process(spec.process);
  for (std::size_t k = 1; k < seq.size(); ++k) {
    auto g = cache.get(process, spec.grid, seq.gap(k));
    auto it = out.logs.find(g.get());
    if (it == out.logs.end())
      it = out.logs.emplace(g.get(), g->entries.array().log().matrix()).first;
    out.per_gap.push_back(&it->second);
    out.owned.push_back(std::move(g));
  }
  return out;
}

} // namespace

DecodedPath viterbi(const ObservationSequence &seq, const ModelSpec &spec, MatrixCache &cache) {
  const auto m = static_cast<Eigen::Index>(spec.grid.m());
  const std::size_t n = seq.size();
  const Eigen::MatrixXd lp = kernels::log_emission_matrix(seq, spec);
  const Eigen::RowVectorXd log_init = kernels::initial_vector(spec).array().log().matrix();
  const LogTransitions lt = log_transitions(seq, spec, cache);

  std::vector<std::vector<Eigen::Index>> back(n, std::vector<Eigen::Index>(static_cast<std::size_t>(m), 0));
  Eigen::VectorXd score(m);
  Eigen::VectorXd next(m);
  for (Eigen::Index j = 0; j < m; ++j)
    score[j] = log_init[j] + lp(j, 0);
  for (std::size_t k = 1; k < n; ++k) {
    const RowMatrix &lg = *lt.per_gap[k - 1];
    for (Eigen::Index j = 0; j < m; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      Eigen::Index arg = 0;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double v = score[i] + lg(i, j);
        if (v > best) {
          best = v;
          arg = i;
        }
      }
      next[j] = best + lp(j, static_cast<Eigen::Index>(k));
      back[k][static_cast<std::size_t>(j)] = arg;
    }
    score.swap(next);
  }
  Eigen::Index last = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < m; ++j)
    if (score[j] > best) {
      best = score[j];
      last = j;
    }
  if (std::isnan(best))
    throw NumericError("viterbi: NaN path score");

  DecodedPath path;
  path.log_probability = best;
  path.state_indices.resize(n);
  path.state_values.resize(n);
  Eigen::Index cur = last;
  for (std::size_t k = n; k-- > 0;) {
    path.state_indices[k] = static_cast<std::size_t>(cur) + 1;
    path.state_values[k] = spec.grid.midpoint(static_cast<std::size_t>(cur));
    if (k > 0)
      cur = back[k][static_cast<std::size_t>(cur)];
  }
  return path;
}

double joint_log_probability(const ObservationSequence &seq, const ModelSpec &spec,
                             std::span<const std::size_t> state_indices, MatrixCache &cache) {
  if (state_indices.size() != seq.size())
    throw InvalidArgument("joint_log_probability: path length differs from the sequence");
  for (std::size_t s : state_indices)
    if (s < 1 || s > spec.grid.m())
      throw InvalidArgument("joint_log_probability: state index out of range");
  const Eigen::MatrixXd lp = kernels::log_emission_matrix(seq, spec);
  const Eigen::RowVectorXd log_init = kernels::initial_vector(spec).array().log().matrix();
  const LogTransitions lt = log_transitions(seq, spec, cache);
  auto idx = [&](std::size_t k) { return static_cast<Eigen::Index>(state_indices[k] - 1); };
  double v = log_init[idx(0)] + lp(idx(0), 0);
  for (std::size_t k = 1; k < seq.size(); ++k) {
    v = v + (*lt.per_gap[k - 1])(idx(k - 1), idx(k));
    v = v + lp(idx(k), static_cast<Eigen::Index>(k));
  }
  return v;
}

ExpectedTrajectory expected_trajectory(const DecodedPath &path,
                                       const NegBinSplineEmission &emission,
                                       std::span<const Covariates> covariates) {
  if (covariates.size() != path.state_values.size())
    throw InvalidArgument("expected_trajectory: covariates and path differ in length");
  ExpectedTrajectory out;
  out.expected.reserve(covariates.size());
  out.equilibrium.reserve(covariates.size());
  for (std::size_t k = 0; k < covariates.size(); ++k) {
    const double effect = emission.covariate_effect(covariates[k]);
    out.expected.push_back(std::exp(path.state_values[k] + effect));
    out.equilibrium.push_back(std::exp(effect));
  }
  return out;
}

ExpectedTrajectory expected_trajectory(const DecodedPath &path,
                                       const PoissonScaleEmission &emission) {
  ExpectedTrajectory out;
  for (double x : path.state_values) {
    out.expected.push_back(emission.mean(x));
    out.equilibrium.push_back(emission.alpha());
  }
  return out;
}

} // namespace ctssm
