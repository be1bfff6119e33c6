#include "ctssm/kernels.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <string>

#include <omp.h>

#include "ctssm/errors.hpp"

namespace ctssm::kernels {

namespace {

constexpr double kUnderflow = 1e-280;

// Log-space version of one forward step: returns the log of the
// unnormalized mass and leaves the normalized forward vector in `phi`.
double log_space_step(Eigen::RowVectorXd &phi, const TransitionMatrix *gamma,
                      const Eigen::VectorXd &lp) {
  const Eigen::Index m = phi.size();
  const Eigen::RowVectorXd log_phi = phi.array().log();
  Eigen::RowVectorXd la(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    if (!gamma) {
      la[j] = log_phi[j] + lp[j];
      continue;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i)
      mx = std::max(mx, log_phi[i] + std::log(gamma->entries(i, j)));
    double s = 0.0;
    if (std::isfinite(mx))
      for (Eigen::Index i = 0; i < m; ++i)
        s += std::exp(log_phi[i] + std::log(gamma->entries(i, j)) - mx);
    la[j] = (std::isfinite(mx) ? mx + std::log(s) : mx) + lp[j];
  }
  const double mx = la.maxCoeff();
  if (!std::isfinite(mx)) {
    phi.setZero();
    return mx;
  }
  double s = 0.0;
  for (Eigen::Index j = 0; j < m; ++j)
    s += std::exp(la[j] - mx);
  for (Eigen::Index j = 0; j < m; ++j)
    phi[j] = std::exp(la[j] - mx) / s;
  return mx + std::log(s);
}

} // namespace

double forward_pass(const Eigen::RowVectorXd &initial,
                    std::span<const TransitionMatrix *const> gammas,
                    const Eigen::MatrixXd &log_emissions) {
  const Eigen::Index m = initial.size();
  const Eigen::Index n = log_emissions.cols();
  if (log_emissions.rows() != m)
    throw InvalidArgument("forward_pass: emission rows must equal the state count");
  if (n < 1 || gammas.size() != static_cast<std::size_t>(n - 1))
    throw InvalidArgument("forward_pass: need one transition matrix per gap");

  Eigen::RowVectorXd phi = initial;
  Eigen::RowVectorXd v(m);
  Eigen::VectorXd lp(m);
  double loglik = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    lp = log_emissions.col(k);
    const double mx = lp.maxCoeff();
    if (std::isnan(mx))
      throw NumericError("forward_pass: NaN emission at step " + std::to_string(k), k);
    const TransitionMatrix *gamma = k == 0 ? nullptr : gammas[static_cast<std::size_t>(k - 1)];
    if (gamma)
      v.noalias() = phi * gamma->entries;
    else
      v = phi;
    double s = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      v[j] *= std::exp(lp[j] - mx);
      s += v[j];
    }
    if (std::isnan(s))
      throw NumericError("forward_pass: NaN forward mass at step " + std::to_string(k), k);
    if (s > kUnderflow) {
      loglik += std::log(s) + mx;
      phi = v / s;
    } else {
      const double step = log_space_step(phi, gamma, lp);
      if (std::isnan(step))
        throw NumericError("forward_pass: NaN at step " + std::to_string(k), k);
      loglik += step;
      if (!std::isfinite(step))
        return loglik;
    }
  }
  if (std::isnan(loglik))
    throw NumericError("forward_pass: NaN log-likelihood", n - 1);
  return loglik;
}

Eigen::MatrixXd log_emission_matrix(const ObservationSequence &seq, const ModelSpec &spec) {
  if (needs_covariates(spec.emission) && !seq.has_covariates())
    throw InvalidArgument("sequence lacks the covariates required by the emission model");
  const auto m = static_cast<Eigen::Index>(spec.grid.m());
  const auto n = static_cast<std::ptrdiff_t>(seq.size());
  Eigen::MatrixXd out(m, n);
  std::exception_ptr failure;
#pragma omp parallel for schedule(static) if (n >= 256 && omp_in_parallel() == 0)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    try {
      const auto ku = static_cast<std::size_t>(k);
      emission_vector(spec.emission, seq.counts()[ku], seq.covariates_at(ku), spec.grid,
                      std::span<double>(out.col(k).data(), static_cast<std::size_t>(m)));
    } catch (...) {
#pragma omp critical(ctssm_emission_failure)
      if (!failure)
        failure = std::current_exception();
    }
  }
  if (failure)
    std::rethrow_exception(failure);
  return out;
}

Eigen::RowVectorXd initial_vector(const ModelSpec &spec) {
  if (spec.initial) {
    const auto &v = *spec.initial;
    if (v.size() != spec.grid.m())
      throw InvalidArgument("initial distribution must have m entries");
    Eigen::RowVectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i)
      out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
  }
  return initial_distribution(OUProcess(spec.process), spec.grid).probabilities;
}

double sequence_loglik(const ObservationSequence &seq, const ModelSpec &spec,
                       MatrixCache &cache) {
  return sequence_loglik(seq, spec, initial_vector(spec), cache);
}

namespace {

struct TransitionChain {
  std::vector<std::shared_ptr<const TransitionMatrix>> owned;
  std::vector<const TransitionMatrix *> gammas;
};

TransitionChain transition_chain(const ObservationSequence &seq, const ModelSpec &spec,
                                 MatrixCache &cache) {
  const OUProcess process(spec.process);
  TransitionChain chain;
  chain.owned.reserve(seq.size());
  chain.gammas.reserve(seq.size());
  for (std::size_t k = 1; k < seq.size(); ++k) {
    chain.owned.push_back(cache.get(process, spec.grid, seq.gap(k)));
    chain.gammas.push_back(chain.owned.back().get());
  }
  return chain;
}

} // namespace

double sequence_loglik(const ObservationSequence &seq, const ModelSpec &spec,
                       const Eigen::RowVectorXd &initial, MatrixCache &cache) {
  const TransitionChain chain = transition_chain(seq, spec, cache);
  return forward_pass(initial, chain.gammas, log_emission_matrix(seq, spec));
}

Posterior forward_backward(const Eigen::RowVectorXd &initial,
                           std::span<const TransitionMatrix *const> gammas,
                           const Eigen::MatrixXd &log_emissions,
                           const ChainSensitivity *sensitivity) {
  const Eigen::Index m = initial.size();
  const Eigen::Index n = log_emissions.cols();
  if (log_emissions.rows() != m)
    throw InvalidArgument("forward_backward: emission rows must equal the state count");
  if (n < 1 || gammas.size() != static_cast<std::size_t>(n - 1))
    throw InvalidArgument("forward_backward: need one transition matrix per gap");

  Posterior post;
  // Scaled emissions exp(lp - max) and step normalizers are reused by the
  // backward sweep.
  Eigen::MatrixXd scaled(m, n);
  Eigen::VectorXd norm(n);
  Eigen::MatrixXd alpha(m, n);
  Eigen::RowVectorXd phi = initial;
  Eigen::RowVectorXd v(m);
  double loglik = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double mx = log_emissions.col(k).maxCoeff();
    if (std::isnan(mx))
      throw NumericError("forward_backward: NaN emission at step " + std::to_string(k), k);
    const TransitionMatrix *gamma = k == 0 ? nullptr : gammas[static_cast<std::size_t>(k - 1)];
    if (gamma)
      v.noalias() = phi * gamma->entries;
    else
      v = phi;
    double s = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double e = std::exp(log_emissions(j, k) - mx);
      scaled(j, k) = e;
      v[j] *= e;
      s += v[j];
    }
    if (std::isnan(s))
      throw NumericError("forward_backward: NaN forward mass at step " + std::to_string(k), k);
    if (!(s > kUnderflow)) {
      post.ok = false;
      return post;
    }
    loglik += std::log(s) + mx;
    phi = v / s;
    alpha.col(k) = phi.transpose();
    norm[k] = s;
  }

  post.loglik = loglik;
  post.marginals.resize(m, n);
  const std::size_t np = sensitivity ? sensitivity->initial.size() : 0;
  post.chain_gradient.assign(np, 0.0);
  // w_k = e_k * beta_k / s_k is d loglik / d (alpha_{k-1} Gamma_k)_j, so
  // d loglik / d Gamma_k(i, j) = alpha_{k-1}(i) w_k(j).
  Eigen::VectorXd beta = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd w(m);
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    Eigen::VectorXd g = alpha.col(k).cwiseProduct(beta);
    g /= g.sum();
    post.marginals.col(k) = g;
    w = scaled.col(k).cwiseProduct(beta) / norm[k];
    if (k == 0) {
      for (std::size_t p = 0; p < np; ++p)
        post.chain_gradient[p] += sensitivity->initial[p].dot(w.transpose());
      break;
    }
    for (std::size_t p = 0; p < np; ++p)
      post.chain_gradient[p] += alpha.col(k - 1).dot(
          *sensitivity->steps[p][static_cast<std::size_t>(k - 1)] * w);
    beta.noalias() = gammas[static_cast<std::size_t>(k - 1)]->entries * w;
  }
  return post;
}

Posterior sequence_posterior(const ObservationSequence &seq, const ModelSpec &spec,
                             const Eigen::RowVectorXd &initial, MatrixCache &cache,
                             const ChainSensitivity *sensitivity) {
  const TransitionChain chain = transition_chain(seq, spec, cache);
  return forward_backward(initial, chain.gammas, log_emission_matrix(seq, spec), sensitivity);
}

double tree_sum(std::span<const double> values) {
  if (values.empty())
    return 0.0;
  if (values.size() == 1)
    return values[0];
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values)
      s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return tree_sum(values.first(half)) + tree_sum(values.subspan(half));
}

namespace serial {

std::vector<double> sequence_logliks(const PanelDataset &panel, const ModelSpec &spec,
                                     MatrixCache &cache) {
  const auto order = panel.id_order();
  const Eigen::RowVectorXd initial = initial_vector(spec);
  std::vector<double> out(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    out[pos] = sequence_loglik(panel[order[pos]].sequence, spec, initial, cache);
  return out;
}

double panel_loglik(const PanelDataset &panel, const ModelSpec &spec, MatrixCache &cache) {
  const auto values = sequence_logliks(panel, spec, cache);
  return tree_sum(values);
}

} // namespace serial

namespace parallel {

std::vector<double> sequence_logliks(const PanelDataset &panel, const ModelSpec &spec,
                                     MatrixCache &cache) {
  const auto order = panel.id_order();
  const auto n = static_cast<std::ptrdiff_t>(order.size());
  const Eigen::RowVectorXd initial = initial_vector(spec);
  std::vector<double> out(order.size());
  // Build each distinct matrix once, up front, with row-parallel
  // construction; the per-sequence loop below then only hits the cache.
  {
    const OUProcess process(spec.process);
    std::map<std::int64_t, double> gaps;
    for (const auto &entry : panel.entries())
      for (std::size_t k = 1; k < entry.sequence.size(); ++k) {
        const double gap = entry.sequence.gap(k);
        gaps.emplace(MatrixCache::quantize(gap), gap);
      }
    for (const auto &[key, gap] : gaps)
      cache.get(process, spec.grid, gap);
  }
  if (n == 1) {
    out[0] = sequence_loglik(panel[order[0]].sequence, spec, initial, cache);
    return out;
  }
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t pos = 0; pos < n; ++pos) {
    try {
      const auto p = static_cast<std::size_t>(pos);
      out[p] = sequence_loglik(panel[order[p]].sequence, spec, initial, cache);
    } catch (...) {
#pragma omp critical(ctssm_panel_failure)
      if (!failure)
        failure = std::current_exception();
    }
  }
  if (failure)
    std::rethrow_exception(failure);
  return out;
}

double panel_loglik(const PanelDataset &panel, const ModelSpec &spec, MatrixCache &cache) {
  const auto values = sequence_logliks(panel, spec, cache);
  return tree_sum(values);
}

} // namespace parallel

} // namespace ctssm::kernels
