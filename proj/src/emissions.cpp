#include "ctssm/emissions.hpp"

#include <cmath>
#include <string>

#include <gsl/gsl_sf_psi.h>

#include "ctssm/errors.hpp"

namespace ctssm {

namespace {

constexpr double kMaxLogMean = 700.0;

void check_count(Count y) {
  if (y < 0)
    throw InvalidArgument("count must be a non-negative integer, got " + std::to_string(y));
}

void check_log_mean(double eta) {
  if (!(eta <= kMaxLogMean) || std::isnan(eta))
    throw NumericError("log mean " + std::to_string(eta) + " overflows");
}

// lgamma(y + phi) - lgamma(phi). Direct summation for small y avoids the
// cancellation between two huge lgamma values when phi is large.
double log_rising_factorial(double phi, Count y) {
  if (y <= 64) {
    double s = 0.0;
    for (Count k = 0; k < y; ++k)
      s += std::log(phi + static_cast<double>(k));
    return s;
  }
  return std::lgamma(static_cast<double>(y) + phi) - std::lgamma(phi);
}

} // namespace

namespace detail {

double negbin_constant(Count y, double phi) {
  return log_rising_factorial(phi, y) - std::lgamma(static_cast<double>(y) + 1.0);
}

double negbin_logpmf_eta(double constant, Count y, double phi, double eta) {
  const double yd = static_cast<double>(y);
  // phi log(phi / (phi + nu)) + y log(nu / (phi + nu)), with
  // log(phi + nu) = log phi + log1p(nu / phi).
  const double l1p = std::log1p(std::exp(eta) / phi);
  return constant - (phi + yd) * l1p + yd * (eta - std::log(phi));
}

double poisson_logpmf_lograte(Count y, double log_rate) {
  const double yd = static_cast<double>(y);
  const double rate = std::exp(log_rate);
  if (y == 0)
    return -rate;
  return yd * log_rate - rate - std::lgamma(yd + 1.0);
}

double negbin_digamma_difference(Count y, double phi) {
  if (y <= 64) {
    double s = 0.0;
    for (Count k = 0; k < y; ++k)
      s += 1.0 / (phi + static_cast<double>(k));
    return s;
  }
  return gsl_sf_psi(static_cast<double>(y) + phi) - gsl_sf_psi(phi);
}

EmissionScore negbin_score_eta(double digamma_difference, Count y, double phi, double eta) {
  const double yd = static_cast<double>(y);
  const double nu = std::exp(eta);
  const double denom = phi + nu;
  return {phi * (yd - nu) / denom,
          phi * (digamma_difference - std::log1p(nu / phi) + (nu - yd) / denom)};
}

} // namespace detail

PoissonScaleEmission::PoissonScaleEmission(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw InvalidArgument("PoissonScaleEmission: alpha must be > 0");
}

double PoissonScaleEmission::mean(double x) const { return alpha_ * std::exp(x); }

NegBinSplineEmission::NegBinSplineEmission(double phi, SplineCoefficients omega1,
                                           SplineCoefficients omega2, SplineBasis basis)
    : phi_(phi), omega1_(std::move(omega1)), omega2_(std::move(omega2)),
      basis_(std::move(basis)) {
  if (!(phi > 0.0) || !std::isfinite(phi))
    throw InvalidArgument("NegBinSplineEmission: phi must be > 0");
  if (omega1_.omega.size() != basis_.basis_count() ||
      omega2_.omega.size() != basis_.basis_count())
    throw InvalidArgument("NegBinSplineEmission: coefficient vectors must have " +
                          std::to_string(basis_.basis_count()) + " entries");
}

double NegBinSplineEmission::covariate_effect(const Covariates &cov) const {
  if (cov.gender != 0 && cov.gender != 1)
    throw InvalidArgument("gender must be 0 or 1");
  const std::vector<double> b = basis_.eval(cov.age);
  double f1 = 0.0;
  double f2 = 0.0;
  for (std::size_t l = 0; l < b.size(); ++l) {
    f1 += omega1_.omega[l] * b[l];
    f2 += omega2_.omega[l] * b[l];
  }
  return f1 + f2 * static_cast<double>(cov.gender);
}

double NegBinSplineEmission::mean(double x, const Covariates &cov) const {
  return std::exp(x + covariate_effect(cov));
}

bool needs_covariates(const EmissionModel &emission) {
  return std::holds_alternative<NegBinSplineEmission>(emission);
}

double poisson_logpmf(const PoissonScaleEmission &emission, Count y, double x) {
  check_count(y);
  const double log_rate = std::log(emission.alpha()) + x;
  check_log_mean(log_rate);
  return detail::poisson_logpmf_lograte(y, log_rate);
}

double negbin_logpmf(const NegBinSplineEmission &emission, Count y, double x,
                     const Covariates &cov) {
  check_count(y);
  const double eta = x + emission.covariate_effect(cov);
  check_log_mean(eta);
  return detail::negbin_logpmf_eta(detail::negbin_constant(y, emission.phi()), y,
                                   emission.phi(), eta);
}

double negbin_marginal_logpmf(const NegBinSplineEmission &emission, Count y,
                              const Covariates &cov) {
  return negbin_logpmf(emission, y, 0.0, cov);
}

void emission_vector(const EmissionModel &emission, Count y, const Covariates *cov,
                     const Grid &grid, std::span<double> out) {
  check_count(y);
  const auto mids = grid.midpoints();
  if (out.size() != mids.size())
    throw InvalidArgument("emission_vector: output must have m entries");
  if (const auto *pois = std::get_if<PoissonScaleEmission>(&emission)) {
    const double log_alpha = std::log(pois->alpha());
    check_log_mean(log_alpha + mids.back());
    for (std::size_t i = 0; i < mids.size(); ++i)
      out[i] = detail::poisson_logpmf_lograte(y, log_alpha + mids[i]);
    return;
  }
  const auto &nb = std::get<NegBinSplineEmission>(emission);
  if (cov == nullptr)
    throw InvalidArgument("emission_vector: negative binomial emission needs covariates");
  const double effect = nb.covariate_effect(*cov);
  check_log_mean(mids.back() + effect);
  const double constant = detail::negbin_constant(y, nb.phi());
  for (std::size_t i = 0; i < mids.size(); ++i)
    out[i] = detail::negbin_logpmf_eta(constant, y, nb.phi(), mids[i] + effect);
}

std::vector<double> emission_vector(const EmissionModel &emission, Count y,
                                    const Covariates *cov, const Grid &grid) {
  std::vector<double> out(grid.m());
  emission_vector(emission, y, cov, grid, out);
  return out;
}

EmissionScore poisson_score(Count y, double log_rate) {
  check_count(y);
  check_log_mean(log_rate);
  return {static_cast<double>(y) - std::exp(log_rate), 0.0};
}

EmissionScore negbin_score(Count y, double phi, double eta) {
  check_count(y);
  check_log_mean(eta);
  return detail::negbin_score_eta(detail::negbin_digamma_difference(y, phi), y, phi, eta);
}

void emission_scores(const EmissionModel &emission, Count y, const Covariates *cov,
                     const Grid &grid, std::span<double> d_eta, std::span<double> d_log_phi) {
  check_count(y);
  const auto mids = grid.midpoints();
  if (d_eta.size() != mids.size() || d_log_phi.size() != mids.size())
    throw InvalidArgument("emission_scores: outputs must have m entries");
  if (const auto *pois = std::get_if<PoissonScaleEmission>(&emission)) {
    const double log_alpha = std::log(pois->alpha());
    check_log_mean(log_alpha + mids.back());
    const double yd = static_cast<double>(y);
    for (std::size_t i = 0; i < mids.size(); ++i) {
      d_eta[i] = yd - std::exp(log_alpha + mids[i]);
      d_log_phi[i] = 0.0;
    }
    return;
  }
  const auto &nb = std::get<NegBinSplineEmission>(emission);
  if (cov == nullptr)
    throw InvalidArgument("emission_scores: negative binomial emission needs covariates");
  const double effect = nb.covariate_effect(*cov);
  check_log_mean(mids.back() + effect);
  const double dd = detail::negbin_digamma_difference(y, nb.phi());
  for (std::size_t i = 0; i < mids.size(); ++i) {
    const EmissionScore sc = detail::negbin_score_eta(dd, y, nb.phi(), mids[i] + effect);
    d_eta[i] = sc.d_eta;
    d_log_phi[i] = sc.d_log_phi;
  }
}

} // namespace ctssm
