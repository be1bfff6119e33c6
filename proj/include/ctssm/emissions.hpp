#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "ctssm/discretization.hpp"
#include "ctssm/splines.hpp"

namespace ctssm {

using Count = std::int64_t;

/// gender: 0 = male (baseline curve f1), 1 = female (f1 + f2).
struct Covariates {
  double age = 0.0;
  int gender = 0;
};

/// Y | X = x ~ Poisson(alpha * exp(x)).
class PoissonScaleEmission {
public:
  explicit PoissonScaleEmission(double alpha);
  double alpha() const { return alpha_; }
  double mean(double x) const;

private:
  double alpha_;
};

/// Y | X = x ~ NegBin(mean nu, dispersion phi), var = nu + nu^2 / phi, with
/// log nu = x + f1(age) + f2(age) * gender.
class NegBinSplineEmission {
public:
  NegBinSplineEmission(double phi, SplineCoefficients omega1, SplineCoefficients omega2,
                       SplineBasis basis = SplineBasis::age_basis());

  double phi() const { return phi_; }
  const SplineCoefficients &omega1() const { return omega1_; }
  const SplineCoefficients &omega2() const { return omega2_; }
  const SplineBasis &basis() const { return basis_; }

  /// f1(age) + f2(age) * gender.
  double covariate_effect(const Covariates &cov) const;
  double mean(double x, const Covariates &cov) const;

private:
  double phi_;
  SplineCoefficients omega1_;
  SplineCoefficients omega2_;
  SplineBasis basis_;
};

using EmissionModel = std::variant<PoissonScaleEmission, NegBinSplineEmission>;

bool needs_covariates(const EmissionModel &emission);

double poisson_logpmf(const PoissonScaleEmission &emission, Count y, double x);
double negbin_logpmf(const NegBinSplineEmission &emission, Count y, double x,
                     const Covariates &cov);
/// The stateless benchmark: negbin_logpmf with the state term removed.
double negbin_marginal_logpmf(const NegBinSplineEmission &emission, Count y,
                              const Covariates &cov);

/// log p(y | x = b*_i) for every midpoint of the grid. `cov` may be null for
/// families without covariates.
void emission_vector(const EmissionModel &emission, Count y, const Covariates *cov,
                     const Grid &grid, std::span<double> out);
std::vector<double> emission_vector(const EmissionModel &emission, Count y,
                                    const Covariates *cov, const Grid &grid);

/// Derivatives of log p(y | x) in the log mean eta and in log phi (zero for
/// the Poisson family). Analytic likelihood gradients are built from these.
struct EmissionScore {
  double d_eta = 0.0;
  double d_log_phi = 0.0;
};

EmissionScore poisson_score(Count y, double log_rate);
EmissionScore negbin_score(Count y, double phi, double eta);

/// Scores at every grid midpoint, for the emission's covariate effect.
void emission_scores(const EmissionModel &emission, Count y, const Covariates *cov,
                     const Grid &grid, std::span<double> d_eta, std::span<double> d_log_phi);

namespace detail {

/// State-free part of the negative binomial log pmf:
/// lgamma(y + phi) - lgamma(phi) - lgamma(y + 1) + phi log phi.
double negbin_constant(Count y, double phi);
/// Adds the state-dependent part for log-mean eta.
double negbin_logpmf_eta(double constant, Count y, double phi, double eta);

double poisson_logpmf_lograte(Count y, double log_rate);
/// digamma(y + phi) - digamma(phi).
double negbin_digamma_difference(Count y, double phi);
EmissionScore negbin_score_eta(double digamma_difference, Count y, double phi, double eta);

} // namespace detail

} // namespace ctssm
