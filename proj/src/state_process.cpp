#include "ctssm/state_process.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "ctssm/errors.hpp"

namespace ctssm {

namespace {

std::atomic<std::uint64_t> g_cdf_evaluations{0};

constexpr double kInvSqrt2 = 0.70710678118654752440;

// Lower and upper tail of the standard normal.
double lower_tail(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }
double upper_tail(double z) { return 0.5 * std::erfc(z * kInvSqrt2); }

double standardized_mass(double zlo, double zhi) {
  if (zlo >= 0.0)
    return upper_tail(zlo) - upper_tail(zhi);
  if (zhi <= 0.0)
    return lower_tail(zhi) - lower_tail(zlo);
  return 1.0 - lower_tail(zlo) - upper_tail(zhi);
}

} // namespace

std::uint64_t gaussian_cdf_evaluations() { return g_cdf_evaluations.load(); }

double GaussianLaw::sd() const { return std::sqrt(variance); }

double GaussianLaw::cdf(double x) const {
  g_cdf_evaluations.fetch_add(1, std::memory_order_relaxed);
  if (variance == 0.0)
    return x < mean ? 0.0 : 1.0;
  return lower_tail((x - mean) / sd());
}

double GaussianLaw::interval_mass(double lo, double hi) const {
  g_cdf_evaluations.fetch_add(2, std::memory_order_relaxed);
  if (variance == 0.0)
    return (lo < mean && mean <= hi) ? 1.0 : 0.0;
  const double s = sd();
  return standardized_mass((lo - mean) / s, (hi - mean) / s);
}

void GaussianLaw::interval_masses(std::span<const double> boundaries,
                                  std::span<double> masses) const {
  const std::size_t n = masses.size();
  if (boundaries.size() != n + 1)
    throw InvalidArgument("interval_masses: boundaries must have masses+1 entries");
  g_cdf_evaluations.fetch_add(boundaries.size(), std::memory_order_relaxed);
  if (variance == 0.0) {
    for (std::size_t j = 0; j < n; ++j)
      masses[j] = (boundaries[j] < mean && mean <= boundaries[j + 1]) ? 1.0 : 0.0;
    return;
  }
  const double inv_s = 1.0 / sd();
  // Each boundary is evaluated once; the tail used for a difference depends
  // on which side of the mean the interval sits.
  double z_prev = (boundaries[0] - mean) * inv_s;
  double lo_prev = lower_tail(z_prev);
  double up_prev = upper_tail(z_prev);
  for (std::size_t j = 0; j < n; ++j) {
    const double z = (boundaries[j + 1] - mean) * inv_s;
    const double lo = lower_tail(z);
    const double up = upper_tail(z);
    double mass;
    if (z_prev >= 0.0)
      mass = up_prev - up;
    else if (z <= 0.0)
      mass = lo - lo_prev;
    else
      mass = 1.0 - lo_prev - up;
    masses[j] = mass > 0.0 ? mass : 0.0;
    z_prev = z;
    lo_prev = lo;
    up_prev = up;
  }
}

OUParams::OUParams(double theta, double mu, double sigma)
    : theta_(theta), mu_(mu), sigma_(sigma) {
  if (!(theta > 0.0) || !std::isfinite(theta))
    throw InvalidArgument("OUParams: theta must be finite and > 0, got " +
                          std::to_string(theta));
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw InvalidArgument("OUParams: sigma must be finite and > 0, got " +
                          std::to_string(sigma));
  if (!std::isfinite(mu))
    throw InvalidArgument("OUParams: mu must be finite");
}

GaussianLaw ou_transition_law(const OUParams &p, double x, double delta) {
  if (!(delta > 0.0))
    throw InvalidArgument("ou_transition_law: delta must be > 0, got " +
                          std::to_string(delta));
  const double decay = std::exp(-p.theta() * delta);
  // 1 - exp(-2 theta delta) via expm1 keeps small gaps accurate.
  const double retained = -std::expm1(-2.0 * p.theta() * delta);
  return {decay * x + p.mu() * (-std::expm1(-p.theta() * delta)),
          p.stationary_variance() * retained};
}

GaussianLaw ou_stationary_law(const OUParams &p) {
  return {p.mu(), p.stationary_variance()};
}

SamplePath simulate_exact(const OUParams &params, double x0,
                          std::span<const double> times, Rng &rng) {
  SamplePath path;
  if (times.empty())
    return path;
  if (times.front() < 0.0)
    throw InvalidArgument("simulate_exact: times must be non-negative");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1]))
      throw InvalidArgument("simulate_exact: times must be strictly increasing");

  std::normal_distribution<double> z(0.0, 1.0);
  path.times.assign(times.begin(), times.end());
  path.values.reserve(times.size());
  double x = x0;
  path.values.push_back(x);
  for (std::size_t k = 1; k < times.size(); ++k) {
    const GaussianLaw law = ou_transition_law(params, x, times[k] - times[k - 1]);
    x = law.mean + law.sd() * z(rng);
    path.values.push_back(x);
  }
  return path;
}

SamplePath simulate_euler_maruyama(const OUParams &params, double x0,
                                   double step, double horizon, Rng &rng) {
  if (!(step > 0.0) || !(horizon > 0.0))
    throw InvalidArgument("simulate_euler_maruyama: step and horizon must be > 0");
  const auto n = static_cast<std::size_t>(std::llround(std::floor(horizon / step + 1e-9)));
  std::normal_distribution<double> z(0.0, 1.0);
  const double noise = params.sigma() * std::sqrt(step);
  SamplePath path;
  path.times.reserve(n + 1);
  path.values.reserve(n + 1);
  double x = x0;
  path.times.push_back(0.0);
  path.values.push_back(x);
  for (std::size_t k = 1; k <= n; ++k) {
    x += params.theta() * (params.mu() - x) * step + noise * z(rng);
    path.times.push_back(static_cast<double>(k) * step);
    path.values.push_back(x);
  }
  return path;
}

void OUProcess::transition_masses(double from, double delta,
                                  std::span<const double> boundaries,
                                  std::span<double> masses) const {
  ou_transition_law(params_, from, delta).interval_masses(boundaries, masses);
}

void OUProcess::stationary_masses(std::span<const double> boundaries,
                                  std::span<double> masses) const {
  ou_stationary_law(params_).interval_masses(boundaries, masses);
}

std::vector<double> OUProcess::signature() const {
  return {params_.theta(), params_.mu(), params_.sigma()};
}

} // namespace ctssm
