#include "ctssm/discretization.hpp"

#include <cmath>
#include <mutex>
#include <string>

#include <omp.h>

#include "ctssm/data.hpp"
#include "ctssm/errors.hpp"

namespace ctssm {

Grid::Grid(double b0, double bm, std::size_t m) : b0_(b0), bm_(bm), m_(m) {
  if (!std::isfinite(b0) || !std::isfinite(bm) || !(b0 < bm))
    throw InvalidArgument("Grid: need finite b0 < bm");
  if (m < 2)
    throw InvalidArgument("Grid: need m >= 2, got " + std::to_string(m));
  const double h = width();
  boundaries_.resize(m + 1);
  midpoints_.resize(m);
  for (std::size_t i = 0; i <= m; ++i)
    boundaries_[i] = b0 + static_cast<double>(i) * h;
  boundaries_[m] = bm;
  for (std::size_t i = 0; i < m; ++i)
    midpoints_[i] = b0 + (static_cast<double>(i) + 0.5) * h;
}

std::pair<double, double> default_range(const OUParams &params) {
  const double half = 6.0 * std::sqrt(params.stationary_variance());
  return {params.mu() - half, params.mu() + half};
}

TransitionMatrix transition_matrix(const StateProcess &process, const Grid &grid,
                                   double delta, bool parallel) {
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw InvalidArgument("transition_matrix: delta must be > 0, got " +
                          std::to_string(delta));
  const std::size_t m = grid.m();
  const auto bounds = grid.boundaries();
  const auto mids = grid.midpoints();
  TransitionMatrix out;
  out.delta = delta;
  out.entries.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  std::vector<double> raw(m);

  const auto n = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (parallel && m >= 64)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double *row = out.entries.row(i).data();
    process.transition_masses(mids[static_cast<std::size_t>(i)], delta, bounds,
                              std::span<double>(row, m));
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      sum += row[j];
    raw[static_cast<std::size_t>(i)] = sum;
    if (sum > 0.0)
      for (std::size_t j = 0; j < m; ++j)
        row[j] /= sum;
  }

  double worst = 1.0;
  for (double s : raw)
    worst = std::min(worst, s);
  out.min_raw_row_mass = worst;
  if (!(worst >= 0.5))
    throw IllConditionedGrid("transition_matrix: a row keeps only " +
                             std::to_string(worst) +
                             " of its mass inside the grid; widen [b0, bm]");
  return out;
}

InitialDistribution initial_distribution(const StateProcess &process, const Grid &grid) {
  if (!process.has_stationary_law())
    throw InvalidArgument("initial_distribution: process has no stationary law");
  const std::size_t m = grid.m();
  std::vector<double> masses(m);
  process.stationary_masses(grid.boundaries(), masses);
  double total = 0.0;
  for (double v : masses)
    total += v;
  if (!(total >= 0.5))
    throw IllConditionedGrid("initial_distribution: grid captures only " +
                             std::to_string(total) + " of the stationary mass");
  InitialDistribution out;
  out.captured_mass = total;
  out.probabilities.resize(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i)
    out.probabilities[static_cast<Eigen::Index>(i)] = masses[i] / total;
  return out;
}

namespace {

double std_normal_pdf(double z) {
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return kInvSqrt2Pi * std::exp(-0.5 * z * z);
}

// For masses P(b_j < X < b_{j+1}) of N(mean, sd^2) renormalized over the
// grid, writes d(normalized mass)/dp given d mean/dp and d log sd/dp.
void normalized_mass_derivative(std::span<const double> bounds, double mean, double sd,
                                double d_mean, double d_log_sd, std::span<const double> normalized,
                                double total, std::span<double> out) {
  const std::size_t m = normalized.size();
  auto dcdf = [&](double b) {
    const double z = (b - mean) / sd;
    return std_normal_pdf(z) * (-d_mean / sd - z * d_log_sd);
  };
  double prev = dcdf(bounds[0]);
  double d_total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double next = dcdf(bounds[j + 1]);
    out[j] = next - prev;
    d_total += out[j];
    prev = next;
  }
  for (std::size_t j = 0; j < m; ++j)
    out[j] = (out[j] - normalized[j] * d_total) / total;
}

} // namespace

TransitionSensitivity ou_transition_sensitivity(const OUParams &params, const Grid &grid,
                                                double delta, const RowMatrix &entries) {
  const auto m = static_cast<Eigen::Index>(grid.m());
  if (entries.rows() != m || entries.cols() != m)
    throw InvalidArgument("ou_transition_sensitivity: matrix does not match the grid");
  const auto bounds = grid.boundaries();
  const auto mids = grid.midpoints();
  const double theta = params.theta();
  const double decay = std::exp(-theta * delta);
  const double u = 2.0 * theta * delta;
  // d log sd / d log theta for sd^2 = sigma^2 (1 - e^{-u}) / (2 theta).
  const double dlsd_theta = 0.5 * (u / std::expm1(u) - 1.0);
  TransitionSensitivity out;
  out.d_log_theta.resize(m, m);
  out.d_log_sigma.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double x = mids[static_cast<std::size_t>(i)];
    const GaussianLaw law = ou_transition_law(params, x, delta);
    const double sd = law.sd();
    const double total = law.interval_mass(grid.b0(), grid.bm());
    const std::span<const double> row(entries.row(i).data(), grid.m());
    const double d_mean_theta = -theta * delta * (x - params.mu()) * decay;
    normalized_mass_derivative(bounds, law.mean, sd, d_mean_theta, dlsd_theta, row, total,
                               {out.d_log_theta.row(i).data(), grid.m()});
    normalized_mass_derivative(bounds, law.mean, sd, 0.0, 1.0, row, total,
                               {out.d_log_sigma.row(i).data(), grid.m()});
  }
  return out;
}

InitialSensitivity ou_initial_sensitivity(const OUParams &params, const Grid &grid) {
  const InitialDistribution init = initial_distribution(OUProcess(params), grid);
  const GaussianLaw law = ou_stationary_law(params);
  const std::size_t m = grid.m();
  const std::span<const double> p(init.probabilities.data(), m);
  InitialSensitivity out;
  out.d_log_theta.resize(static_cast<Eigen::Index>(m));
  out.d_log_sigma.resize(static_cast<Eigen::Index>(m));
  // sd^2 = sigma^2 / (2 theta).
  normalized_mass_derivative(grid.boundaries(), law.mean, law.sd(), 0.0, -0.5, p,
                             init.captured_mass, {out.d_log_theta.data(), m});
  normalized_mass_derivative(grid.boundaries(), law.mean, law.sd(), 0.0, 1.0, p,
                             init.captured_mass, {out.d_log_sigma.data(), m});
  return out;
}

std::int64_t MatrixCache::quantize(double delta) {
  return static_cast<std::int64_t>(std::llround(delta / kGapResolution));
}

std::shared_ptr<const TransitionMatrix>
MatrixCache::get(const StateProcess &process, const Grid &grid, double delta) {
  if (!(delta > 0.0))
    throw InvalidArgument("MatrixCache::get: delta must be > 0");
  const std::int64_t key = quantize(delta);
  if (key <= 0)
    throw InvalidArgument("MatrixCache::get: delta is below the 1e-9 time resolution");
  const std::vector<double> sig = process.signature();
  const std::vector<double> gkey{grid.b0(), grid.bm(), static_cast<double>(grid.m())};
  {
    std::shared_lock lock(mutex_);
    if (sig == signature_ && gkey == grid_key_) {
      if (auto it = entries_.find(key); it != entries_.end())
        return it->second;
    }
  }
  // Built outside the lock from the rounded gap, so whichever concurrent
  // miss inserts first, the stored matrix is the same.
  auto built = std::make_shared<const TransitionMatrix>(
      transition_matrix(process, grid, canonical_gap(delta), omp_in_parallel() == 0));
  std::unique_lock lock(mutex_);
  if (sig != signature_ || gkey != grid_key_) {
    entries_.clear();
    signature_ = sig;
    grid_key_ = gkey;
  }
  ++builds_;
  auto [it, inserted] = entries_.emplace(key, std::move(built));
  return it->second;
}

std::size_t MatrixCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::uint64_t MatrixCache::builds() const {
  std::shared_lock lock(mutex_);
  return builds_;
}

void MatrixCache::clear() {
  std::unique_lock lock(mutex_);
  entries_.clear();
  signature_.clear();
  grid_key_.clear();
}

} // namespace ctssm
