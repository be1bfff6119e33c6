#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ctssm/state_process.hpp"

namespace ctssm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Partition of [b0, bm] into m equal intervals. Indices are 0-based here:
/// interval i is (boundary(i), boundary(i+1)) with midpoint(i).
class Grid {
public:
  Grid(double b0, double bm, std::size_t m);

  double b0() const { return b0_; }
  double bm() const { return bm_; }
  std::size_t m() const { return m_; }
  double width() const { return (bm_ - b0_) / static_cast<double>(m_); }

  std::span<const double> boundaries() const { return boundaries_; }
  std::span<const double> midpoints() const { return midpoints_; }
  double boundary(std::size_t i) const { return boundaries_[i]; }
  double midpoint(std::size_t i) const { return midpoints_[i]; }

  bool operator==(const Grid &o) const {
    return b0_ == o.b0_ && bm_ == o.bm_ && m_ == o.m_;
  }

private:
  double b0_;
  double bm_;
  std::size_t m_;
  std::vector<double> boundaries_;
  std::vector<double> midpoints_;
};

inline Grid build_grid(double b0, double bm, std::size_t m) { return {b0, bm, m}; }

/// mu -/+ 6 stationary standard deviations.
std::pair<double, double> default_range(const OUParams &params);

struct TransitionMatrix {
  RowMatrix entries;
  double delta = 0.0;
  /// Smallest raw row sum before renormalization.
  double min_raw_row_mass = 1.0;
};

struct InitialDistribution {
  Eigen::RowVectorXd probabilities;
  double captured_mass = 1.0;
};

/// Gap-dependent transition probabilities between grid intervals, rows
/// renormalized. Rows are built in parallel when `parallel` is set.
TransitionMatrix transition_matrix(const StateProcess &process, const Grid &grid,
                                   double delta, bool parallel = true);

InitialDistribution initial_distribution(const StateProcess &process, const Grid &grid);

/// Derivatives of the renormalized OU transition matrix for gap delta with
/// respect to log theta and log sigma. `entries` is the matrix itself as
/// returned by transition_matrix.
struct TransitionSensitivity {
  RowMatrix d_log_theta;
  RowMatrix d_log_sigma;
};

TransitionSensitivity ou_transition_sensitivity(const OUParams &params, const Grid &grid,
                                                double delta, const RowMatrix &entries);

/// Same for the renormalized stationary initial distribution.
struct InitialSensitivity {
  Eigen::RowVectorXd d_log_theta;
  Eigen::RowVectorXd d_log_sigma;
};

InitialSensitivity ou_initial_sensitivity(const OUParams &params, const Grid &grid);

/// Memoizes transition matrices for one (process signature, grid) at a time,
/// keyed by the gap rounded to 1e-9 and built from that rounded gap. A
/// request for a different process or grid drops the stored matrices. Safe
/// for concurrent use.
class MatrixCache {
public:
  std::shared_ptr<const TransitionMatrix> get(const StateProcess &process,
                                              const Grid &grid, double delta);

  std::size_t size() const;
  /// Matrices built (cache misses) over the lifetime of the cache.
  std::uint64_t builds() const;
  void clear();

  static std::int64_t quantize(double delta);

private:
  mutable std::shared_mutex mutex_;
  std::vector<double> signature_;
  std::vector<double> grid_key_;
  std::map<std::int64_t, std::shared_ptr<const TransitionMatrix>> entries_;
  std::uint64_t builds_ = 0;
};

} // namespace ctssm
