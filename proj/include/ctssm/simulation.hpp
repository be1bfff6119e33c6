#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctssm/data.hpp"
#include "ctssm/emissions.hpp"
#include "ctssm/inference.hpp"
#include "ctssm/state_process.hpp"

namespace ctssm {

/// Independent stream seed for (master, a, b).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

/// Inter-observation gaps: k ~ Poisson(mean_hours) whole hours, redrawn when
/// k = 0, converted to time units by dividing by hours_per_unit.
struct GapLaw {
  double mean_hours = 30.0;
  double hours_per_unit = 24.0;

  double draw(Rng &rng) const;
};

struct SimSetting {
  OUParams process{0.5, 0.0, 0.5};
  PoissonScaleEmission emission{200.0};
  std::size_t T = 2000;
  GapLaw gaps;
  std::uint64_t seed = 1;

  /// Settings 1-3: (theta, sigma) = (0.02, 0.1), (0.5, 0.5), (2, 1); mu = 0,
  /// alpha = 200.
  static SimSetting numbered(int index, std::size_t T = 2000, std::uint64_t seed = 1);
};

struct SimulatedSequence {
  ObservationSequence data;
  std::vector<double> states;
};

/// T observations with irregular gaps; the first state is drawn from the
/// stationary law.
SimulatedSequence generate_dataset(const SimSetting &setting);

struct SweepRow {
  std::size_t m = 0;
  bool ok = false;
  std::string error;
  double theta = 0.0;
  double sigma = 0.0;
  double alpha = 0.0;
  double seconds = 0.0;
  double neg_llk = 0.0;
  std::string status;
};

struct SweepResult {
  std::vector<SweepRow> rows;
};

/// Fits every m to the same generated dataset on grid [b0, bm].
SweepResult run_m_sweep(const SimSetting &setting, std::span<const std::size_t> m_values,
                        double b0, double bm, const FitOptions &options = {});
SweepResult run_m_sweep(const ObservationSequence &data, std::span<const std::size_t> m_values,
                        double b0, double bm, const FitOptions &options = {});

struct ConsistencyRow {
  std::size_t T = 0;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double theta = 0.0;
  double sigma = 0.0;
  double alpha = 0.0;
  double rel_bias_theta = 0.0;
  double rel_bias_sigma = 0.0;
  double rel_bias_alpha = 0.0;
  double neg_llk = 0.0;
  double seconds = 0.0;
};

struct ConsistencyResult {
  std::vector<ConsistencyRow> rows;
  std::size_t failures = 0;
};

struct ConsistencyOptions {
  std::size_t m = 100;
  double b0 = -2.5;
  double bm = 2.5;
  /// Evaluate the likelihood at the true parameters instead of fitting.
  bool evaluate_only = false;
  FitOptions fit;
};

/// n_replicates independent datasets per T, each fitted from data-driven
/// starting values. Replicates run in parallel; rows come back ordered by
/// (T, replicate).
ConsistencyResult run_consistency_study(const SimSetting &setting,
                                        std::span<const std::size_t> T_values,
                                        std::size_t n_replicates,
                                        const ConsistencyOptions &options = {});

/// Age-effect curves used by the panel generator unless overridden: a peak
/// in the mid teens, decline into the twenties, females shifted down.
std::vector<double> default_omega1();
std::vector<double> default_omega2();

/// Panel shaped like a school-cohort survey: 8 annual then 4 biannual waves,
/// ages 12-28, binary gender, negative binomial counts.
struct PanelConfig {
  std::size_t individuals = 1000;
  std::vector<double> wave_times{0, 1, 2, 3, 4, 5, 6, 7, 9, 11, 13, 15};
  double start_age_lo = 12.0;
  double start_age_hi = 13.0;
  /// Probability that a wave after the first is missed. A wave is only
  /// dropped if the gap it opens stays within max_gap.
  double dropout = 0.0;
  double max_gap = 4.0;
  double female_probability = 626.0 / 1093.0;
  OUParams process{0.222, 0.0, 1.489};
  double phi = 0.570;
  std::vector<double> omega1 = default_omega1();
  std::vector<double> omega2 = default_omega2();
  std::uint64_t seed = 1;
};

struct SimulatedPanel {
  PanelDataset panel;
  /// True states, aligned with panel.entries().
  std::vector<std::vector<double>> states;
};

SimulatedPanel generate_panel(const PanelConfig &config);

} // namespace ctssm
