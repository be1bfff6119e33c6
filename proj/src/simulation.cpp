#include "ctssm/simulation.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <string>

#include "ctssm/errors.hpp"

namespace ctssm {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(a),      static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),      static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

double GapLaw::draw(Rng &rng) const {
  std::poisson_distribution<long> hours(mean_hours);
  long k = 0;
  while (k == 0)
    k = hours(rng);
  return static_cast<double>(k) / hours_per_unit;
}

SimSetting SimSetting::numbered(int index, std::size_t T, std::uint64_t seed) {
  SimSetting s;
  switch (index) {
  case 1:
    s.process = OUParams(0.02, 0.0, 0.1);
    break;
  case 2:
    s.process = OUParams(0.5, 0.0, 0.5);
    break;
  case 3:
    s.process = OUParams(2.0, 0.0, 1.0);
    break;
  default:
    throw InvalidArgument("unknown simulation setting " + std::to_string(index) +
                          " (valid settings: 1, 2, 3)");
  }
  s.T = T;
  s.seed = seed;
  return s;
}

SimulatedSequence generate_dataset(const SimSetting &setting) {
  if (setting.T < 2)
    throw InvalidArgument("generate_dataset: T must be >= 2");
  Rng rng(setting.seed);
  std::vector<double> times(setting.T);
  times[0] = 0.0;
  for (std::size_t k = 1; k < setting.T; ++k)
    times[k] = times[k - 1] + setting.gaps.draw(rng);

  const GaussianLaw stationary = ou_stationary_law(setting.process);
  std::normal_distribution<double> z(0.0, 1.0);
  const double x0 = stationary.mean + stationary.sd() * z(rng);
  SamplePath path = simulate_exact(setting.process, x0, times, rng);

  std::vector<Count> counts(setting.T);
  for (std::size_t k = 0; k < setting.T; ++k) {
    std::poisson_distribution<Count> y(setting.emission.mean(path.values[k]));
    counts[k] = y(rng);
  }
  return {ObservationSequence(std::move(times), std::move(counts)), std::move(path.values)};
}

SweepResult run_m_sweep(const ObservationSequence &data, std::span<const std::size_t> m_values,
                        double b0, double bm, const FitOptions &options) {
  SweepResult out;
  const PanelDataset panel(data);
  for (std::size_t m : m_values) {
    SweepRow row;
    row.m = m;
    try {
      const ModelTemplate start = starting_template(panel, Family::PoissonScale, Grid(b0, bm, m));
      const FitResult r = fit(panel, start, options);
      row.ok = true;
      row.theta = r.estimate("theta");
      row.sigma = r.estimate("sigma");
      row.alpha = r.estimate("alpha");
      row.seconds = r.convergence.seconds;
      row.neg_llk = -r.loglik;
      row.status = r.convergence.status;
    } catch (const std::exception &e) {
      row.ok = false;
      row.error = e.what();
      row.status = "failed";
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

SweepResult run_m_sweep(const SimSetting &setting, std::span<const std::size_t> m_values,
                        double b0, double bm, const FitOptions &options) {
  return run_m_sweep(generate_dataset(setting).data, m_values, b0, bm, options);
}

ConsistencyResult run_consistency_study(const SimSetting &setting,
                                        std::span<const std::size_t> T_values,
                                        std::size_t n_replicates,
                                        const ConsistencyOptions &options) {
  ConsistencyResult out;
  out.rows.resize(T_values.size() * n_replicates);
  const double theta0 = setting.process.theta();
  const double sigma0 = setting.process.sigma();
  const double alpha0 = setting.emission.alpha();
  const auto total = static_cast<std::ptrdiff_t>(out.rows.size());

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t idx = 0; idx < total; ++idx) {
    const auto u = static_cast<std::size_t>(idx);
    ConsistencyRow &row = out.rows[u];
    row.T = T_values[u / n_replicates];
    row.replicate = u % n_replicates;
    row.seed = derive_seed(setting.seed, row.T, row.replicate);
    try {
      SimSetting s = setting;
      s.T = row.T;
      s.seed = row.seed;
      const PanelDataset panel(generate_dataset(s).data);
      const Grid grid(options.b0, options.bm, options.m);
      const auto t0 = std::chrono::steady_clock::now();
      if (options.evaluate_only) {
        MatrixCache cache;
        const ModelSpec spec{setting.process, setting.emission, grid, std::nullopt};
        row.neg_llk = -panel_loglik(panel, spec, cache);
        row.theta = theta0;
        row.sigma = sigma0;
        row.alpha = alpha0;
        row.ok = std::isfinite(row.neg_llk);
      } else {
        FitOptions fo = options.fit;
        fo.seed = row.seed;
        const FitResult r = fit(panel, starting_template(panel, Family::PoissonScale, grid), fo);
        row.theta = r.estimate("theta");
        row.sigma = r.estimate("sigma");
        row.alpha = r.estimate("alpha");
        row.neg_llk = -r.loglik;
        row.ok = r.converged();
        if (!row.ok)
          row.error = "optimizer status " + r.convergence.status;
      }
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      row.rel_bias_theta = (row.theta - theta0) / theta0;
      row.rel_bias_sigma = (row.sigma - sigma0) / sigma0;
      row.rel_bias_alpha = (row.alpha - alpha0) / alpha0;
    } catch (const std::exception &e) {
      row.ok = false;
      row.error = e.what();
    }
  }
  for (const auto &r : out.rows)
    out.failures += r.ok ? 0 : 1;
  return out;
}

std::vector<double> default_omega1() { return {-0.8, 0.0, -0.4, -0.9, -1.3, -1.6, -1.3, -1.0}; }

std::vector<double> default_omega2() { return {-0.6, -0.6, -0.6, -0.6, -0.6, -0.6, -0.6, -0.6}; }

SimulatedPanel generate_panel(const PanelConfig &config) {
  const SplineBasis basis = SplineBasis::age_basis();
  if (config.wave_times.empty())
    throw InvalidArgument("generate_panel: no waves");
  for (std::size_t w = 1; w < config.wave_times.size(); ++w)
    if (!(config.wave_times[w] > config.wave_times[w - 1]))
      throw InvalidArgument("generate_panel: wave times must be increasing");
  if (!(config.start_age_lo <= config.start_age_hi))
    throw InvalidArgument("generate_panel: start_age_lo > start_age_hi");
  const double age_min = config.start_age_lo + config.wave_times.front();
  const double age_max = config.start_age_hi + config.wave_times.back();
  if (age_min < basis.domain_lo() || age_max > basis.domain_hi())
    throw InvalidArgument("generate_panel: ages [" + std::to_string(age_min) + ", " +
                          std::to_string(age_max) + "] leave the spline domain [7, 35]");
  if (!(config.dropout >= 0.0 && config.dropout < 1.0))
    throw InvalidArgument("generate_panel: dropout must be in [0, 1)");
  if (config.individuals == 0)
    throw InvalidArgument("generate_panel: need at least one individual");

  const NegBinSplineEmission emission(config.phi, {config.omega1}, {config.omega2}, basis);
  const GaussianLaw stationary = ou_stationary_law(config.process);
  Rng rng(config.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);

  SimulatedPanel out;
  const std::size_t waves = config.wave_times.size();
  for (std::size_t ind = 0; ind < config.individuals; ++ind) {
    const double start_age =
        config.start_age_lo + (config.start_age_hi - config.start_age_lo) * unif(rng);
    const int gender = unif(rng) < config.female_probability ? 1 : 0;

    std::vector<double> times{config.wave_times[0]};
    for (std::size_t w = 1; w < waves; ++w) {
      const bool last = w + 1 == waves;
      const bool may_drop =
          last || config.wave_times[w + 1] - times.back() <= config.max_gap + 1e-12;
      const bool drop = unif(rng) < config.dropout;
      if (!(drop && may_drop))
        times.push_back(config.wave_times[w]);
    }

    const double x0 = stationary.mean + stationary.sd() * z(rng);
    SamplePath path = simulate_exact(config.process, x0, times, rng);
    std::vector<Count> counts;
    std::vector<Covariates> covs;
    for (std::size_t k = 0; k < times.size(); ++k) {
      const Covariates c{start_age + times[k] - config.wave_times[0], gender};
      const double nu = emission.mean(path.values[k], c);
      std::gamma_distribution<double> mix(config.phi, nu / config.phi);
      const double lambda = mix(rng);
      Count y = 0;
      if (lambda > 1e-300) {
        std::poisson_distribution<Count> pois(lambda);
        y = pois(rng);
      }
      counts.push_back(y);
      covs.push_back(c);
    }
    out.panel.add(std::to_string(ind + 1),
                  ObservationSequence(std::move(times), std::move(counts), std::move(covs)));
    out.states.push_back(std::move(path.values));
  }
  return out;
}

} // namespace ctssm
