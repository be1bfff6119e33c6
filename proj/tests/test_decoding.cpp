#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "ctssm/decoding.hpp"
#include "ctssm/errors.hpp"
#include "ctssm/simulation.hpp"

using namespace ctssm;

namespace {

/// Joint log-probability of a 0-based path, assembled from the building
/// blocks directly.
double path_score(const ObservationSequence &seq, const ModelSpec &spec,
                  const std::vector<std::size_t> &path) {
  const OUProcess proc(spec.process);
  const Eigen::RowVectorXd init = initial_distribution(proc, spec.grid).probabilities;
  double v = std::log(init[static_cast<Eigen::Index>(path[0])]);
  for (std::size_t k = 0; k < seq.size(); ++k) {
    const auto e = emission_vector(spec.emission, seq.counts()[k], seq.covariates_at(k), spec.grid);
    if (k > 0) {
      const RowMatrix g = transition_matrix(proc, spec.grid, seq.gap(k), false).entries;
      v += std::log(g(static_cast<Eigen::Index>(path[k - 1]), static_cast<Eigen::Index>(path[k])));
    }
    v += e[path[k]];
  }
  return v;
}

struct Best {
  std::vector<std::size_t> path;
  double score = -std::numeric_limits<double>::infinity();
};

Best enumerate(const ObservationSequence &seq, const ModelSpec &spec) {
  const std::size_t m = spec.grid.m(), n = seq.size();
  std::vector<std::size_t> path(n, 0);
  Best best;
  while (true) {
    const double s = path_score(seq, spec, path);
    if (s > best.score) best = {path, s};
    std::size_t pos = n;
    while (pos > 0) {
      --pos;
      if (++path[pos] < m) break;
      path[pos] = 0;
      if (pos == 0) return best;
    }
  }
}

ObservationSequence random_sequence(std::mt19937_64 &rng, std::size_t n, bool covs) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> t{0.0};
  for (std::size_t k = 1; k < n; ++k) t.push_back(t.back() + 0.1 + 1.5 * u(rng));
  std::vector<Count> y;
  std::vector<Covariates> c;
  std::poisson_distribution<Count> d(covs ? 2.0 : 30.0);
  for (std::size_t k = 0; k < n; ++k) {
    y.push_back(d(rng));
    c.push_back({13.0 + 14.0 * u(rng), k % 2 == 0 ? 0 : 1});
  }
  if (covs) return {t, y, c};
  return {t, y};
}

} // namespace

TEST_CASE("Viterbi matches exhaustive enumeration") {
  std::mt19937_64 rng(77);
  for (int r = 0; r < 30; ++r) {
    const bool negbin = r % 3 == 2;
    const std::size_t m = 2 + static_cast<std::size_t>(r % 4);
    const std::size_t n = 1 + static_cast<std::size_t>(r % 5);
    const ObservationSequence seq = random_sequence(rng, n, negbin);
    const ModelSpec spec{OUParams(0.5 + r * 0.05, 0.0, 0.6),
                         negbin ? EmissionModel(NegBinSplineEmission(0.9, {default_omega1()},
                                                                     {default_omega2()}))
                                : EmissionModel(PoissonScaleEmission(30.0)),
                         Grid(-1.5, 1.5, m), {}};
    MatrixCache cache;
    const DecodedPath d = viterbi(seq, spec, cache);
    const Best b = enumerate(seq, spec);
    REQUIRE(d.state_indices.size() == n);
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(d.state_indices[k] == b.path[k] + 1);
      CHECK(d.state_values[k] == spec.grid.midpoint(b.path[k]));
    }
    CHECK(std::abs(d.log_probability - b.score) < 1e-12 * std::max(1.0, std::abs(b.score)));
    CHECK(d.log_probability == joint_log_probability(seq, spec, d.state_indices, cache));
  }
}

TEST_CASE("decoded path beats random paths") {
  std::mt19937_64 rng(5);
  const ObservationSequence seq = random_sequence(rng, 40, false);
  const ModelSpec spec{OUParams(0.5, 0.0, 0.5), PoissonScaleEmission(30.0), Grid(-2.5, 2.5, 25), {}};
  MatrixCache cache;
  const DecodedPath d = viterbi(seq, spec, cache);
  std::uniform_int_distribution<std::size_t> s(1, 25);
  for (int r = 0; r < 1000; ++r) {
    std::vector<std::size_t> p(40);
    for (auto &x : p) x = s(rng);
    CHECK(joint_log_probability(seq, spec, p, cache) <= d.log_probability);
  }
  std::vector<std::size_t> bad(40, 26);
  CHECK_THROWS_AS(joint_log_probability(seq, spec, bad, cache), InvalidArgument);
  std::vector<std::size_t> short_path(3, 1);
  CHECK_THROWS_AS(joint_log_probability(seq, spec, short_path, cache), InvalidArgument);
}

TEST_CASE("constant data with near-identity transitions decode to one state") {
  const Grid g(-2.5, 2.5, 25);
  const std::size_t k = 17;
  const auto y = static_cast<Count>(std::llround(200.0 * std::exp(g.midpoint(k))));
  std::vector<double> t;
  for (int i = 0; i < 30; ++i) t.push_back(1e-6 * i);
  const ObservationSequence seq(t, std::vector<Count>(30, y));
  const ModelSpec spec{OUParams(0.5, 0.0, 0.5), PoissonScaleEmission(200.0), g, {}};
  MatrixCache cache;
  const DecodedPath d = viterbi(seq, spec, cache);
  for (std::size_t s : d.state_indices) CHECK(s == k + 1);
}

TEST_CASE("ties go to the lower state index") {
  // A vanishing rate makes every emission log-probability negligible next to
  // log(1/m), so all states score exactly the same.
  const ObservationSequence seq(std::vector<double>{0.0}, std::vector<Count>{0});
  for (std::size_t m : {2, 3, 7}) {
    const ModelSpec spec{OUParams(0.5, 0.0, 0.5), PoissonScaleEmission(1e-300), Grid(-1, 1, m),
                         std::vector<double>(m, 1.0 / static_cast<double>(m))};
    MatrixCache cache;
    const auto e = emission_vector(spec.emission, 0, nullptr, spec.grid);
    REQUIRE(std::log(1.0 / static_cast<double>(m)) + e[0] ==
            std::log(1.0 / static_cast<double>(m)) + e[m - 1]);
    CHECK(viterbi(seq, spec, cache).state_indices[0] == 1);
  }
}

TEST_CASE("expected trajectories") {
  const NegBinSplineEmission e(0.6, {default_omega1()}, {default_omega2()});
  const std::vector<Covariates> covs{{13.0, 0}, {15.0, 1}, {19.5, 0}};
  DecodedPath zero{{1, 1, 1}, {0.0, 0.0, 0.0}, 0.0};
  const ExpectedTrajectory a = expected_trajectory(zero, e, covs);
  CHECK(a.expected == a.equilibrium);
  DecodedPath bump{{1, 2, 1}, {0.0, std::log(2.0), 0.0}, 0.0};
  const ExpectedTrajectory b = expected_trajectory(bump, e, covs);
  CHECK(b.expected[1] == doctest::Approx(2.0 * b.equilibrium[1]).epsilon(1e-14));
  CHECK(b.equilibrium[1] == doctest::Approx(e.mean(0.0, covs[1])).epsilon(1e-14));
  CHECK_THROWS_AS(expected_trajectory(bump, e, std::span<const Covariates>(covs.data(), 2)),
                  InvalidArgument);
}

TEST_CASE("a high-state episode shows up in the decoded trajectory") {
  const NegBinSplineEmission e(0.570, {default_omega1()}, {default_omega2()});
  const OUParams process(0.222, 0.0, 1.489);
  const std::vector<double> waves{0, 1, 2, 3, 4, 5, 6, 7, 9, 11, 13, 15};
  std::mt19937_64 rng(314);
  int hits = 0;
  const int replicates = 50;
  for (int r = 0; r < replicates; ++r) {
    std::vector<Count> y;
    std::vector<Covariates> covs;
    std::vector<double> truth;
    for (std::size_t w = 0; w < waves.size(); ++w) {
      const double x = (w >= 3 && w <= 8) ? 2.5 : -1.0;
      const Covariates c{12.5 + waves[w], r % 2};
      std::gamma_distribution<double> lam(e.phi(), e.mean(x, c) / e.phi());
      std::poisson_distribution<Count> cnt(lam(rng));
      y.push_back(cnt(rng));
      covs.push_back(c);
      truth.push_back(x);
    }
    const ObservationSequence seq(waves, y, covs);
    const ModelSpec spec{process, e, Grid(-9, 9, 100), {}};
    MatrixCache cache;
    const DecodedPath d = viterbi(seq, spec, cache);
    const ExpectedTrajectory tr = expected_trajectory(d, e, covs);
    double above = 0.0;
    for (std::size_t w = 3; w <= 8; ++w) above += tr.expected[w] > tr.equilibrium[w] ? 1.0 : 0.0;
    hits += above >= 4.0 ? 1 : 0;
  }
  CHECK(hits >= 0.9 * replicates);
}

TEST_CASE("decoding error falls as the grid is refined") {
  const SimulatedSequence sim = generate_dataset(SimSetting::numbered(2, 500, 12));
  double prev = INFINITY;
  for (std::size_t m : {20, 50, 100}) {
    const ModelSpec spec{OUParams(0.5, 0.0, 0.5), PoissonScaleEmission(200.0), Grid(-2.5, 2.5, m), {}};
    MatrixCache cache;
    const DecodedPath d = viterbi(sim.data, spec, cache);
    double mae = 0.0;
    for (std::size_t k = 0; k < sim.states.size(); ++k) mae += std::abs(d.state_values[k] - sim.states[k]);
    mae /= static_cast<double>(sim.states.size());
    CHECK(mae < prev);
    prev = mae;
  }
}
