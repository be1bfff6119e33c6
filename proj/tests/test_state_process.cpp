#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "ctssm/errors.hpp"
#include "ctssm/state_process.hpp"
#include "test_support.hpp"

using namespace ctssm;
using test_support::mean;
using test_support::variance;

TEST_CASE("OU parameters are validated") {
  CHECK_THROWS_AS(OUParams(0.0, 0.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(OUParams(-1.0, 0.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(OUParams(1.0, 0.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(OUParams(1.0, NAN, 1.0), InvalidArgument);
  CHECK_THROWS_AS(ou_transition_law(OUParams(1, 0, 1), 0.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(ou_transition_law(OUParams(1, 0, 1), 0.0, -1.0), InvalidArgument);
}

TEST_CASE("transition law closed form") {
  const OUParams p(0.5, 0.0, 0.5);
  for (double delta : {0.1, 1.0, 7.0})
    CHECK(ou_transition_law(p, 0.0, delta).mean == 0.0);

  // Hand-evaluated: e^{-1/2} and 0.25 (1 - e^{-1}).
  const GaussianLaw law = ou_transition_law(p, 1.0, 1.0);
  CHECK(law.mean == doctest::Approx(0.6065306597126334).epsilon(1e-14));
  CHECK(law.variance == doctest::Approx(0.15803013970713942).epsilon(1e-14));

  const GaussianLaw far = ou_transition_law(OUParams(2.0, 0.0, 1.0), 1.7, 100.0);
  CHECK(std::abs(far.mean) < 1e-80);
  CHECK(far.variance == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("Euler-Maruyama weak accuracy against the exact law") {
  const OUParams p(0.5, 0.0, 0.5);
  Rng rng(20240611);
  const int n = 100000;
  std::vector<double> end(n);
  for (int r = 0; r < n; ++r)
    end[r] = simulate_euler_maruyama(p, 1.0, 0.001, 1.0, rng).values.back();
  const GaussianLaw law = ou_transition_law(p, 1.0, 1.0);
  const double se_mean = std::sqrt(law.variance / n);
  const double se_var = law.variance * std::sqrt(2.0 / (n - 1));
  CHECK(std::abs(mean(end) - law.mean) < 3 * se_mean);
  CHECK(std::abs(variance(end) - law.variance) < 3 * se_var);
}

TEST_CASE("stationary law") {
  for (auto [theta, sigma] : {std::pair{0.02, 0.1}, {0.5, 0.5}, {2.0, 1.0}}) {
    const GaussianLaw s = ou_stationary_law(OUParams(theta, 0.0, sigma));
    CHECK(s.mean == 0.0);
    // sigma^2 / (2 theta) rounds differently per pair, so allow a few ulps.
    CHECK(std::abs(s.variance - 0.25) <= 4 * std::numeric_limits<double>::epsilon() * 0.25);
  }
  const GaussianLaw cs = ou_stationary_law(OUParams(0.222, 0.0, 1.489));
  CHECK(cs.sd() == doctest::Approx(2.23).epsilon(0.005));
  for (double t : {0.1, 1.0, 3.0})
    for (double s : {0.2, 2.0})
      CHECK(ou_stationary_law(OUParams(t, 5.0, s)).mean == 5.0);
}

TEST_CASE("transition variance increases to the stationary value") {
  for (auto [theta, mu, sigma, x] :
       {std::tuple{0.5, 0.0, 0.5, 1.0}, {2.0, 1.0, 1.0, -3.0}, {0.02, -2.0, 0.1, 4.0}}) {
    const OUParams p(theta, mu, sigma);
    double prev = 0.0;
    for (int k = 1; k <= 100; ++k) {
      const double delta = 0.05 * k / theta;
      const GaussianLaw law = ou_transition_law(p, x, delta);
      CHECK(law.variance > prev);
      CHECK(law.variance < p.stationary_variance());
      prev = law.variance;
    }
    const GaussianLaw late = ou_transition_law(p, x, 60.0 / theta);
    CHECK(late.mean == doctest::Approx(mu).epsilon(1e-12));
    CHECK(late.variance == doctest::Approx(p.stationary_variance()).epsilon(1e-12));
  }
}

TEST_CASE("moments compose over consecutive gaps") {
  const OUParams p(0.7, 0.3, 0.9);
  for (auto [d1, d2] : {std::pair{0.3, 1.1}, {2.0, 0.01}, {5.0, 5.0}}) {
    const double x = -1.2;
    const GaussianLaw a = ou_transition_law(p, x, d1);
    // Push the first law through the second affine-Gaussian step.
    const double decay = std::exp(-p.theta() * d2);
    const GaussianLaw b0 = ou_transition_law(p, 0.0, d2);
    const double mean2 = decay * a.mean + b0.mean;
    const double var2 = decay * decay * a.variance + b0.variance;
    const GaussianLaw direct = ou_transition_law(p, x, d1 + d2);
    CHECK(std::abs(mean2 - direct.mean) <= 1e-12 * std::abs(direct.mean));
    CHECK(std::abs(var2 - direct.variance) <= 1e-12 * direct.variance);
  }
}

TEST_CASE("tiny gaps barely move the state") {
  const GaussianLaw law = ou_transition_law(OUParams(0.5, 0.0, 0.5), 0.8, 1e-8);
  CHECK(std::abs(law.mean - 0.8) < 1e-6);
  CHECK(law.variance < 1e-6);
  CHECK(law.variance > 0.0);
}

TEST_CASE("exact simulation") {
  const OUParams p(0.5, 0.0, 0.5);
  std::vector<double> times;
  for (int k = 0; k < 200; ++k) times.push_back(0.37 * k);

  SUBCASE("seeded runs repeat exactly") {
    Rng a(7), b(7);
    const SamplePath pa = simulate_exact(p, 0.0, times, a);
    const SamplePath pb = simulate_exact(p, 0.0, times, b);
    CHECK(pa.values == pb.values);
    CHECK(pa.times == times);
    CHECK(pa.values.front() == 0.0);
  }
  SUBCASE("vanishing noise stays at the mean") {
    Rng rng(3);
    const SamplePath path = simulate_exact(OUParams(0.5, 1.5, 1e-9), 1.5, times, rng);
    for (double v : path.values) CHECK(std::abs(v - 1.5) < 1e-6);
  }
  SUBCASE("widely spaced samples follow the stationary law") {
    std::vector<double> wide;
    for (int k = 0; k < 100000; ++k) wide.push_back(40.0 * k);
    Rng rng(11);
    // Start at a stationary draw so every sample is stationary.
    std::normal_distribution<double> z(0.0, 0.5);
    const SamplePath path = simulate_exact(p, z(rng), wide, rng);
    const double n = static_cast<double>(wide.size());
    CHECK(std::abs(mean(path.values)) < 3 * 0.5 / std::sqrt(n));
    CHECK(std::abs(variance(path.values) - 0.25) < 3 * 0.25 * std::sqrt(2.0 / n));
  }
  SUBCASE("bad times are rejected") {
    Rng rng(1);
    std::vector<double> bad{0.0, 1.0, 1.0};
    CHECK_THROWS_AS(simulate_exact(p, 0.0, bad, rng), InvalidArgument);
    std::vector<double> negative{-1.0, 1.0};
    CHECK_THROWS_AS(simulate_exact(p, 0.0, negative, rng), InvalidArgument);
  }
}

namespace {

double lag1_autocorrelation(const std::vector<double> &v) {
  const double m = mean(v);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    den += (v[k] - m) * (v[k] - m);
    if (k > 0) num += (v[k] - m) * (v[k - 1] - m);
  }
  return num / den;
}

} // namespace

TEST_CASE("Euler-Maruyama paths") {
  SUBCASE("drift only decays to the mean") {
    Rng rng(1);
    // sigma is only a tiny positive number; the path is effectively an ODE.
    const OUParams p(2.0, 1.0, 1e-12);
    const SamplePath path = simulate_euler_maruyama(p, 3.0, 0.001, 1.0, rng);
    CHECK(path.values.size() == 1001);
    CHECK(path.times.back() == doctest::Approx(1.0));
    const double exact = 1.0 + 2.0 * std::exp(-2.0);
    CHECK(std::abs(path.values.back() - exact) < 0.01);
  }
  SUBCASE("long-run variance") {
    Rng rng(5);
    const OUParams p(2.0, 0.0, 1.0);
    std::vector<double> values;
    for (int r = 0; r < 200; ++r)
      values.push_back(simulate_euler_maruyama(p, 0.0, 0.01, 100.0, rng).values.back());
    // EM with step h has stationary variance sigma^2 / (2 theta - theta^2 h).
    CHECK(std::abs(variance(values) - 0.25) < 4 * 0.25 * std::sqrt(2.0 / 199));
  }
  SUBCASE("persistence ordering of the three settings") {
    Rng rng(9);
    int ordered = 0;
    for (int r = 0; r < 100; ++r) {
      const double a1 = lag1_autocorrelation(
          simulate_euler_maruyama(OUParams(0.02, 0, 0.1), 0.0, 0.01, 100.0, rng).values);
      const double a2 = lag1_autocorrelation(
          simulate_euler_maruyama(OUParams(0.5, 0, 0.5), 0.0, 0.01, 100.0, rng).values);
      const double a3 = lag1_autocorrelation(
          simulate_euler_maruyama(OUParams(2.0, 0, 1.0), 0.0, 0.01, 100.0, rng).values);
      ordered += (a1 > a2 && a2 > a3) ? 1 : 0;
    }
    CHECK(ordered >= 95);
  }
  Rng rng(1);
  CHECK_THROWS_AS(simulate_euler_maruyama(OUParams(1, 0, 1), 0.0, 0.0, 1.0, rng), InvalidArgument);
}

TEST_CASE("interval masses of a Gaussian law") {
  const GaussianLaw law{0.3, 0.49};
  const std::vector<double> b{-1.0, 0.0, 0.3, 2.0, 9.0};
  std::vector<double> masses(4);
  law.interval_masses(b, masses);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(masses[j] == doctest::Approx(law.cdf(b[j + 1]) - law.cdf(b[j])).epsilon(1e-13));
  // Far tail keeps relative precision where a CDF difference would cancel.
  const double tail = law.interval_mass(8.0, 9.0);
  CHECK(tail > 0.0);
  CHECK(tail == doctest::Approx(0.5 * std::erfc((8.0 - 0.3) / (0.7 * std::sqrt(2.0)))).epsilon(1e-6));
  std::vector<double> wrong(3);
  CHECK_THROWS_AS(law.interval_masses(b, wrong), InvalidArgument);
}
