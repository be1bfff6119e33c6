// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `ctssm_acceptance 3 7` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctssm/decoding.hpp"
#include "ctssm/inference.hpp"
#include "ctssm/kernels.hpp"
#include "ctssm/simulation.hpp"
#include "ctssm/splines.hpp"

using namespace ctssm;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }
double iqr(const std::vector<double> &v) { return quantile(v, 0.75) - quantile(v, 0.25); }

std::string fmt(const char *f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Random small instance for the path-sum and decoding checks.
struct Instance {
  ObservationSequence seq;
  ModelSpec spec;
};

Instance random_instance(std::mt19937_64 &rng, bool negbin, std::size_t m, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double theta = 0.05 + 2.5 * u(rng), sigma = 0.1 + 1.5 * u(rng);
  const double sd = sigma / std::sqrt(2 * theta);
  const double width = 2.0 + 2.0 * u(rng);
  const Grid grid(-width * sd, width * sd, m);
  std::vector<double> times{3.0 * u(rng)};
  for (std::size_t k = 1; k < n; ++k) times.push_back(times.back() + 0.01 + 3.0 * u(rng));
  std::vector<Count> counts;
  std::vector<Covariates> covs;
  std::poisson_distribution<Count> draw(negbin ? 2.0 + 4.0 * u(rng) : 5.0 + 200.0 * u(rng));
  for (std::size_t k = 0; k < n; ++k) {
    counts.push_back(draw(rng));
    covs.push_back({12.0 + 16.0 * u(rng), u(rng) < 0.5 ? 0 : 1});
  }
  if (negbin) {
    std::normal_distribution<double> w(-0.5, 0.7);
    std::vector<double> w1(8), w2(8);
    for (double &x : w1) x = w(rng);
    for (double &x : w2) x = w(rng) + 0.5;
    return {ObservationSequence(times, counts, covs),
            {OUParams(theta, 0.0, sigma), NegBinSplineEmission(0.2 + 3 * u(rng), {w1}, {w2}), grid, {}}};
  }
  return {ObservationSequence(times, counts),
          {OUParams(theta, 0.0, sigma), PoissonScaleEmission(5.0 + 200.0 * u(rng)), grid, {}}};
}

Verdict oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240101);
  std::uniform_int_distribution<std::size_t> pick_m(2, 6), pick_T(0, 6);
  double worst = 0.0;
  int poisson = 0, negbin = 0;
  for (int r = 0; r < 200; ++r) {
    const bool nb = r % 2 == 1;
    const Instance inst = random_instance(rng, nb, pick_m(rng), pick_T(rng) + 1);
    MatrixCache cache;
    const double f = forward_loglik(inst.seq, inst.spec, cache);
    const double b = brute_force_loglik(inst.seq, inst.spec);
    worst = std::max(worst, std::abs(f - b));
    (nb ? negbin : poisson) += 1;
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "200 instances (" << poisson << " poisson-scale, " << negbin << " negbin-spline), max |diff| "
     << worst << ", " << fmt("%.1f s", secs);
  return {worst < 1e-10 && secs < 60.0, os.str()};
}

Verdict shared_stationary_law() {
  bool ok = true;
  std::ostringstream os;
  for (int s = 1; s <= 3; ++s) {
    const GaussianLaw law = ou_stationary_law(SimSetting::numbered(s).process);
    ok = ok && law.mean == 0.0 &&
         std::abs(law.variance - 0.25) <= 4 * std::numeric_limits<double>::epsilon() * 0.25;
    os << "setting " << s << ": N(" << law.mean << ", " << fmt("%.17g", law.variance) << ") ";
  }
  return {ok, os.str()};
}

Verdict table2_stabilization() {
  const std::vector<std::size_t> ms{20, 30, 50, 100, 150};
  FitOptions opt;
  opt.compute_ci = false;
  bool ok = true;
  std::ostringstream os;
  for (int s = 1; s <= 3; ++s) {
    const SweepResult sw = run_m_sweep(SimSetting::numbered(s, 2000, 2023), ms, -2.5, 2.5, opt);
    const SweepRow &a = sw.rows[3], &b = sw.rows[4];
    if (!a.ok || !b.ok) {
      ok = false;
      os << "setting " << s << ": fit failed; ";
      continue;
    }
    const double dllk = std::abs(a.neg_llk - b.neg_llk);
    const double dpar = std::max({std::abs(b.theta / a.theta - 1), std::abs(b.sigma / a.sigma - 1),
                                  std::abs(b.alpha / a.alpha - 1)});
    ok = ok && dllk < 0.5 && dpar < 0.02;
    os << "setting " << s << ": -llk";
    for (const auto &row : sw.rows) os << " " << fmt("%.2f", row.neg_llk);
    os << ", |d llk| " << fmt("%.3f", dllk) << ", max rel param change " << fmt("%.4f", dpar) << "; ";
  }
  return {ok, os.str()};
}

Verdict parameter_recovery() {
  const SimSetting setting = SimSetting::numbered(2, 2000, 777);
  ConsistencyOptions opt;
  opt.fit.compute_ci = false;
  const std::vector<std::size_t> t2000{2000}, t5000{5000};
  const ConsistencyResult a = run_consistency_study(setting, t2000, 50, opt);
  const ConsistencyResult b = run_consistency_study(setting, t5000, 20, opt);
  auto column = [](const ConsistencyResult &r, int which, std::size_t limit) {
    std::vector<double> v;
    for (const auto &row : r.rows) {
      if (!row.ok || row.replicate >= limit) continue;
      v.push_back(which == 0 ? row.rel_bias_theta : which == 1 ? row.rel_bias_sigma : row.rel_bias_alpha);
    }
    return v;
  };
  const char *names[] = {"theta", "sigma", "alpha"};
  bool ok = a.failures == 0 && b.failures == 0;
  std::ostringstream os;
  os << "failures " << a.failures << "+" << b.failures << "; ";
  for (int p = 0; p < 3; ++p) {
    const double med = median(column(a, p, 50));
    const double iqr2000 = iqr(column(a, p, 20));
    const double iqr5000 = iqr(column(b, p, 20));
    ok = ok && std::abs(med) <= 0.10 && iqr5000 < iqr2000;
    os << names[p] << ": median bias " << fmt("%+.4f", med) << ", IQR " << fmt("%.4f", iqr2000) << " -> "
       << fmt("%.4f", iqr5000) << "; ";
  }
  return {ok, os.str()};
}

Verdict runtime_envelope() {
  const PanelDataset panel(generate_dataset(SimSetting::numbered(2, 2000, 5)).data);
  const auto t0 = std::chrono::steady_clock::now();
  const FitResult r = fit(panel, starting_template(panel, Family::PoissonScale, Grid(-2.5, 2.5, 100)));
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "T=2000, m=100 fit with intervals: " << fmt("%.1f s", secs) << ", status " << r.convergence.status;
  return {r.converged() && secs < 300.0, os.str()};
}

Verdict viterbi_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> pick_m(2, 6);
  int failures = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = pick_m(rng);
    const auto max_n = static_cast<std::size_t>(std::floor(std::log(1e5) / std::log(static_cast<double>(m)) + 1e-9));
    std::uniform_int_distribution<std::size_t> pick_n(1, max_n);
    const Instance inst = random_instance(rng, trial % 2 == 1, m, pick_n(rng));
    const std::size_t n = inst.seq.size();
    MatrixCache cache;
    const DecodedPath d = viterbi(inst.seq, inst.spec, cache);

    // Exhaustive search over every state path.
    const OUProcess proc(inst.spec.process);
    const Eigen::RowVectorXd init = initial_distribution(proc, inst.spec.grid).probabilities;
    std::vector<RowMatrix> lg;
    std::vector<std::vector<double>> le;
    for (std::size_t k = 0; k < n; ++k) {
      le.push_back(emission_vector(inst.spec.emission, inst.seq.counts()[k], inst.seq.covariates_at(k),
                                   inst.spec.grid));
      if (k > 0)
        lg.push_back(transition_matrix(proc, inst.spec.grid, inst.seq.gap(k), false).entries.array().log().matrix());
    }
    std::vector<std::size_t> path(n, 0), best_path;
    double best = -std::numeric_limits<double>::infinity();
    bool done = false;
    while (!done) {
      double v = std::log(init[static_cast<Eigen::Index>(path[0])]) + le[0][path[0]];
      for (std::size_t k = 1; k < n; ++k) {
        v = v + lg[k - 1](static_cast<Eigen::Index>(path[k - 1]), static_cast<Eigen::Index>(path[k]));
        v = v + le[k][path[k]];
      }
      if (v > best) {
        best = v;
        best_path = path;
      }
      std::size_t pos = n;
      done = true;
      while (pos > 0) {
        --pos;
        if (++path[pos] < m) {
          done = false;
          break;
        }
        path[pos] = 0;
      }
    }
    bool same = true;
    for (std::size_t k = 0; k < n; ++k) same = same && d.state_indices[k] == best_path[k] + 1;
    const double diff = std::abs(d.log_probability - best);
    worst = std::max(worst, diff);
    if (!same || diff > 1e-12 * std::max(1.0, std::abs(best))) ++failures;
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "100 trials, " << failures << " mismatches, max |log-prob diff| " << worst << ", " << fmt("%.1f s", secs);
  return {failures == 0 && secs < 60.0, os.str()};
}

Verdict chapman_kolmogorov() {
  const OUProcess proc(OUParams(0.5, 0.0, 0.5));
  double prev = std::numeric_limits<double>::infinity();
  bool ok = true;
  std::ostringstream os;
  for (std::size_t m : {20, 50, 100, 200}) {
    const Grid g(-3, 3, m);
    const RowMatrix g1 = transition_matrix(proc, g, 1.0).entries;
    const RowMatrix g2 = transition_matrix(proc, g, 2.0).entries;
    const double err = (g1 * g1 - g2).cwiseAbs().maxCoeff();
    ok = ok && err < prev && (m != 100 || err < 1e-3);
    prev = err;
    os << "m=" << m << ": " << fmt("%.3e", err) << " ";
  }
  return {ok, os.str()};
}

Verdict case_study_direction() {
  int ssm_wins = 0, fitted = 0;
  std::vector<double> et, es, ep;
  std::ostringstream os;
  for (std::uint64_t r = 0; r < 10; ++r) {
    PanelConfig cfg;
    cfg.individuals = 1000;
    cfg.dropout = 0.1;
    cfg.seed = derive_seed(8, r);
    const SimulatedPanel sp = generate_panel(cfg);
    FitOptions opt;
    opt.compute_ci = false;
    const FitResult ssm = fit(sp.panel, starting_template(sp.panel, Family::NegBinSpline, Grid(-9, 9, 100)), opt);
    const FitResult bench = fit_benchmark(sp.panel, starting_template(sp.panel, Family::Benchmark, std::nullopt), opt);
    if (ssm.converged()) ++fitted;
    if (ssm.aic < bench.aic) ++ssm_wins;
    et.push_back(std::abs(ssm.estimate("theta") / 0.222 - 1));
    es.push_back(std::abs(ssm.estimate("sigma") / 1.489 - 1));
    ep.push_back(std::abs(ssm.estimate("phi") / 0.570 - 1));
  }
  const double mt = median(et), ms = median(es), mp = median(ep);
  os << "SSM AIC wins " << ssm_wins << "/10 (converged " << fitted << "/10), median rel error theta "
     << fmt("%.3f", mt) << ", sigma " << fmt("%.3f", ms) << ", phi " << fmt("%.3f", mp);
  return {ssm_wins >= 9 && mt < 0.15 && ms < 0.15 && mp < 0.15, os.str()};
}

Verdict ci_machinery() {
  Eigen::MatrixXd A(3, 3);
  A << 5.0, 1.2, -0.7, 1.2, 2.5, 0.3, -0.7, 0.3, 1.1;
  const Eigen::Vector3d c(1.0, -0.5, 0.25);
  const Objective f = [&](std::span<const double> x) {
    const Eigen::Vector3d d = Eigen::Map<const Eigen::Vector3d>(x.data()) - c;
    return 0.5 * d.dot(A * d);
  };
  const std::vector<double> opt{c[0], c[1], c[2]};
  const FisherResult info = observed_fisher(f, opt);
  const Eigen::MatrixXd cov = A.inverse();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      worst = std::max(worst, std::abs(info.covariance(i, j) - cov(i, j)) / std::abs(cov(i, j)));

  const ObservationSequence seq = generate_dataset(SimSetting::numbered(2, 1000, 31)).data;
  const PanelDataset single(seq);
  PanelDataset doubled;
  doubled.add("1", seq);
  doubled.add("2", seq);
  const ModelTemplate start = starting_template(single, Family::PoissonScale, Grid(-2.5, 2.5, 50));
  const FitResult a = fit(single, start);
  const FitResult b = fit(doubled, start);
  double worst_ratio = 0.0;
  bool have = true;
  std::ostringstream os;
  os << "quadratic covariance max rel error " << fmt("%.2e", worst) << "; se ratios";
  for (const char *name : {"theta", "sigma", "alpha"}) {
    const auto &sa = a.parameter(name).se, &sb = b.parameter(name).se;
    if (!sa || !sb) {
      have = false;
      continue;
    }
    const double ratio = *sb / *sa;
    worst_ratio = std::max(worst_ratio, std::abs(ratio * std::sqrt(2.0) - 1));
    os << " " << name << " " << fmt("%.4f", ratio);
  }
  os << " (1/sqrt 2 = 0.7071); fit status " << a.convergence.status << " / " << b.convergence.status;
  return {worst < 1e-4 && have && worst_ratio < 0.05, os.str()};
}

Verdict spline_correctness() {
  const SplineBasis b = SplineBasis::age_basis();
  const double lo = b.full_support_lo(), hi = b.full_support_hi();
  double unity = 0.0, constant = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = lo + (hi - lo) * i / 999.0;
    double s = 0.0;
    for (double v : b.eval(x)) s += v;
    unity = std::max(unity, std::abs(s - 1.0));
    const double level = -1.7 + 0.003 * i;
    constant = std::max(constant, std::abs(curve_eval(b, {std::vector<double>(8, level)}, x) - level));
  }
  // One-sided derivative stencils that are exact on cubic pieces.
  std::mt19937_64 rng(10);
  std::normal_distribution<double> w(0.0, 1.0);
  double jump = 0.0;
  for (int r = 0; r < 20; ++r) {
    std::vector<double> omega(8);
    for (double &o : omega) o = w(rng);
    auto f = [&](double x) { return curve_eval(b, {omega}, x); };
    const double h = 0.05;
    for (std::size_t k = 1; k + 1 < b.knots().size(); ++k) {
      const double t = b.knots()[k];
      auto d1 = [&](int dir) {
        const double s = dir * h;
        return dir * (-11 * f(t) + 18 * f(t + s) - 9 * f(t + 2 * s) + 2 * f(t + 3 * s)) / (6 * h);
      };
      auto d2 = [&](int dir) {
        const double s = dir * h;
        return (2 * f(t) - 5 * f(t + s) + 4 * f(t + 2 * s) - f(t + 3 * s)) / (h * h);
      };
      jump = std::max({jump, std::abs(d1(-1) - d1(1)), std::abs(d2(-1) - d2(1))});
    }
  }
  std::ostringstream os;
  os << "partition of unity max error " << unity << ", derivative jumps at knots up to order 2: " << jump
     << ", constant reproduction error " << constant;
  return {unity < 1e-12 && jump < 1e-6 && constant < 1e-12, os.str()};
}

} // namespace

int main(int argc, char **argv) {
  const std::vector<std::pair<const char *, std::function<Verdict()>>> criteria{
      {"oracle equivalence of forward recursion and path sum", oracle_equivalence},
      {"shared stationary law of the three settings", shared_stationary_law},
      {"likelihood and estimate stabilization over m", table2_stabilization},
      {"parameter recovery and shrinking spread", parameter_recovery},
      {"runtime envelope of one fit", runtime_envelope},
      {"Viterbi exactness", viterbi_exactness},
      {"Chapman-Kolmogorov convergence", chapman_kolmogorov},
      {"state model preferred on state-driven panels", case_study_direction},
      {"observed-information intervals", ci_machinery},
      {"spline correctness", spline_correctness},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception &e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::printf("criterion %2d %s: %s (%.1f s) | %s\n", id, v.pass ? "PASS" : "FAIL", criteria[i].first,
                seconds_since(t0), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
