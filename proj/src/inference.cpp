#include "ctssm/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "ctssm/errors.hpp"
#include "ctssm/kernels.hpp"

namespace ctssm {

double forward_loglik(const ObservationSequence &seq, const ModelSpec &spec, MatrixCache &cache) {
  return kernels::sequence_loglik(seq, spec, cache);
}

double brute_force_loglik(const ObservationSequence &seq, const ModelSpec &spec) {
  const std::size_t m = spec.grid.m();
  const std::size_t n = seq.size();
  if (std::pow(static_cast<double>(m), static_cast<double>(n)) > kBruteForceLimit)
    throw TooLarge("brute_force_loglik: m^(T+1) exceeds " + std::to_string(kBruteForceLimit));

  const OUProcess process(spec.process);
  const Eigen::RowVectorXd initial = kernels::initial_vector(spec);
  const Eigen::MatrixXd lp = kernels::log_emission_matrix(seq, spec);
  std::vector<RowMatrix> log_gamma;
  for (std::size_t k = 1; k < n; ++k)
    log_gamma.push_back(transition_matrix(process, spec.grid, seq.gap(k), false)
                            .entries.array()
                            .log()
                            .matrix());
  const Eigen::RowVectorXd log_initial = initial.array().log().matrix();

  // Odometer over state paths with a running log-sum-exp.
  std::vector<std::size_t> path(n, 0);
  double mx = -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  while (true) {
    double v = log_initial[static_cast<Eigen::Index>(path[0])] +
               lp(static_cast<Eigen::Index>(path[0]), 0);
    for (std::size_t k = 1; k < n; ++k)
      v += log_gamma[k - 1](static_cast<Eigen::Index>(path[k - 1]),
                            static_cast<Eigen::Index>(path[k])) +
           lp(static_cast<Eigen::Index>(path[k]), static_cast<Eigen::Index>(k));
    if (v > mx) {
      acc = (std::isfinite(mx) ? acc * std::exp(mx - v) : 0.0) + 1.0;
      mx = v;
    } else if (std::isfinite(v)) {
      acc += std::exp(v - mx);
    }
    std::size_t pos = n;
    while (pos > 0) {
      --pos;
      if (++path[pos] < m)
        break;
      path[pos] = 0;
      if (pos == 0) {
        return std::isfinite(mx) ? mx + std::log(acc) : mx;
      }
    }
  }
}

double panel_loglik(const PanelDataset &panel, const ModelSpec &spec, MatrixCache &cache) {
  return kernels::parallel::panel_loglik(panel, spec, cache);
}

double benchmark_loglik(const PanelDataset &panel, const NegBinSplineEmission &emission) {
  const auto order = panel.id_order();
  std::vector<double> values(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto &seq = panel[order[pos]].sequence;
    if (!seq.has_covariates())
      throw InvalidArgument("benchmark_loglik: sequence '" + panel[order[pos]].id +
                            "' has no covariates");
    double s = 0.0;
    for (std::size_t k = 0; k < seq.size(); ++k)
      s += negbin_marginal_logpmf(emission, seq.counts()[k], seq.covariates()[k]);
    values[pos] = s;
  }
  return kernels::tree_sum(values);
}

const ParameterEstimate &FitResult::parameter(const std::string &name) const {
  for (const auto &p : parameters)
    if (p.name == name)
      return p;
  throw InvalidArgument("FitResult: no parameter '" + name + "'");
}

std::string to_string(FitMethod method) {
  switch (method) {
  case FitMethod::Auto:
    return "auto";
  case FitMethod::Simplex:
    return "simplex";
  case FitMethod::Bfgs:
    return "bfgs";
  case FitMethod::SimplexBfgs:
    return "simplex+bfgs";
  }
  return "unknown";
}

FitMethod fit_method_from_string(const std::string &name) {
  if (name == "auto")
    return FitMethod::Auto;
  if (name == "simplex")
    return FitMethod::Simplex;
  if (name == "bfgs")
    return FitMethod::Bfgs;
  if (name == "simplex+bfgs")
    return FitMethod::SimplexBfgs;
  throw InvalidArgument("unknown fit method '" + name + "'");
}

Objective negative_loglik_objective(const PanelDataset &panel, const ModelTemplate &model,
                                    MatrixCache &cache) {
  if (model.family() == Family::Benchmark)
    return [&panel, model](std::span<const double> w) {
      return -benchmark_loglik(panel, model.with_free_working(w).negbin_emission());
    };
  return [&panel, model, &cache](std::span<const double> w) {
    return -panel_loglik(panel, model.with_free_working(w).build(), cache);
  };
}

namespace {

// Positions of the named parameters in a template's parameter list.
struct EmissionLayout {
  int theta = -1;
  int sigma = -1;
  int alpha = -1;
  int phi = -1;
  std::vector<int> omega1;
  std::vector<int> omega2;
};

EmissionLayout emission_layout(const ModelTemplate &model) {
  EmissionLayout out;
  const auto &params = model.parameters();
  out.omega1.assign(model.basis().basis_count(), -1);
  out.omega2.assign(model.basis().basis_count(), -1);
  for (std::size_t q = 0; q < params.size(); ++q) {
    const std::string &name = params[q].name;
    const int qi = static_cast<int>(q);
    if (name == "theta")
      out.theta = qi;
    else if (name == "sigma")
      out.sigma = qi;
    else if (name == "alpha")
      out.alpha = qi;
    else if (name == "phi")
      out.phi = qi;
    else if (name.rfind("omega1_", 0) == 0)
      out.omega1[std::stoul(name.substr(7)) - 1] = qi;
    else if (name.rfind("omega2_", 0) == 0)
      out.omega2[std::stoul(name.substr(7)) - 1] = qi;
  }
  return out;
}

// Adds one observation's (d_eta, d_log_phi) to the loglik gradient column.
void accumulate_scores(const EmissionLayout &lay, const SplineBasis &basis, const Covariates *cov,
                       double d_eta, double d_log_phi, std::vector<double> &basis_values,
                       Eigen::Ref<Eigen::VectorXd> grad) {
  if (lay.alpha >= 0)
    grad[lay.alpha] += d_eta;
  if (lay.phi >= 0)
    grad[lay.phi] += d_log_phi;
  if (cov == nullptr || lay.omega1.empty())
    return;
  basis.eval(cov->age, basis_values);
  for (std::size_t l = 0; l < basis_values.size(); ++l) {
    const double b = basis_values[l];
    if (b == 0.0)
      continue;
    grad[lay.omega1[l]] += d_eta * b;
    if (cov->gender == 1)
      grad[lay.omega2[l]] += d_eta * b;
  }
}

// Per-sequence loglik and full-parameter gradient columns, in id order.
// Returns false if some sequence needs the fallback.
bool sequence_scores(const PanelDataset &panel, const ModelTemplate &model, MatrixCache &cache,
                     std::vector<double> &values, Eigen::MatrixXd &grads) {
  const auto order = panel.id_order();
  const auto n = static_cast<std::ptrdiff_t>(order.size());
  const std::size_t P = model.parameters().size();
  const EmissionLayout lay = emission_layout(model);
  const SplineBasis &basis = model.basis();
  values.assign(order.size(), 0.0);
  grads = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(P), n);
  bool ok = true;
  std::exception_ptr failure;

  if (model.family() == Family::Benchmark) {
    const NegBinSplineEmission em = model.negbin_emission();
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t pos = 0; pos < n; ++pos) {
      try {
        const auto p = static_cast<std::size_t>(pos);
        const auto &seq = panel[order[p]].sequence;
        if (!seq.has_covariates())
          throw InvalidArgument("benchmark: sequence '" + panel[order[p]].id +
                                "' has no covariates");
        std::vector<double> bv(basis.basis_count());
        double s = 0.0;
        for (std::size_t k = 0; k < seq.size(); ++k) {
          const Count y = seq.counts()[k];
          const Covariates &cov = seq.covariates()[k];
          s += negbin_marginal_logpmf(em, y, cov);
          const EmissionScore sc = negbin_score(y, em.phi(), em.covariate_effect(cov));
          accumulate_scores(lay, basis, &cov, sc.d_eta, sc.d_log_phi, bv, grads.col(pos));
        }
        values[p] = s;
      } catch (...) {
#pragma omp critical(ctssm_score_failure)
        if (!failure)
          failure = std::current_exception();
      }
    }
    if (failure)
      std::rethrow_exception(failure);
    return true;
  }

  const ModelSpec spec = model.build();
  const Eigen::RowVectorXd initial = kernels::initial_vector(spec);

  // Transition-matrix derivatives for every distinct gap, shared by all
  // sequences.
  const OUProcess process(spec.process);
  struct GapEntry {
    std::shared_ptr<const TransitionMatrix> gamma;
    TransitionSensitivity sens;
  };
  std::map<std::int64_t, GapEntry> gaps;
  kernels::ChainSensitivity base;
  if (lay.theta >= 0 || lay.sigma >= 0) {
    for (const auto &e : panel.entries())
      for (std::size_t k = 1; k < e.sequence.size(); ++k) {
        const double d = e.sequence.gap(k);
        const auto key = MatrixCache::quantize(d);
        if (gaps.count(key))
          continue;
        auto gamma = cache.get(process, spec.grid, d);
        TransitionSensitivity ts =
            ou_transition_sensitivity(spec.process, spec.grid, d, gamma->entries);
        gaps.emplace(key, GapEntry{std::move(gamma), std::move(ts)});
      }
    if (spec.initial) {
      base.initial.assign(2, Eigen::RowVectorXd::Zero(initial.size()));
    } else {
      const InitialSensitivity is = ou_initial_sensitivity(spec.process, spec.grid);
      base.initial = {is.d_log_theta, is.d_log_sigma};
    }
  }
  const bool with_chain = !base.initial.empty();

#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t pos = 0; pos < n; ++pos) {
    try {
      const auto p = static_cast<std::size_t>(pos);
      const auto &seq = panel[order[p]].sequence;
      kernels::ChainSensitivity chain;
      if (with_chain) {
        chain.initial = base.initial;
        chain.steps.assign(2, {});
        for (std::size_t k = 1; k < seq.size(); ++k) {
          const GapEntry &ge = gaps.at(MatrixCache::quantize(seq.gap(k)));
          chain.steps[0].push_back(&ge.sens.d_log_theta);
          chain.steps[1].push_back(&ge.sens.d_log_sigma);
        }
      }
      const kernels::Posterior post = kernels::sequence_posterior(
          seq, spec, initial, cache, with_chain ? &chain : nullptr);
      if (!post.ok) {
#pragma omp atomic write
        ok = false;
        continue;
      }
      values[p] = post.loglik;
      if (with_chain) {
        if (lay.theta >= 0)
          grads(lay.theta, pos) = post.chain_gradient[0];
        if (lay.sigma >= 0)
          grads(lay.sigma, pos) = post.chain_gradient[1];
      }
      const auto m = static_cast<Eigen::Index>(spec.grid.m());
      Eigen::VectorXd d_eta(m), d_phi(m);
      std::vector<double> bv(basis.basis_count());
      for (std::size_t k = 0; k < seq.size(); ++k) {
        const Covariates *cov = seq.covariates_at(k);
        emission_scores(spec.emission, seq.counts()[k], cov, spec.grid,
                        {d_eta.data(), static_cast<std::size_t>(m)},
                        {d_phi.data(), static_cast<std::size_t>(m)});
        const auto col = post.marginals.col(static_cast<Eigen::Index>(k));
        accumulate_scores(lay, basis, cov, col.dot(d_eta), col.dot(d_phi), bv, grads.col(pos));
      }
    } catch (...) {
#pragma omp critical(ctssm_score_failure)
      if (!failure)
        failure = std::current_exception();
    }
  }
  if (failure)
    std::rethrow_exception(failure);
  return ok;
}

} // namespace

ValueAndGradient negative_loglik_gradient(const PanelDataset &panel, const ModelTemplate &model,
                                          MatrixCache &cache, double rel_step) {
  const Objective f = negative_loglik_objective(panel, model, cache);
  return [&panel, model, &cache, f, rel_step](std::span<const double> w,
                                              std::span<double> g) -> double {
    if (g.size() != w.size())
      throw InvalidArgument("negative_loglik_gradient: gradient size mismatch");
    const ModelTemplate current = model.with_free_working(w);
    std::vector<double> values;
    Eigen::MatrixXd grads;
    if (!sequence_scores(panel, current, cache, values, grads)) {
      const auto fd = central_gradient(f, w, rel_step);
      std::copy(fd.begin(), fd.end(), g.begin());
      return f(w);
    }
    const double loglik = kernels::tree_sum(values);
    std::vector<double> row(values.size());
    std::size_t k = 0;
    const auto &params = current.parameters();
    for (std::size_t q = 0; q < params.size(); ++q) {
      if (!params[q].free)
        continue;
      for (std::size_t pos = 0; pos < row.size(); ++pos)
        row[pos] = grads(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(pos));
      g[k++] = -kernels::tree_sum(row);
    }
    return -loglik;
  };
}

namespace {

using Clock = std::chrono::steady_clock;

// BFGS in coordinates u with w = origin + T u, where T = V |Lambda|^{-1/2}
// from the Hessian at the origin. The problem then starts out close to
// unit curvature in every direction, and the gradient-norm stopping rule
// measures the Newton decrement rather than raw slopes.
OptimizeResult preconditioned_bfgs(const Objective &f, const ValueAndGradient &fg,
                                   const std::vector<double> &origin, const FitOptions &o) {
  const auto n = static_cast<Eigen::Index>(origin.size());
  int extra = 0;
  Eigen::MatrixXd H = central_hessian(
      [&](std::span<const double> w, std::span<double> g) {
        ++extra;
        return fg(w, g);
      },
      origin, o.hessian_rel_step);
  if (!H.allFinite())
    return minimize_bfgs(f, origin, o.bfgs, &fg);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
  const Eigen::VectorXd lambda = eig.eigenvalues().cwiseAbs();
  const double floor = std::max(lambda.maxCoeff() * 1e-8, 1e-12);
  const Eigen::MatrixXd T =
      eig.eigenvectors() * lambda.cwiseMax(floor).cwiseSqrt().cwiseInverse().asDiagonal();

  const Eigen::Map<const Eigen::VectorXd> w0(origin.data(), n);
  auto to_w = [&](std::span<const double> u) {
    const Eigen::Map<const Eigen::VectorXd> uv(u.data(), n);
    const Eigen::VectorXd w = w0 + T * uv;
    return std::vector<double>(w.data(), w.data() + n);
  };
  const Objective fu = [&](std::span<const double> u) { return f(to_w(u)); };
  const ValueAndGradient fgu = [&](std::span<const double> u, std::span<double> gu) {
    std::vector<double> gw(origin.size());
    const double v = fg(to_w(u), gw);
    Eigen::Map<Eigen::VectorXd>(gu.data(), n) =
        T.transpose() * Eigen::Map<const Eigen::VectorXd>(gw.data(), n);
    return v;
  };
  BfgsOptions bo = o.bfgs;
  bo.initial_step = o.preconditioned_initial_step;
  OptimizeResult r = minimize_bfgs(fu, std::vector<double>(origin.size(), 0.0), bo, &fgu);
  r.x = to_w(r.x);
  r.evaluations += extra;
  return r;
}

OptimizeResult run_method(const Objective &f, const ValueAndGradient *fg, std::vector<double> x0,
                          const FitOptions &o, FitMethod method) {
  switch (method) {
  case FitMethod::Simplex:
    return minimize_simplex(f, std::move(x0), o.simplex);
  case FitMethod::Bfgs:
    if (fg && o.precondition)
      return preconditioned_bfgs(f, *fg, x0, o);
    return minimize_bfgs(f, std::move(x0), o.bfgs, fg);
  case FitMethod::SimplexBfgs:
  case FitMethod::Auto: {
    OptimizeResult coarse = minimize_simplex(f, std::move(x0), o.simplex);
    OptimizeResult fine = minimize_bfgs(f, coarse.x, o.bfgs, fg);
    fine.iterations += coarse.iterations;
    fine.evaluations += coarse.evaluations;
    if (coarse.value < fine.value) {
      // The refinement made things worse; keep the simplex point.
      coarse.iterations = fine.iterations;
      coarse.evaluations = fine.evaluations;
      coarse.converged = false;
      coarse.status = "no_progress";
      return coarse;
    }
    return fine;
  }
  }
  throw InvalidArgument("unknown fit method");
}

double euclidean(std::span<const double> g) {
  double s = 0.0;
  for (double v : g)
    s += v * v;
  return std::sqrt(s);
}

// Accepts a Newton step only when it lowers the gradient norm without
// raising the objective beyond rounding.
void newton_polish(const ValueAndGradient &fg, OptimizeResult &r, const FitOptions &o) {
  const auto n = static_cast<Eigen::Index>(r.x.size());
  std::vector<double> g(r.x.size());
  double v;
  try {
    v = fg(r.x, g);
  } catch (const std::exception &) {
    return;
  }
  const double tol = o.bfgs.gradient_tolerance;
  for (int step = 0; step < o.newton_polish_steps && euclidean(g) > tol; ++step) {
    const Eigen::MatrixXd H = central_hessian(fg, r.x, o.hessian_rel_step);
    r.evaluations += static_cast<int>(2 * r.x.size());
    if (!H.allFinite())
      break;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
    if (!(eig.eigenvalues().minCoeff() > 0.0))
      break;
    const Eigen::VectorXd delta = -H.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(g.data(), n));
    std::vector<double> x = r.x;
    for (Eigen::Index i = 0; i < n; ++i)
      x[static_cast<std::size_t>(i)] += delta[i];
    std::vector<double> gn(g.size());
    double vn;
    try {
      vn = fg(x, gn);
    } catch (const std::exception &) {
      break;
    }
    ++r.evaluations;
    if (!std::isfinite(vn) || vn > v + 1e-10 * (1.0 + std::abs(v)) || !(euclidean(gn) < euclidean(g)))
      break;
    r.x = std::move(x);
    v = vn;
    g = std::move(gn);
    ++r.iterations;
  }
  r.value = std::min(r.value, v);
  if (euclidean(g) <= tol) {
    r.converged = true;
    r.status = "converged";
  }
}

double safe_value(const Objective &f, std::span<const double> x) {
  try {
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  } catch (...) {
    return std::numeric_limits<double>::infinity();
  }
}

void add_data_diagnostics(FitResult &result, const PanelDataset &panel) {
  if (result.model.family() == Family::PoissonScale)
    return;
  const SplineBasis &basis = result.model.basis();
  std::size_t outside = 0;
  for (const auto &e : panel.entries())
    if (e.sequence.has_covariates())
      for (const auto &c : e.sequence.covariates())
        outside += basis.in_full_support(c.age) ? 0 : 1;
  if (outside > 0) {
    std::ostringstream os;
    os << outside << " observation(s) have ages outside the fully supported spline span ["
       << basis.full_support_lo() << ", " << basis.full_support_hi() << "]";
    result.diagnostics.push_back(os.str());
  }
}

FitResult run_fit(const PanelDataset &panel, const ModelTemplate &start, const FitOptions &options) {
  if (panel.empty())
    throw InvalidArgument("fit: empty dataset");
  if (start.free_count() == 0)
    throw InvalidArgument("fit: no free parameters");
  if (start.family() != Family::PoissonScale && !panel.has_covariates())
    throw InvalidArgument("fit: " + to_string(start.family()) + " needs age/gender covariates");
  if (start.has_state() && !start.grid())
    throw InvalidArgument("fit: state-space families need a grid");

  const auto t0 = Clock::now();
  MatrixCache cache;
  const Objective f = negative_loglik_objective(panel, start, cache);
  const ValueAndGradient fg =
      negative_loglik_gradient(panel, start, cache, options.bfgs.gradient_rel_step);
  const ValueAndGradient *fg_ptr = options.analytic_gradient ? &fg : nullptr;
  const std::vector<double> x0 = start.free_working();
  {
    double v;
    try {
      v = f(x0);
    } catch (const std::exception &e) {
      throw InvalidStart(std::string("fit: likelihood cannot be evaluated at the start: ") +
                         e.what());
    }
    if (!std::isfinite(v))
      throw InvalidStart("fit: likelihood is not finite at the start");
  }

  FitMethod method = options.method;
  if (method == FitMethod::Auto)
    method = start.free_count() <= 5 ? FitMethod::SimplexBfgs : FitMethod::Bfgs;

  Rng rng(options.seed);
  std::normal_distribution<double> jitter(0.0, options.jitter);
  OptimizeResult best;
  best.value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 1;
  const int starts = std::max(1, options.starts);
  for (int s = 0; s < starts; ++s) {
    std::vector<double> x = x0;
    if (s > 0)
      for (double &v : x)
        v += jitter(rng);
    if (s > 0 && !std::isfinite(safe_value(f, x)))
      continue;
    OptimizeResult r = run_method(f, fg_ptr, x, options, method);
    iterations += r.iterations;
    evaluations += r.evaluations;
    if (r.value < best.value)
      best = std::move(r);
  }
  if (fg_ptr && std::isfinite(best.value)) {
    best.iterations = 0;
    best.evaluations = 0;
    newton_polish(fg, best, options);
    iterations += best.iterations;
    evaluations += best.evaluations;
  }

  FitResult result;
  result.family = start.family();
  result.model = start.with_free_working(best.x);
  result.loglik = -best.value;
  result.k = start.free_count();
  result.aic = aic(result.loglik, result.k);
  result.grid = start.grid();
  result.seed = options.seed;
  result.convergence.status = best.status;
  result.convergence.method = to_string(method);
  result.convergence.iterations = iterations;
  result.convergence.starts = starts;

  const auto gradient = central_gradient(
      [&f](std::span<const double> w) { return safe_value(f, w); }, best.x, 1e-6);
  evaluations += static_cast<int>(2 * gradient.size());
  double gmax = 0.0;
  for (double g : gradient)
    gmax = std::max(gmax, std::abs(g));
  result.convergence.gradient_max_norm = std::isfinite(gmax) ? gmax : 1e300;

  for (const auto &p : result.model.parameters())
    result.parameters.push_back({p.name, p.value, p.free, p.transform, std::nullopt, std::nullopt});
  if (start.has_state()) {
    const ModelSpec spec = result.model.build();
    if (auto w = spec.coverage_warning())
      result.diagnostics.push_back(*w);
  }
  add_data_diagnostics(result, panel);
  result.convergence.evaluations = evaluations;
  result.convergence.seconds = std::chrono::duration<double>(Clock::now() - t0).count();

  if (options.compute_ci) {
    const auto t1 = Clock::now();
    observed_fisher_ci(result, panel, options);
    result.convergence.seconds += std::chrono::duration<double>(Clock::now() - t1).count();
  }
  return result;
}

} // namespace

FitResult fit(const PanelDataset &panel, const ModelTemplate &start, const FitOptions &options) {
  return run_fit(panel, start, options);
}

FitResult fit(const ObservationSequence &seq, const ModelTemplate &start,
              const FitOptions &options) {
  return run_fit(PanelDataset(seq), start, options);
}

FitResult fit_benchmark(const PanelDataset &panel, const ModelTemplate &start,
                        const FitOptions &options) {
  if (start.family() != Family::Benchmark)
    throw InvalidArgument("fit_benchmark: template must belong to the benchmark family");
  return run_fit(panel, start, options);
}

namespace {

FisherResult fisher_from_hessian(Eigen::MatrixXd hessian, std::span<const double> optimum) {
  FisherResult out;
  const auto n = static_cast<Eigen::Index>(optimum.size());
  out.hessian = std::move(hessian);
  out.covariance = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  out.se.assign(optimum.size(), std::nullopt);
  if (!out.hessian.allFinite()) {
    out.diagnostics.push_back("Hessian has non-finite entries");
    out.near_singular = true;
    return out;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.hessian);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const Eigen::MatrixXd V = eig.eigenvectors();
  const double lmax = lambda.cwiseAbs().maxCoeff();
  const double tol = 1e-10 * std::max(lmax, 1e-300);
  out.positive_definite = lambda.minCoeff() > 0.0;
  out.near_singular = !(lambda.minCoeff() > tol);

  std::vector<bool> affected(optimum.size(), false);
  Eigen::MatrixXd pinv = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index e = 0; e < n; ++e) {
    if (lambda[e] > tol) {
      pinv += V.col(e) * V.col(e).transpose() / lambda[e];
      continue;
    }
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::abs(V(i, e)) > 1e-3)
        affected[static_cast<std::size_t>(i)] = true;
  }
  if (!out.positive_definite || out.near_singular) {
    std::ostringstream os;
    os << "observed information is " << (out.positive_definite ? "near-singular" : "not positive definite")
       << " (eigenvalue range [" << lambda.minCoeff() << ", " << lambda.maxCoeff() << "])";
    out.diagnostics.push_back(os.str());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    if (affected[iu])
      continue;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!affected[static_cast<std::size_t>(j)])
        out.covariance(i, j) = pinv(i, j);
    if (pinv(i, i) > 0.0)
      out.se[iu] = std::sqrt(pinv(i, i));
  }
  return out;
}

} // namespace

FisherResult observed_fisher(const Objective &negloglik, std::span<const double> optimum,
                             double rel_step) {
  return fisher_from_hessian(central_hessian(negloglik, optimum, rel_step), optimum);
}

FisherResult observed_fisher(const ValueAndGradient &negloglik, std::span<const double> optimum,
                             double rel_step) {
  return fisher_from_hessian(central_hessian(negloglik, optimum, rel_step), optimum);
}

void observed_fisher_ci(FitResult &result, const PanelDataset &panel, const FitOptions &options) {
  MatrixCache cache;
  const std::vector<double> w = result.model.free_working();
  const FisherResult info =
      options.analytic_gradient
          ? observed_fisher(negative_loglik_gradient(panel, result.model, cache,
                                                     options.bfgs.gradient_rel_step),
                            w, options.hessian_rel_step)
          : observed_fisher(negative_loglik_objective(panel, result.model, cache), w,
                            options.hessian_rel_step);
  result.hessian_near_singular = info.near_singular;
  for (const auto &d : info.diagnostics)
    result.diagnostics.push_back(d);
  if (!result.converged()) {
    result.diagnostics.push_back("standard errors withheld: fit did not converge");
    return;
  }
  std::size_t k = 0;
  for (auto &p : result.parameters) {
    if (!p.free)
      continue;
    const std::optional<double> sw = info.se[k];
    const double wk = w[k];
    ++k;
    if (!sw)
      continue;
    if (p.transform == Transform::Log) {
      p.se = p.estimate * *sw;
      p.ci95 = std::make_pair(std::exp(wk - 1.96 * *sw), std::exp(wk + 1.96 * *sw));
    } else {
      p.se = *sw;
      p.ci95 = std::make_pair(p.estimate - 1.96 * *sw, p.estimate + 1.96 * *sw);
    }
  }
}

namespace {

struct LogMoments {
  double mean = 0.0;
  double variance = 0.0;
  double lag_correlation = 0.5;
  double mean_gap = 1.0;
};

// Pooled moments of a per-observation score r, with lag-one correlation
// taken within sequences only.
template <class Score>
LogMoments pooled_moments(const PanelDataset &panel, Score score, double noise_variance) {
  LogMoments out;
  double s = 0.0;
  double ss = 0.0;
  std::size_t n = 0;
  double gaps = 0.0;
  std::size_t ngaps = 0;
  for (const auto &e : panel.entries())
    for (std::size_t k = 0; k < e.sequence.size(); ++k) {
      const double r = score(e.sequence, k);
      s += r;
      ss += r * r;
      ++n;
      if (k > 0) {
        gaps += e.sequence.gap(k);
        ++ngaps;
      }
    }
  out.mean = s / static_cast<double>(n);
  const double var = std::max(ss / static_cast<double>(n) - out.mean * out.mean, 1e-12);
  out.variance = std::max(var - noise_variance, 0.05 * var);
  double cov = 0.0;
  std::size_t npairs = 0;
  for (const auto &e : panel.entries())
    for (std::size_t k = 1; k < e.sequence.size(); ++k) {
      cov += (score(e.sequence, k) - out.mean) * (score(e.sequence, k - 1) - out.mean);
      ++npairs;
    }
  if (npairs > 0)
    out.lag_correlation = std::clamp(cov / static_cast<double>(npairs) / out.variance, 0.05, 0.95);
  if (ngaps > 0)
    out.mean_gap = gaps / static_cast<double>(ngaps);
  return out;
}

double log_count(const ObservationSequence &seq, std::size_t k) {
  return std::log(static_cast<double>(seq.counts()[k]) + 0.5);
}

} // namespace

ModelTemplate starting_template(const PanelDataset &panel, Family family,
                                std::optional<Grid> grid, std::size_t m) {
  if (panel.empty())
    throw InvalidArgument("starting_template: empty dataset");
  auto state_grid = [&](double theta, double sigma) {
    if (grid)
      return *grid;
    const auto [b0, bm] = default_range(OUParams(theta, 0.0, sigma));
    return Grid(b0, bm, m);
  };

  if (family == Family::PoissonScale) {
    double inv = 0.0;
    double mean_y = 0.0;
    std::size_t n = 0;
    for (const auto &e : panel.entries())
      for (Count y : e.sequence.counts()) {
        inv += 1.0 / (static_cast<double>(y) + 0.5);
        mean_y += static_cast<double>(y);
        ++n;
      }
    const LogMoments mom = pooled_moments(panel, log_count, inv / static_cast<double>(n));
    const double theta = std::max(-std::log(mom.lag_correlation) / mom.mean_gap, 1e-4);
    const double sigma = std::sqrt(2.0 * theta * mom.variance);
    const double alpha =
        std::max(mean_y / static_cast<double>(n) / std::exp(0.5 * mom.variance), 1e-3);
    return ModelTemplate::poisson_scale(theta, sigma, alpha, state_grid(theta, sigma));
  }

  if (!panel.has_covariates())
    throw InvalidArgument("starting_template: " + to_string(family) + " needs covariates");

  // Stateless prefit starting from per-gender mean levels.
  double sum[2] = {0.0, 0.0};
  double sumsq = 0.0;
  std::size_t cnt[2] = {0, 0};
  for (const auto &e : panel.entries())
    for (std::size_t k = 0; k < e.sequence.size(); ++k) {
      const int g = e.sequence.covariates()[k].gender;
      const double y = static_cast<double>(e.sequence.counts()[k]);
      sum[g] += y;
      sumsq += y * y;
      ++cnt[g];
    }
  const double total = static_cast<double>(cnt[0] + cnt[1]);
  const double mean_all = (sum[0] + sum[1]) / total;
  const double var_all = std::max(sumsq / total - mean_all * mean_all, 1e-9);
  const double mean_m = cnt[0] ? std::max(sum[0] / static_cast<double>(cnt[0]), 1e-3) : mean_all;
  const double mean_f = cnt[1] ? std::max(sum[1] / static_cast<double>(cnt[1]), 1e-3) : mean_all;
  const double phi_mom =
      std::clamp(mean_all * mean_all / std::max(var_all - mean_all, 1e-9), 1e-3, 1e3);
  const SplineBasis basis = SplineBasis::age_basis();
  const std::size_t nb = basis.basis_count();
  ModelTemplate bench = ModelTemplate::benchmark(
      phi_mom, std::vector<double>(nb, std::log(mean_m)),
      std::vector<double>(nb, std::log(mean_f) - std::log(mean_m)), basis);
  if (family == Family::Benchmark)
    return bench;

  FitOptions pre;
  pre.method = FitMethod::Bfgs;
  pre.compute_ci = false;
  const FitResult prefit = fit_benchmark(panel, bench, pre);
  const NegBinSplineEmission nb_hat = prefit.model.negbin_emission();
  const double phi_b = nb_hat.phi();

  // Excess dispersion of the stateless fit: 1 + 1/phi_b ~ (1 + 1/phi) e^{s^2}.
  const double phi0 = std::max(1.0, 2.0 * phi_b);
  const double s2 = std::clamp(std::log((1.0 + 1.0 / phi_b) / (1.0 + 1.0 / phi0)), 0.05, 25.0);
  const LogMoments mom = pooled_moments(
      panel,
      [&](const ObservationSequence &seq, std::size_t k) {
        const double nu = nb_hat.mean(0.0, seq.covariates()[k]);
        return log_count(seq, k) - std::log(nu + 0.5);
      },
      0.0);
  const double theta = std::max(-std::log(mom.lag_correlation) / mom.mean_gap, 1e-3);
  const double sigma = std::sqrt(2.0 * theta * s2);
  std::vector<double> w1 = nb_hat.omega1().omega;
  for (double &v : w1)
    v -= 0.5 * s2;
  return ModelTemplate::negbin_spline(theta, sigma, phi0, std::move(w1), nb_hat.omega2().omega,
                                      state_grid(theta, sigma), basis);
}

} // namespace ctssm
