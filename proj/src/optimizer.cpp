#include "ctssm/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_vector.h>

namespace ctssm {

namespace {

constexpr double kPenalty = 1e300;

struct Counted {
  const Objective *f;
  int evaluations = 0;
  double rel_step = 1e-6;
  const ValueAndGradient *fg = nullptr;

  // Penalized points get a zero gradient; the line search then backs off
  // on the value alone.
  double with_gradient(std::span<const double> x, std::span<double> g) {
    ++evaluations;
    double v;
    try {
      v = (*fg)(x, g);
    } catch (...) {
      v = kPenalty;
    }
    bool finite = std::isfinite(v);
    for (double gi : g)
      finite = finite && std::isfinite(gi);
    if (!finite) {
      std::fill(g.begin(), g.end(), 0.0);
      return kPenalty;
    }
    return v;
  }

  double operator()(std::span<const double> x) {
    ++evaluations;
    double v;
    try {
      v = (*f)(x);
    } catch (...) {
      return kPenalty;
    }
    return std::isfinite(v) ? v : kPenalty;
  }
};

std::span<const double> view(const gsl_vector *v) {
  return {v->data, v->size};
}

void copy_to(const std::vector<double> &src, gsl_vector *dst) {
  for (std::size_t i = 0; i < src.size(); ++i)
    gsl_vector_set(dst, i, src[i]);
}

std::vector<double> copy_from(const gsl_vector *src) {
  return {src->data, src->data + src->size};
}

struct GslErrorsOff {
  gsl_error_handler_t *previous;
  GslErrorsOff() : previous(gsl_set_error_handler_off()) {}
  ~GslErrorsOff() { gsl_set_error_handler(previous); }
};

double gsl_f(const gsl_vector *x, void *params) {
  return (*static_cast<Counted *>(params))(view(x));
}

void gsl_df(const gsl_vector *x, void *params, gsl_vector *g) {
  auto &c = *static_cast<Counted *>(params);
  if (c.fg) {
    c.with_gradient(view(x), {g->data, g->size});
    return;
  }
  const std::vector<double> xv = copy_from(x);
  std::vector<double> work = xv;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double h = c.rel_step * (1.0 + std::abs(xv[i]));
    work[i] = xv[i] + h;
    const double up = c(work);
    work[i] = xv[i] - h;
    const double down = c(work);
    work[i] = xv[i];
    gsl_vector_set(g, i, (up - down) / (2.0 * h));
  }
}

void gsl_fdf(const gsl_vector *x, void *params, double *f, gsl_vector *g) {
  auto &c = *static_cast<Counted *>(params);
  if (c.fg) {
    *f = c.with_gradient(view(x), {g->data, g->size});
    return;
  }
  *f = gsl_f(x, params);
  gsl_df(x, params, g);
}

} // namespace

OptimizeResult minimize_simplex(const Objective &f, std::vector<double> x0,
                                const SimplexOptions &options) {
  GslErrorsOff guard;
  const std::size_t n = x0.size();
  OptimizeResult result;
  Counted counted{&f};
  if (n == 0) {
    result.x = x0;
    result.value = counted(x0);
    result.evaluations = counted.evaluations;
    result.converged = true;
    result.status = "converged";
    return result;
  }
  gsl_vector *x = gsl_vector_alloc(n);
  gsl_vector *step = gsl_vector_alloc(n);
  copy_to(x0, x);
  gsl_vector_set_all(step, options.initial_step);

  gsl_multimin_function fn{&gsl_f, n, &counted};
  gsl_multimin_fminimizer *s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(s, &fn, x, step);

  int status = GSL_CONTINUE;
  int iter = 0;
  while (status == GSL_CONTINUE && iter < options.max_iterations) {
    ++iter;
    if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS)
      break;
    status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), options.size_tolerance);
  }
  result.x = copy_from(gsl_multimin_fminimizer_x(s));
  result.value = gsl_multimin_fminimizer_minimum(s);
  result.iterations = iter;
  result.evaluations = counted.evaluations;
  result.converged = status == GSL_SUCCESS;
  result.status = result.converged ? "converged"
                  : iter >= options.max_iterations ? "max_iterations"
                                                   : "no_progress";
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(step);
  gsl_vector_free(x);
  return result;
}

OptimizeResult minimize_bfgs(const Objective &f, std::vector<double> x0,
                             const BfgsOptions &options, const ValueAndGradient *gradient) {
  GslErrorsOff guard;
  const std::size_t n = x0.size();
  OptimizeResult result;
  Counted counted{&f};
  counted.rel_step = options.gradient_rel_step;
  counted.fg = gradient;
  if (n == 0) {
    result.x = x0;
    result.value = counted(x0);
    result.evaluations = counted.evaluations;
    result.converged = true;
    result.status = "converged";
    return result;
  }
  gsl_vector *x = gsl_vector_alloc(n);
  copy_to(x0, x);
  gsl_multimin_function_fdf fn{&gsl_f, &gsl_df, &gsl_fdf, n, &counted};
  gsl_multimin_fdfminimizer *s =
      gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, n);

  int iter = 0;
  bool converged = false;
  // A stalled line search restarts from the current point with a fresh
  // inverse-Hessian approximation.
  for (int attempt = 0; attempt <= options.max_restarts && !converged; ++attempt) {
    gsl_multimin_fdfminimizer_set(s, &fn, x, options.initial_step, options.line_tolerance);
    if (gsl_multimin_test_gradient(s->gradient, options.gradient_tolerance) == GSL_SUCCESS) {
      converged = true;
      break;
    }
    const double start_value = s->f;
    while (iter < options.max_iterations) {
      ++iter;
      const int rc = gsl_multimin_fdfminimizer_iterate(s);
      if (gsl_multimin_test_gradient(s->gradient, options.gradient_tolerance) == GSL_SUCCESS) {
        converged = true;
        break;
      }
      if (rc != GSL_SUCCESS)
        break;
    }
    gsl_vector_memcpy(x, s->x);
    if (iter >= options.max_iterations)
      break;
    if (!converged && !(s->f < start_value - 1e-12))
      break;
  }
  result.x = copy_from(s->x);
  result.value = s->f;
  result.iterations = iter;
  result.evaluations = counted.evaluations;
  result.converged = converged;
  result.status = converged ? "converged"
                  : iter >= options.max_iterations ? "max_iterations"
                                                   : "no_progress";
  gsl_multimin_fdfminimizer_free(s);
  gsl_vector_free(x);
  return result;
}

namespace {

// Differencing helpers report a failed evaluation as NaN so that callers
// see a non-finite derivative instead of an exception.
double value_or_nan(const Objective &f, std::span<const double> x) {
  try {
    return f(x);
  } catch (...) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

void gradient_or_nan(const ValueAndGradient &fg, std::span<const double> x, std::span<double> g) {
  try {
    fg(x, g);
  } catch (...) {
    std::fill(g.begin(), g.end(), std::numeric_limits<double>::quiet_NaN());
  }
}

} // namespace

std::vector<double> central_gradient(const Objective &f, std::span<const double> x,
                                     double rel_step) {
  std::vector<double> work(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = rel_step * (1.0 + std::abs(x[i]));
    work[i] = x[i] + h;
    const double up = value_or_nan(f, work);
    work[i] = x[i] - h;
    const double down = value_or_nan(f, work);
    work[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd central_hessian(const Objective &f, std::span<const double> x,
                                double rel_step) {
  const auto n = static_cast<Eigen::Index>(x.size());
  std::vector<double> work(x.begin(), x.end());
  std::vector<double> h(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    h[i] = rel_step * (1.0 + std::abs(x[i]));
  const double f0 = value_or_nan(f, work);
  Eigen::MatrixXd H(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto i = static_cast<std::size_t>(a);
    work[i] = x[i] + h[i];
    const double up = value_or_nan(f, work);
    work[i] = x[i] - h[i];
    const double down = value_or_nan(f, work);
    work[i] = x[i];
    H(a, a) = (up - 2.0 * f0 + down) / (h[i] * h[i]);
    for (Eigen::Index b = 0; b < a; ++b) {
      const auto j = static_cast<std::size_t>(b);
      auto eval = [&](double si, double sj) {
        work[i] = x[i] + si * h[i];
        work[j] = x[j] + sj * h[j];
        const double v = value_or_nan(f, work);
        work[i] = x[i];
        work[j] = x[j];
        return v;
      };
      const double v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) /
                       (4.0 * h[i] * h[j]);
      H(a, b) = v;
      H(b, a) = v;
    }
  }
  return H;
}

Eigen::MatrixXd central_hessian(const ValueAndGradient &fg, std::span<const double> x,
                                double rel_step) {
  const auto n = static_cast<Eigen::Index>(x.size());
  std::vector<double> work(x.begin(), x.end());
  std::vector<double> up(x.size()), down(x.size());
  Eigen::MatrixXd H(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto i = static_cast<std::size_t>(a);
    const double h = rel_step * (1.0 + std::abs(x[i]));
    work[i] = x[i] + h;
    gradient_or_nan(fg, work, up);
    work[i] = x[i] - h;
    gradient_or_nan(fg, work, down);
    work[i] = x[i];
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto j = static_cast<std::size_t>(b);
      H(b, a) = (up[j] - down[j]) / (2.0 * h);
    }
  }
  return 0.5 * (H + H.transpose());
}

} // namespace ctssm
