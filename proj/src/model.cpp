#include "ctssm/model.hpp"

#include <cmath>
#include <sstream>

#include "ctssm/errors.hpp"

namespace ctssm {

std::optional<std::string> ModelSpec::coverage_warning() const {
  const double sd = std::sqrt(process.stationary_variance());
  const double lo = (process.mu() - grid.b0()) / sd;
  const double hi = (grid.bm() - process.mu()) / sd;
  if (lo >= 6.0 && hi >= 6.0)
    return std::nullopt;
  std::ostringstream os;
  os << "grid [" << grid.b0() << ", " << grid.bm() << "] covers " << std::min(lo, hi)
     << " stationary sd on its narrower side (< 6)";
  return os.str();
}

std::string to_string(Family family) {
  switch (family) {
  case Family::PoissonScale:
    return "poisson-scale";
  case Family::NegBinSpline:
    return "negbin-spline";
  case Family::Benchmark:
    return "benchmark";
  }
  return "unknown";
}

Family family_from_string(const std::string &name) {
  if (name == "poisson-scale")
    return Family::PoissonScale;
  if (name == "negbin-spline")
    return Family::NegBinSpline;
  if (name == "benchmark")
    return Family::Benchmark;
  throw InvalidArgument("unknown model family '" + name +
                        "' (expected poisson-scale, negbin-spline or benchmark)");
}

double to_working(Transform t, double natural) {
  return t == Transform::Log ? std::log(natural) : natural;
}

double to_natural(Transform t, double working) {
  return t == Transform::Log ? std::exp(working) : working;
}

namespace {

void push_omegas(std::vector<Parameter> &params, const std::vector<double> &omega,
                 const std::string &prefix, std::size_t count) {
  if (omega.size() != count)
    throw InvalidArgument("ModelTemplate: " + prefix + " needs " + std::to_string(count) +
                          " coefficients");
  for (std::size_t l = 0; l < count; ++l)
    params.push_back({prefix + "_" + std::to_string(l + 1), omega[l], Transform::Identity, true});
}

} // namespace

ModelTemplate::ModelTemplate()
    : family_(Family::PoissonScale), basis_(SplineBasis::age_basis()) {}

ModelTemplate::ModelTemplate(Family family, std::vector<Parameter> params,
                             std::optional<Grid> grid, SplineBasis basis)
    : family_(family), params_(std::move(params)), grid_(std::move(grid)),
      basis_(std::move(basis)) {
  for (const auto &p : params_)
    if (p.transform == Transform::Log && !(p.value > 0.0))
      throw InvalidArgument("ModelTemplate: " + p.name + " must be > 0");
}

ModelTemplate ModelTemplate::poisson_scale(double theta, double sigma, double alpha, Grid grid) {
  return {Family::PoissonScale,
          {{"theta", theta, Transform::Log, true},
           {"sigma", sigma, Transform::Log, true},
           {"alpha", alpha, Transform::Log, true}},
          std::move(grid),
          SplineBasis::age_basis()};
}

ModelTemplate ModelTemplate::negbin_spline(double theta, double sigma, double phi,
                                           std::vector<double> omega1,
                                           std::vector<double> omega2, Grid grid,
                                           SplineBasis basis) {
  std::vector<Parameter> params{{"theta", theta, Transform::Log, true},
                                {"sigma", sigma, Transform::Log, true},
                                {"phi", phi, Transform::Log, true}};
  push_omegas(params, omega1, "omega1", basis.basis_count());
  push_omegas(params, omega2, "omega2", basis.basis_count());
  return {Family::NegBinSpline, std::move(params), std::move(grid), std::move(basis)};
}

ModelTemplate ModelTemplate::benchmark(double phi, std::vector<double> omega1,
                                       std::vector<double> omega2, SplineBasis basis) {
  std::vector<Parameter> params{{"phi", phi, Transform::Log, true}};
  push_omegas(params, omega1, "omega1", basis.basis_count());
  push_omegas(params, omega2, "omega2", basis.basis_count());
  return {Family::Benchmark, std::move(params), std::nullopt, std::move(basis)};
}

std::size_t ModelTemplate::index_of(const std::string &name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name)
      return i;
  throw InvalidArgument("ModelTemplate: no parameter '" + name + "' in family " +
                        to_string(family_));
}

double ModelTemplate::value(const std::string &name) const { return params_[index_of(name)].value; }

void ModelTemplate::set(const std::string &name, double value) {
  auto &p = params_[index_of(name)];
  if (p.transform == Transform::Log && !(value > 0.0))
    throw InvalidArgument("ModelTemplate: " + name + " must be > 0");
  p.value = value;
}

void ModelTemplate::fix(const std::string &name) { params_[index_of(name)].free = false; }

void ModelTemplate::fix(const std::string &name, double value) {
  set(name, value);
  fix(name);
}

void ModelTemplate::set_grid(Grid grid) {
  if (!has_state())
    throw InvalidArgument("ModelTemplate: the benchmark family has no grid");
  grid_ = std::move(grid);
}

std::size_t ModelTemplate::free_count() const {
  std::size_t n = 0;
  for (const auto &p : params_)
    n += p.free ? 1 : 0;
  return n;
}

std::vector<std::string> ModelTemplate::free_names() const {
  std::vector<std::string> out;
  for (const auto &p : params_)
    if (p.free)
      out.push_back(p.name);
  return out;
}

std::vector<double> ModelTemplate::free_working() const {
  std::vector<double> out;
  for (const auto &p : params_)
    if (p.free)
      out.push_back(to_working(p.transform, p.value));
  return out;
}

ModelTemplate ModelTemplate::with_free_working(std::span<const double> working) const {
  if (working.size() != free_count())
    throw InvalidArgument("ModelTemplate: wrong number of working parameters");
  ModelTemplate out = *this;
  std::size_t k = 0;
  for (auto &p : out.params_)
    if (p.free)
      p.value = to_natural(p.transform, working[k++]);
  return out;
}

std::vector<double> ModelTemplate::omega(int curve) const {
  const std::string prefix = curve == 1 ? "omega1_" : "omega2_";
  std::vector<double> out(basis_.basis_count());
  for (std::size_t l = 0; l < out.size(); ++l)
    out[l] = value(prefix + std::to_string(l + 1));
  return out;
}

OUParams ModelTemplate::process() const {
  if (!has_state())
    throw InvalidArgument("ModelTemplate: the benchmark family has no state process");
  return {value("theta"), 0.0, value("sigma")};
}

NegBinSplineEmission ModelTemplate::negbin_emission() const {
  if (family_ == Family::PoissonScale)
    throw InvalidArgument("ModelTemplate: poisson-scale has no negative binomial emission");
  return {value("phi"), {omega(1)}, {omega(2)}, basis_};
}

EmissionModel ModelTemplate::emission() const {
  if (family_ == Family::PoissonScale)
    return PoissonScaleEmission(value("alpha"));
  return negbin_emission();
}

ModelSpec ModelTemplate::build() const {
  if (!grid_)
    throw InvalidArgument("ModelTemplate: no grid (benchmark family or unset)");
  return {process(), emission(), *grid_, std::nullopt};
}

} // namespace ctssm
