#include "ctssm/splines.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctssm/errors.hpp"

namespace ctssm {

SplineBasis::SplineBasis(std::vector<double> knots, int order)
    : knots_(std::move(knots)), order_(order) {
  if (order_ < 1)
    throw InvalidArgument("SplineBasis: order must be >= 1");
  if (knots_.size() <= static_cast<std::size_t>(order_))
    throw InvalidArgument("SplineBasis: need more knots than the order");
  for (std::size_t i = 1; i < knots_.size(); ++i)
    if (!(knots_[i] > knots_[i - 1]))
      throw InvalidArgument("SplineBasis: knots must be strictly increasing");
}

SplineBasis SplineBasis::age_basis() {
  std::vector<double> knots(12);
  for (std::size_t i = 0; i < knots.size(); ++i)
    knots[i] = 7.0 + 28.0 * static_cast<double>(i) / 11.0;
  knots.back() = 35.0;
  return {std::move(knots), 4};
}

void SplineBasis::eval(double x, std::span<double> out) const {
  const std::size_t nb = basis_count();
  if (out.size() != nb)
    throw InvalidArgument("SplineBasis::eval: output has wrong length");
  if (!(x >= domain_lo() && x <= domain_hi()))
    throw OutOfDomain("SplineBasis::eval: " + std::to_string(x) + " outside [" +
                      std::to_string(domain_lo()) + ", " + std::to_string(domain_hi()) +
                      "]");
  std::fill(out.begin(), out.end(), 0.0);

  // Interval index s with knots[s] <= x < knots[s+1]; the right end of the
  // domain belongs to the last interval.
  const std::size_t nk = knots_.size();
  auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
  std::size_t s = static_cast<std::size_t>(it - knots_.begin());
  s = std::min(s == 0 ? 0 : s - 1, nk - 2);

  // N[r] holds the degree-d basis function with index s - d + r.
  const int k = order_;
  std::vector<double> N(static_cast<std::size_t>(k), 0.0);
  N[0] = 1.0;
  for (int d = 1; d < k; ++d) {
    std::vector<double> next(static_cast<std::size_t>(k), 0.0);
    for (int r = 0; r <= d; ++r) {
      const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(s) - d + r;
      if (j < 0 || static_cast<std::size_t>(j) + d + 1 >= nk)
        continue;
      const auto ju = static_cast<std::size_t>(j);
      double v = 0.0;
      if (r >= 1) {
        const double left = knots_[ju + d] - knots_[ju];
        v += (x - knots_[ju]) / left * N[static_cast<std::size_t>(r - 1)];
      }
      if (r < d) {
        const double right = knots_[ju + d + 1] - knots_[ju + 1];
        v += (knots_[ju + d + 1] - x) / right * N[static_cast<std::size_t>(r)];
      }
      next[static_cast<std::size_t>(r)] = v;
    }
    N.swap(next);
  }
  for (int r = 0; r < k; ++r) {
    const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(s) - (k - 1) + r;
    if (j >= 0 && static_cast<std::size_t>(j) < nb)
      out[static_cast<std::size_t>(j)] = N[static_cast<std::size_t>(r)];
  }
}

std::vector<double> SplineBasis::eval(double x) const {
  std::vector<double> out(basis_count());
  eval(x, out);
  return out;
}

double curve_eval(const SplineBasis &basis, const SplineCoefficients &coefficients,
                  double x) {
  if (coefficients.omega.size() != basis.basis_count())
    throw InvalidArgument("curve_eval: expected " + std::to_string(basis.basis_count()) +
                          " coefficients, got " +
                          std::to_string(coefficients.omega.size()));
  const std::vector<double> values = basis.eval(x);
  double sum = 0.0;
  for (std::size_t l = 0; l < values.size(); ++l)
    sum += coefficients.omega[l] * values[l];
  return sum;
}

} // namespace ctssm
