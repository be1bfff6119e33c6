#pragma once

#include <span>
#include <vector>

namespace ctssm {

/// B-spline basis on a simple (non-repeated) knot vector. With n knots and
/// order k there are n - k basis functions; function l is supported on
/// [knot l, knot l+k].
class SplineBasis {
public:
  SplineBasis(std::vector<double> knots, int order);

  /// 12 equally spaced knots on [7, 35], cubic: the 8-function age basis.
  static SplineBasis age_basis();

  int order() const { return order_; }
  std::size_t basis_count() const { return knots_.size() - static_cast<std::size_t>(order_); }
  const std::vector<double> &knots() const { return knots_; }
  double domain_lo() const { return knots_.front(); }
  double domain_hi() const { return knots_.back(); }
  /// Span on which every point is covered by `order` basis functions and the
  /// basis sums to one.
  double full_support_lo() const { return knots_[static_cast<std::size_t>(order_) - 1]; }
  double full_support_hi() const { return knots_[knots_.size() - static_cast<std::size_t>(order_)]; }
  bool in_full_support(double x) const {
    return x >= full_support_lo() && x <= full_support_hi();
  }

  /// Cox-de Boor evaluation of all basis functions at x.
  void eval(double x, std::span<double> out) const;
  std::vector<double> eval(double x) const;

  bool operator==(const SplineBasis &) const = default;

private:
  std::vector<double> knots_;
  int order_;
};

struct SplineCoefficients {
  std::vector<double> omega;
};

inline std::vector<double> basis_eval(const SplineBasis &basis, double x) {
  return basis.eval(x);
}

double curve_eval(const SplineBasis &basis, const SplineCoefficients &coefficients,
                  double x);

} // namespace ctssm
