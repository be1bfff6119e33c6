#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctssm/emissions.hpp"

namespace ctssm {

/// Time gaps are resolved to this step. Rounding every gap to it makes
/// likelihoods invariant to shifts of the time origin, which otherwise
/// perturb differences in the last bits.
inline constexpr double kGapResolution = 1e-9;

/// `delta` rounded to a multiple of kGapResolution.
double canonical_gap(double delta);

/// Counts observed at strictly increasing times, optionally with covariates.
class ObservationSequence {
public:
  ObservationSequence(std::vector<double> times, std::vector<Count> counts,
                      std::optional<std::vector<Covariates>> covariates = std::nullopt);

  std::size_t size() const { return times_.size(); }
  const std::vector<double> &times() const { return times_; }
  const std::vector<Count> &counts() const { return counts_; }
  bool has_covariates() const { return covariates_.has_value(); }
  const std::vector<Covariates> &covariates() const;
  /// Covariates of observation k, or null when the sequence has none.
  const Covariates *covariates_at(std::size_t k) const;
  /// t_k - t_{k-1} for k >= 1, rounded by canonical_gap.
  double gap(std::size_t k) const { return canonical_gap(times_[k] - times_[k - 1]); }

  /// Same counts and covariates, times shifted by `offset`.
  ObservationSequence shifted(double offset) const;

private:
  std::vector<double> times_;
  std::vector<Count> counts_;
  std::optional<std::vector<Covariates>> covariates_;
};

/// Independent individuals, each with their own sequence.
class PanelDataset {
public:
  struct Entry {
    std::string id;
    ObservationSequence sequence;
  };

  PanelDataset() = default;
  explicit PanelDataset(ObservationSequence single, std::string id = "1");

  void add(std::string id, ObservationSequence sequence);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry> &entries() const { return entries_; }
  const Entry &operator[](std::size_t i) const { return entries_[i]; }
  std::size_t observation_count() const;
  bool has_covariates() const;
  /// Entry positions ordered by id; the reduction order of panel sums.
  std::vector<std::size_t> id_order() const;

private:
  std::vector<Entry> entries_;
};

} // namespace ctssm
