#include "ctssm/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ctssm/errors.hpp"

namespace ctssm {

double canonical_gap(double delta) {
  return static_cast<double>(std::llround(delta / kGapResolution)) * kGapResolution;
}

ObservationSequence::ObservationSequence(std::vector<double> times, std::vector<Count> counts,
                                         std::optional<std::vector<Covariates>> covariates)
    : times_(std::move(times)), counts_(std::move(counts)), covariates_(std::move(covariates)) {
  if (times_.empty())
    throw InvalidArgument("ObservationSequence: at least one observation required");
  if (times_.size() != counts_.size())
    throw InvalidArgument("ObservationSequence: times and counts differ in length");
  if (covariates_ && covariates_->size() != times_.size())
    throw InvalidArgument("ObservationSequence: covariates differ in length");
  if (!std::isfinite(times_[0]) || times_[0] < 0.0)
    throw InvalidArgument("ObservationSequence: times must be finite and non-negative");
  for (std::size_t k = 1; k < times_.size(); ++k)
    if (!std::isfinite(times_[k]) || !(times_[k] > times_[k - 1]))
      throw InvalidArgument("ObservationSequence: times must be strictly increasing (index " +
                            std::to_string(k) + ")");
    else if (!(gap(k) > 0.0))
      throw InvalidArgument("ObservationSequence: gap at index " + std::to_string(k) +
                            " is below the 1e-9 time resolution");
  for (Count y : counts_)
    if (y < 0)
      throw InvalidArgument("ObservationSequence: counts must be non-negative");
  if (covariates_)
    for (const auto &c : *covariates_)
      if (c.gender != 0 && c.gender != 1)
        throw InvalidArgument("ObservationSequence: gender must be 0 or 1");
}

const std::vector<Covariates> &ObservationSequence::covariates() const {
  if (!covariates_)
    throw std::logic_error("ObservationSequence: no covariates");
  return *covariates_;
}

const Covariates *ObservationSequence::covariates_at(std::size_t k) const {
  return covariates_ ? &(*covariates_)[k] : nullptr;
}

ObservationSequence ObservationSequence::shifted(double offset) const {
  std::vector<double> t = times_;
  for (double &v : t)
    v += offset;
  return {std::move(t), counts_, covariates_};
}

PanelDataset::PanelDataset(ObservationSequence single, std::string id) {
  add(std::move(id), std::move(single));
}

void PanelDataset::add(std::string id, ObservationSequence sequence) {
  for (const auto &e : entries_)
    if (e.id == id)
      throw InvalidArgument("PanelDataset: duplicate id '" + id + "'");
  entries_.push_back({std::move(id), std::move(sequence)});
}

std::size_t PanelDataset::observation_count() const {
  std::size_t n = 0;
  for (const auto &e : entries_)
    n += e.sequence.size();
  return n;
}

bool PanelDataset::has_covariates() const {
  return !entries_.empty() &&
         std::all_of(entries_.begin(), entries_.end(),
                     [](const Entry &e) { return e.sequence.has_covariates(); });
}

std::vector<std::size_t> PanelDataset::id_order() const {
  std::vector<std::size_t> order(entries_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
    return entries_[a].id < entries_[b].id;
  });
  return order;
}

} // namespace ctssm
