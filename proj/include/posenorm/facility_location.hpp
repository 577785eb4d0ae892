#pragma once

// Uncapacitated, non-metric facility location with uniform open cost, solved
// by the greedy star-selection heuristic: repeatedly pick the facility and
// the prefix of its cheapest unassigned cities with the lowest average cost
// (open cost included while the facility is still closed).

#include <posenorm/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace posenorm {

inline constexpr double kInfiniteCost = std::numeric_limits<double>::infinity();

// Connection costs are held sparsely: only finite (city, cost) pairs are
// stored per facility.
class FacilityLocationInstance {
 public:
  struct Link {
    std::size_t city;
    double cost;
  };

  FacilityLocationInstance(double open_cost, std::size_t n_cities, std::size_t n_facilities)
      : open_cost_(open_cost), n_cities_(n_cities), links_(n_facilities) {
    if (!(open_cost > 0.0) || !std::isfinite(open_cost)) {
      fail(ErrorKind::InvalidArgument, "facility open cost must be positive and finite");
    }
    city_ids_.resize(n_cities);
    facility_ids_.resize(n_facilities);
    for (std::size_t c = 0; c < n_cities; ++c) city_ids_[c] = static_cast<std::int64_t>(c);
    for (std::size_t f = 0; f < n_facilities; ++f) facility_ids_[f] = static_cast<std::int64_t>(f);
  }

  // Dense city x facility matrix; +inf marks a forbidden connection.
  static FacilityLocationInstance from_dense(double open_cost, const std::vector<std::vector<double>>& cost) {
    const std::size_t n_cities = cost.size();
    const std::size_t n_facilities = n_cities == 0 ? 0 : cost.front().size();
    FacilityLocationInstance inst(open_cost, n_cities, n_facilities);
    for (std::size_t c = 0; c < n_cities; ++c) {
      if (cost[c].size() != n_facilities) fail(ErrorKind::InvalidArgument, "ragged cost matrix");
      for (std::size_t f = 0; f < n_facilities; ++f) inst.set_cost(c, f, cost[c][f]);
    }
    return inst;
  }

  void set_cost(std::size_t city, std::size_t facility, double cost) {
    if (city >= n_cities_ || facility >= links_.size()) fail(ErrorKind::InvalidArgument, "cost index out of range");
    if (std::isnan(cost) || cost < 0.0) fail(ErrorKind::InvalidArgument, "connection costs must be >= 0 or +inf");
    if (std::isinf(cost)) return;
    links_[facility].push_back({city, cost});
  }

  void set_ids(std::vector<std::int64_t> city_ids, std::vector<std::int64_t> facility_ids) {
    if (city_ids.size() != n_cities_ || facility_ids.size() != links_.size()) {
      fail(ErrorKind::InvalidArgument, "id list sizes do not match the instance");
    }
    city_ids_ = std::move(city_ids);
    facility_ids_ = std::move(facility_ids);
  }

  double open_cost() const noexcept { return open_cost_; }
  std::size_t city_count() const noexcept { return n_cities_; }
  std::size_t facility_count() const noexcept { return links_.size(); }
  const std::vector<Link>& links(std::size_t facility) const { return links_[facility]; }
  const std::vector<std::int64_t>& city_ids() const noexcept { return city_ids_; }
  const std::vector<std::int64_t>& facility_ids() const noexcept { return facility_ids_; }

  // Cost lookup by scan; intended for checking, not for inner loops.
  double cost(std::size_t city, std::size_t facility) const {
    double best = kInfiniteCost;
    for (const auto& l : links_[facility])
      if (l.city == city) best = std::min(best, l.cost);
    return best;
  }

 private:
  double open_cost_;
  std::size_t n_cities_;
  std::vector<std::vector<Link>> links_;
  std::vector<std::int64_t> city_ids_;
  std::vector<std::int64_t> facility_ids_;
};

struct FacilitySolution {
  std::vector<std::size_t> open_facilities;  // ascending facility index
  std::vector<std::size_t> assignment;       // city -> facility index
  std::vector<double> assignment_cost;       // city -> connection cost
  double total_cost = 0.0;
};

// Recomputes the objective from an assignment; used for reporting and checks.
inline double facility_objective(const FacilityLocationInstance& inst, const std::vector<std::size_t>& open,
                                 const std::vector<double>& assignment_cost) {
  double total = inst.open_cost() * static_cast<double>(open.size());
  for (double c : assignment_cost) total += c;
  return total;
}

inline FacilitySolution greedy_facility_location(const FacilityLocationInstance& inst) {
  const std::size_t n_cities = inst.city_count();
  const std::size_t n_fac = inst.facility_count();

  // Each facility's finite links, sorted once by (cost, city).
  std::vector<std::vector<FacilityLocationInstance::Link>> sorted(n_fac);
  std::vector<char> coverable(n_cities, 0);
  for (std::size_t f = 0; f < n_fac; ++f) {
    sorted[f] = inst.links(f);
    std::sort(sorted[f].begin(), sorted[f].end(),
              [](const auto& a, const auto& b) { return a.cost != b.cost ? a.cost < b.cost : a.city < b.city; });
    for (const auto& l : sorted[f]) coverable[l.city] = 1;
  }
  std::string uncovered;
  std::size_t n_uncovered = 0;
  for (std::size_t c = 0; c < n_cities; ++c) {
    if (coverable[c]) continue;
    if (n_uncovered++ < 20) uncovered += (uncovered.empty() ? "" : ",") + std::to_string(inst.city_ids()[c]);
  }
  if (n_uncovered > 0) {
    fail(ErrorKind::Infeasible, std::to_string(n_uncovered) + " cities have no finite connection cost (ids " +
                                    uncovered + (n_uncovered > 20 ? ",..." : "") + ")");
  }

  constexpr std::size_t kUnassigned = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> assignment(n_cities, kUnassigned);
  std::vector<char> is_open(n_fac, 0);
  std::vector<std::size_t> first_live(n_fac, 0);  // skip the already-assigned head of each list
  std::size_t remaining = n_cities;

  while (remaining > 0) {
    double best_ratio = kInfiniteCost;
    std::size_t best_fac = kUnassigned;
    std::size_t best_len = 0;
    for (std::size_t f = 0; f < n_fac; ++f) {
      const auto& list = sorted[f];
      while (first_live[f] < list.size() && assignment[list[first_live[f]].city] != kUnassigned) ++first_live[f];
      double sum = is_open[f] ? 0.0 : inst.open_cost();
      std::size_t len = 0;
      double fac_ratio = kInfiniteCost;
      std::size_t fac_len = 0;
      for (std::size_t i = first_live[f]; i < list.size(); ++i) {
        if (assignment[list[i].city] != kUnassigned) continue;
        // Sorted costs: once a cost exceeds the running ratio, longer prefixes only get worse.
        if (len > 0 && list[i].cost > fac_ratio) break;
        sum += list[i].cost;
        ++len;
        const double ratio = sum / static_cast<double>(len);
        if (ratio <= fac_ratio) {
          fac_ratio = ratio;
          fac_len = len;
        }
      }
      if (fac_len > 0 && fac_ratio < best_ratio) {
        best_ratio = fac_ratio;
        best_fac = f;
        best_len = fac_len;
      }
    }

    if (best_fac >= n_fac) fail(ErrorKind::Infeasible, "no facility can serve the remaining cities");
    is_open[best_fac] = 1;
    std::size_t taken = 0;
    for (std::size_t i = first_live[best_fac]; i < sorted[best_fac].size() && taken < best_len; ++i) {
      const std::size_t city = sorted[best_fac][i].city;
      if (assignment[city] != kUnassigned) continue;
      assignment[city] = best_fac;
      ++taken;
    }
    remaining -= taken;
  }

  // Cleanup: move every city to its cheapest open facility, then close any
  // facility left without cities.
  std::vector<double> cost(n_cities, kInfiniteCost);
  std::vector<std::size_t> best(n_cities, kUnassigned);
  for (std::size_t f = 0; f < n_fac; ++f) {
    if (!is_open[f]) continue;
    for (const auto& l : sorted[f]) {
      if (l.cost < cost[l.city] || (l.cost == cost[l.city] && f < best[l.city])) {
        cost[l.city] = l.cost;
        best[l.city] = f;
      }
    }
  }
  std::vector<char> used(n_fac, 0);
  for (std::size_t c = 0; c < n_cities; ++c)
    if (best[c] < n_fac) used[best[c]] = 1;

  FacilitySolution sol;
  for (std::size_t f = 0; f < n_fac; ++f)
    if (used[f]) sol.open_facilities.push_back(f);
  sol.assignment = std::move(best);
  sol.assignment_cost = std::move(cost);
  sol.total_cost = facility_objective(inst, sol.open_facilities, sol.assignment_cost);
  return sol;
}

}  // namespace posenorm
