#ifndef MODALSURV_SURVCORE_HPP
#define MODALSURV_SURVCORE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <set>
#include <vector>

#include "modalsurv/common.hpp"
#include "modalsurv/datamodel.hpp"

namespace modalsurv {

// Discretization of follow-up time into K left-closed/right-open bins
// [edges[k], edges[k+1]). edges[0] = 0 and the final edge sits just above the
// largest observed time, so every training time lands in exactly one bin.
struct TimeGrid {
  Eigen::VectorXd edges;      // K+1, strictly increasing
  Eigen::VectorXd midpoints;  // K

  Eigen::Index bins() const { return midpoints.size(); }
};

namespace detail {

// Type-7 empirical quantile (linear interpolation between order statistics).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

// Interior edges at the j/K quantiles of the pooled observed times (events and
// censored alike). Duplicate quantiles are collapsed and the edge list is then
// topped back up to K+1 by splitting the widest interval, so the edges stay
// strictly increasing and the grid keeps exactly K bins.
inline TimeGrid build_time_grid(const std::vector<double>& times, int k) {
  if (times.empty()) throw ValidationError("build_time_grid: no times given");
  if (k < 2) throw ValidationError("build_time_grid: K must be >= 2");
  for (double t : times) {
    if (!(t > 0.0)) throw ValidationError("build_time_grid: times must be positive");
  }
  std::vector<double> sorted(times);
  std::sort(sorted.begin(), sorted.end());
  if (std::set<double>(sorted.begin(), sorted.end()).size() < 2) {
    throw ValidationError("build_time_grid: need at least 2 distinct times");
  }

  const double last = sorted.back() * (1.0 + 1e-6);
  std::vector<double> edges{0.0};
  for (int j = 1; j < k; ++j) {
    edges.push_back(detail::quantile_sorted(sorted, static_cast<double>(j) / k));
  }
  edges.push_back(last);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  // pad collapsed quantiles by even subdivision of the widest gap
  while (edges.size() < static_cast<std::size_t>(k) + 1) {
    std::size_t widest = 0;
    for (std::size_t i = 1; i + 1 < edges.size(); ++i) {
      if (edges[i + 1] - edges[i] > edges[widest + 1] - edges[widest]) widest = i;
    }
    edges.insert(edges.begin() + static_cast<std::ptrdiff_t>(widest) + 1,
                 0.5 * (edges[widest] + edges[widest + 1]));
  }

  TimeGrid grid;
  grid.edges = Eigen::Map<Eigen::VectorXd>(edges.data(), static_cast<Eigen::Index>(edges.size()));
  grid.midpoints.resize(k);
  for (int i = 0; i < k; ++i) grid.midpoints[i] = 0.5 * (grid.edges[i] + grid.edges[i + 1]);
  return grid;
}

// Bin holding `time`: the unique k with edges[k] <= time < edges[k+1].
// Times at or beyond the final edge clamp to the last bin, so unseen long
// follow-ups at inference remain valid.
inline int bin_index(double time, const TimeGrid& grid) {
  const double* begin = grid.edges.data();
  const double* end = begin + grid.edges.size();
  const auto it = std::upper_bound(begin, end, time);
  auto k = static_cast<int>(it - begin) - 1;
  k = std::max(0, std::min<int>(k, static_cast<int>(grid.bins()) - 1));
  return k;
}

// Expected event time in months: sum_k pmf[k] * midpoint[k].
inline double expected_time(const PmfPrediction& pmf, const TimeGrid& grid) {
  validate_pmf(pmf);
  if (pmf.probs.size() != grid.bins()) {
    throw ValidationError("expected_time: pmf length does not match grid");
  }
  return pmf.probs.dot(grid.midpoints);
}

// S[k] = P(event after bin k) = 1 - sum_{j<=k} pmf[j].
inline Eigen::VectorXd survival_curve(const PmfPrediction& pmf) {
  validate_pmf(pmf);
  Eigen::VectorXd s(pmf.probs.size());
  double remaining = 1.0;
  for (Eigen::Index k = 0; k < pmf.probs.size(); ++k) {
    remaining -= pmf.probs[k];
    s[k] = remaining;
  }
  return s;
}

struct CIndexResult {
  double value = 0.0;
  std::size_t comparable_pairs = 0;
};

// Harrell's concordance index. A pair (i, j) is comparable when patient i had
// an observed event strictly before time j; ties in risk score count 0.5.
// Pairs whose earlier time is censored, censored-censored pairs, and pairs
// tied in time are not comparable.
inline CIndexResult c_index_detail(const std::vector<double>& risks,
                                   const std::vector<double>& times,
                                   const std::vector<char>& events) {
  const std::size_t n = risks.size();
  if (times.size() != n || events.size() != n) {
    throw ValidationError("c_index: risks, times, events must have equal length");
  }
  double concordant_weight = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!events[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !(times[i] < times[j])) continue;
      ++pairs;
      if (risks[i] > risks[j]) {
        concordant_weight += 1.0;
      } else if (risks[i] == risks[j]) {
        concordant_weight += 0.5;
      }
    }
  }
  if (pairs == 0) throw NumericError("C-index undefined: no comparable pairs");
  return {concordant_weight / static_cast<double>(pairs), pairs};
}

inline double c_index(const std::vector<double>& risks, const std::vector<double>& times,
                      const std::vector<char>& events) {
  return c_index_detail(risks, times, events).value;
}

// True when the observed (time, event) data admits at least one comparable pair.
inline bool has_comparable_pair(const std::vector<double>& times, const std::vector<char>& events) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!events[i]) continue;
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (j != i && times[i] < times[j]) return true;
    }
  }
  return false;
}

}  // namespace modalsurv

#endif  // MODALSURV_SURVCORE_HPP
