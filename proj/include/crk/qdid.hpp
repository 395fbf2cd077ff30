#ifndef CRK_QDID_HPP
#define CRK_QDID_HPP

// Quantile difference-in-differences on three-period panels (t = -1, 0, 1):
// the counterfactual untreated distribution of the treated group built from
// empirical CDFs and quantiles, and the resulting QTT on a grid.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "crk/crk_between.hpp"
#include "crk/quantile_core.hpp"

namespace crk {

/// Outcome triples (y_{-1}, y_0, y_1) per unit; the whole panel shares D.
struct PanelSample {
  std::vector<std::array<double, 3>> units;
  bool treated = false;
  std::string id;

  PanelSample(std::vector<std::array<double, 3>> u, bool d, std::string name = {})
      : units(std::move(u)), treated(d), id(std::move(name)) {
    detail::require(!units.empty(), "PanelSample: empty panel");
    for (const auto& t : units)
      detail::require(std::isfinite(t[0]) && std::isfinite(t[1]) && std::isfinite(t[2]),
                      "PanelSample: non-finite outcome");
  }

  std::vector<double> period(int t) const {
    std::vector<double> out;
    out.reserve(units.size());
    for (const auto& u : units) out.push_back(u[static_cast<std::size_t>(t + 1)]);
    return out;
  }

  /// y_t - y_{t-1} for t in {0, 1}.
  std::vector<double> change(int t) const {
    std::vector<double> out;
    out.reserve(units.size());
    for (const auto& u : units) out.push_back(u[static_cast<std::size_t>(t + 1)] - u[static_cast<std::size_t>(t)]);
    return out;
  }
};

namespace detail {

inline std::vector<double> sorted_copy(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

inline void check_qdid_inputs(const PanelSample& treated, const PanelSample& control) {
  require(treated.treated, "qdid: first panel must be treated");
  require(!control.treated, "qdid: second panel must be untreated");
}

}  // namespace detail

/// Constructed counterfactual values a_i, one per treated unit:
///   Q_{dY1 | D=0}(F_{dY0 | D=1}(dY0_i)) + Q_{Y0 | D=0}(F_{Y-1 | D=1}(Y-1_i)).
/// Both CDFs are evaluated at the unit's own value, so they are >= 1/n and
/// the quantile argument never leaves (0, 1].
inline std::vector<double> counterfactual_values(const PanelSample& treated, const PanelSample& control) {
  detail::check_qdid_inputs(treated, control);
  const auto t_dy0 = treated.change(0);
  const auto t_ym1 = treated.period(-1);
  const auto t_dy0_sorted = detail::sorted_copy(t_dy0);
  const auto t_ym1_sorted = detail::sorted_copy(t_ym1);
  const auto c_dy1_sorted = detail::sorted_copy(control.change(1));
  const auto c_y0_sorted = detail::sorted_copy(control.period(0));

  std::vector<double> a(treated.units.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double f1 = empirical_cdf_sorted(t_dy0_sorted, t_dy0[i]);
    const double f2 = empirical_cdf_sorted(t_ym1_sorted, t_ym1[i]);
    if (f1 <= 0.0 || f2 <= 0.0) throw NumericalError("qdid: CDF of an own sample point evaluated to zero");
    a[i] = empirical_quantile_sorted(c_dy1_sorted, f1) + empirical_quantile_sorted(c_y0_sorted, f2);
  }
  return a;
}

/// Empirical counterfactual CDF of the untreated t = 1 outcome of the treated.
inline double counterfactual_cdf(const PanelSample& treated, const PanelSample& control, double y) {
  const auto a = detail::sorted_copy(counterfactual_values(treated, control));
  return empirical_cdf_sorted(a, y);
}

/// QTT on the grid: treated t = 1 quantile minus the counterfactual quantile
/// (type-1 inverse over the constructed values).
inline std::vector<double> qtt_estimate(const PanelSample& treated, const PanelSample& control,
                                        const QuantileGrid& grid) {
  const auto a = detail::sorted_copy(counterfactual_values(treated, control));
  const auto y1 = detail::sorted_copy(treated.period(1));
  std::vector<double> out(grid.size());
  for (std::size_t l = 0; l < grid.size(); ++l)
    out[l] = empirical_quantile_sorted(y1, grid[l]) - empirical_quantile_sorted(a, grid[l]);
  return out;
}

/// delta_{j,k} for every treated panel j and control panel k (or just the
/// pairs touched by `only`).
inline PairwiseEstimates qdid_pairwise(const std::vector<PanelSample>& treated,
                                       const std::vector<PanelSample>& control, const QuantileGrid& grid,
                                       const MatchingSet* only = nullptr) {
  PairwiseEstimates pairs(treated.size(), control.size(), grid);
  std::vector<char> wanted(treated.size() * control.size(), only == nullptr);
  if (only)
    for (const auto& h : only->members())
      for (std::size_t r = 0; r < h.assignment.size(); ++r)
        wanted[h.treated_at(r) * control.size() + h.control_at(r)] = 1;
  for (std::size_t j = 0; j < treated.size(); ++j)
    for (std::size_t k = 0; k < control.size(); ++k)
      if (wanted[j * control.size() + k]) pairs.set(j, k, qtt_estimate(treated[j], control[k], grid));
  return pairs;
}

}  // namespace crk

#endif  // CRK_QDID_HPP
