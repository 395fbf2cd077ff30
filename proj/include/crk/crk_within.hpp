#ifndef CRK_CRK_WITHIN_HPP
#define CRK_CRK_WITHIN_HPP

// CRK test for parameters identified within clusters: per-cluster
// estimation on a quantile grid, optional pre-declared cluster merging, and
// the sign-flip test on the centred estimates.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crk/quantile_core.hpp"
#include "crk/randomization.hpp"

namespace crk {

/// Observations of one cluster. X, when present, already contains any
/// intercept column. treated holds per-observation 0/1 flags.
struct Cluster {
  std::string id;
  Sample y;
  std::optional<DesignMatrix> X;
  std::optional<std::vector<int>> treated;

  std::size_t size() const { return y.size(); }

  /// True when the cluster holds both treated and untreated observations.
  bool has_treatment_contrast() const {
    if (!treated) return false;
    const auto ones = std::count(treated->begin(), treated->end(), 1);
    return ones > 0 && ones < static_cast<std::ptrdiff_t>(treated->size());
  }
};

class ClusterDataset {
 public:
  explicit ClusterDataset(std::vector<Cluster> clusters) : clusters_(std::move(clusters)) {
    detail::require(clusters_.size() >= 2, "ClusterDataset: need at least two clusters");
    std::set<std::string> seen;
    for (const auto& c : clusters_) {
      detail::require(seen.insert(c.id).second, "ClusterDataset: duplicate cluster id '" + c.id + "'");
      if (c.X)
        detail::require(static_cast<std::size_t>(c.X->rows()) == c.size(),
                        "ClusterDataset: cluster '" + c.id + "' has mismatched y and X lengths");
      if (c.treated) {
        detail::require(c.treated->size() == c.size(),
                        "ClusterDataset: cluster '" + c.id + "' has mismatched treatment flags");
        for (int d : *c.treated)
          detail::require(d == 0 || d == 1, "ClusterDataset: treatment flags must be 0 or 1");
      }
    }
  }

  std::size_t q() const { return clusters_.size(); }
  const std::vector<Cluster>& clusters() const { return clusters_; }
  const Cluster& operator[](std::size_t j) const { return clusters_[j]; }

  std::optional<std::size_t> index_of(const std::string& id) const {
    for (std::size_t j = 0; j < clusters_.size(); ++j)
      if (clusters_[j].id == id) return j;
    return std::nullopt;
  }

 private:
  std::vector<Cluster> clusters_;
};

struct EstimatorSpec {
  enum class Kind { unconditional_quantile, qr_coefficient, qte_within_pair };
  Kind kind = Kind::unconditional_quantile;
  Eigen::Index target_column = 1;  // qr_coefficient: column of X holding the effect
};

/// delta_0 on the grid: either a constant or one value per grid point.
class NullFunction {
 public:
  static NullFunction constant(double c) { return NullFunction({c}, true); }
  static NullFunction values(std::vector<double> v) { return NullFunction(std::move(v), false); }

  std::vector<double> on(const QuantileGrid& grid) const {
    if (broadcast_) return std::vector<double>(grid.size(), values_.front());
    detail::require(values_.size() == grid.size(), "NullFunction: length " + std::to_string(values_.size()) +
                                                       " does not match grid size " + std::to_string(grid.size()));
    return values_;
  }

  bool is_constant() const { return broadcast_; }
  std::span<const double> raw() const { return values_; }

 private:
  NullFunction(std::vector<double> v, bool broadcast) : values_(std::move(v)), broadcast_(broadcast) {
    detail::require(!values_.empty(), "NullFunction: empty");
    detail::require(detail::all_finite(values_), "NullFunction: non-finite value");
  }
  std::vector<double> values_;
  bool broadcast_;
};

namespace detail {

inline std::vector<double> quantiles_on_grid(std::span<const double> sorted, const QuantileGrid& grid) {
  std::vector<double> out(grid.size());
  for (std::size_t l = 0; l < grid.size(); ++l) out[l] = empirical_quantile_sorted(sorted, grid[l]);
  return out;
}

inline std::vector<double> cluster_estimate(const Cluster& c, const EstimatorSpec& spec, const QuantileGrid& grid) {
  using Kind = EstimatorSpec::Kind;
  switch (spec.kind) {
    case Kind::unconditional_quantile:
      return quantiles_on_grid(c.y.sorted(), grid);
    case Kind::qr_coefficient: {
      if (!c.X) throw ValidationError("cluster '" + c.id + "': quantile regression needs covariates");
      if (spec.target_column < 0 || spec.target_column >= c.X->cols())
        throw ValidationError("cluster '" + c.id + "': target column out of range");
      if (static_cast<Eigen::Index>(c.size()) < c.X->cols())
        throw ValidationError("cluster '" + c.id + "': too few observations for a quantile regression with " +
                              std::to_string(c.X->cols()) + " coefficients");
      try {
        QuantileRegression qr(c.y.values(), *c.X);
        std::vector<double> out(grid.size());
        for (std::size_t l = 0; l < grid.size(); ++l) out[l] = qr.solve(grid[l]).coef[spec.target_column];
        return out;
      } catch (const ValidationError& e) {
        throw ValidationError("cluster '" + c.id + "': " + e.what());
      } catch (const NumericalError& e) {
        throw NumericalError("cluster '" + c.id + "': " + e.what());
      }
    }
    case Kind::qte_within_pair: {
      if (!c.treated) throw ValidationError("cluster '" + c.id + "': treatment contrast needs treatment flags");
      std::vector<double> t, u;
      for (std::size_t i = 0; i < c.size(); ++i) ((*c.treated)[i] ? t : u).push_back(c.y[i]);
      if (t.empty() || u.empty())
        throw ValidationError("cluster '" + c.id + "': needs both treated and control observations");
      std::sort(t.begin(), t.end());
      std::sort(u.begin(), u.end());
      std::vector<double> out(grid.size());
      for (std::size_t l = 0; l < grid.size(); ++l)
        out[l] = empirical_quantile_sorted(t, grid[l]) - empirical_quantile_sorted(u, grid[l]);
      return out;
    }
  }
  throw ValidationError("unknown estimator kind");
}

}  // namespace detail

/// Row j holds cluster j's estimate on the grid, computed from that
/// cluster's observations alone.
inline EstimateProcess estimate_per_cluster(const ClusterDataset& data, const EstimatorSpec& spec,
                                            const QuantileGrid& grid) {
  RowMatrix values(static_cast<Eigen::Index>(data.q()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t j = 0; j < data.q(); ++j) {
    const auto row = detail::cluster_estimate(data[j], spec, grid);
    for (std::size_t l = 0; l < grid.size(); ++l)
      values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) = row[l];
  }
  return EstimateProcess(std::move(values), grid);
}

/// Concatenates the observations of several clusters into one cluster whose
/// id joins the member ids with '+'.
inline Cluster pool_clusters(std::span<const Cluster* const> members) {
  detail::require(!members.empty(), "pool_clusters: no clusters");
  const bool with_x = members.front()->X.has_value();
  const bool with_d = members.front()->treated.has_value();
  for (const auto* m : members) {
    detail::require(m->X.has_value() == with_x, "merge_clusters: clusters disagree on covariate presence");
    detail::require(m->treated.has_value() == with_d, "merge_clusters: clusters disagree on treatment flags");
    if (with_x) detail::require(m->X->cols() == members.front()->X->cols(), "merge_clusters: covariate counts differ");
  }

  std::string merged_id;
  std::vector<double> y;
  std::vector<int> d;
  Eigen::Index rows = 0;
  for (const auto* m : members) {
    merged_id += (merged_id.empty() ? "" : "+") + m->id;
    y.insert(y.end(), m->y.values().begin(), m->y.values().end());
    if (with_d) d.insert(d.end(), m->treated->begin(), m->treated->end());
    rows += static_cast<Eigen::Index>(m->size());
  }
  std::optional<DesignMatrix> X;
  if (with_x) {
    RowMatrix mx(rows, members.front()->X->cols());
    Eigen::Index at = 0;
    for (const auto* m : members) {
      mx.middleRows(at, m->X->rows()) = m->X->matrix();
      at += m->X->rows();
    }
    X.emplace(std::move(mx));
  }
  return Cluster{merged_id, Sample(std::move(y)), std::move(X),
                 with_d ? std::optional<std::vector<int>>(std::move(d)) : std::nullopt};
}

/// Merge each group of cluster ids into one cluster. The merged id is the
/// sorted member ids joined by '+', observations are concatenated in that
/// order, and the merged cluster takes the position of its earliest member.
inline ClusterDataset merge_clusters(const ClusterDataset& data, const std::vector<std::vector<std::string>>& plan) {
  std::map<std::string, std::size_t> group_of;
  for (std::size_t g = 0; g < plan.size(); ++g) {
    detail::require(!plan[g].empty(), "merge_clusters: empty group");
    for (const auto& id : plan[g]) {
      detail::require(data.index_of(id).has_value(), "merge_clusters: unknown cluster id '" + id + "'");
      detail::require(group_of.emplace(id, g).second, "merge_clusters: cluster '" + id + "' appears in two groups");
    }
  }

  std::vector<Cluster> out;
  std::vector<bool> emitted(plan.size(), false);
  for (const auto& c : data.clusters()) {
    const auto it = group_of.find(c.id);
    if (it == group_of.end()) {
      out.push_back(c);
      continue;
    }
    if (emitted[it->second]) continue;
    emitted[it->second] = true;

    std::vector<std::string> ids = plan[it->second];
    std::sort(ids.begin(), ids.end());
    std::vector<const Cluster*> members;
    for (const auto& id : ids) members.push_back(&data[*data.index_of(id)]);
    out.push_back(pool_clusters(members));
  }
  return ClusterDataset(std::move(out));
}

/// Runs the sign-flip test on an already-assembled estimate process after
/// subtracting the null.
inline TestResult crk_test_process(const EstimateProcess& estimates, const NullFunction& null, double alpha,
                                   Direction direction, const GroupConfig& group) {
  const auto centred = estimates.centered(null.on(estimates.grid()));
  const auto G = make_sign_group(centred.q(), group);
  return crk_decision(centred, G, alpha, direction, {group.left_rule, group.add_identity});
}

/// Within-cluster CRK test. No sqrt(n) scaling is applied: the decision is
/// invariant to positive rescaling of the process.
inline TestResult crk_test_within(const ClusterDataset& data, const EstimatorSpec& spec, const QuantileGrid& grid,
                                  const NullFunction& null, double alpha, Direction direction,
                                  const GroupConfig& group) {
  return crk_test_process(estimate_per_cluster(data, spec, grid), null, alpha, direction, group);
}

/// Enforces the pre-analysis-plan ordering: merges must be declared before
/// the first estimate is computed.
class WithinSession {
 public:
  explicit WithinSession(ClusterDataset data) : data_(std::move(data)) {}

  void merge(const std::vector<std::vector<std::string>>& plan) {
    if (estimated_) throw ValidationError("merge plan must be declared before any estimates are computed");
    data_ = merge_clusters(data_, plan);
  }

  EstimateProcess estimate(const EstimatorSpec& spec, const QuantileGrid& grid) {
    estimated_ = true;
    return estimate_per_cluster(data_, spec, grid);
  }

  TestResult test(const EstimatorSpec& spec, const QuantileGrid& grid, const NullFunction& null, double alpha,
                  Direction direction, const GroupConfig& group) {
    return crk_test_process(estimate(spec, grid), null, alpha, direction, group);
  }

  const ClusterDataset& data() const { return data_; }

 private:
  ClusterDataset data_;
  bool estimated_ = false;
};

}  // namespace crk

#endif  // CRK_CRK_WITHIN_HPP
