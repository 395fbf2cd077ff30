#ifndef CRK_CRK_BETWEEN_HPP
#define CRK_CRK_BETWEEN_HPP

// CRK test for parameters identified between clusters. Each treated/control
// pair (j, k) yields an estimate; a matching picks pairs that use every
// cluster at most once, each matching gives a randomization p-value, and the
// p-values are combined by a rule that is valid under arbitrary dependence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "crk/crk_within.hpp"
#include "crk/randomization.hpp"

namespace crk {

/// One injective pairing. Without permute_treated, row i pairs treated i
/// with control assignment[i] (q1 <= q0). With permute_treated, row k pairs
/// treated assignment[k] with control k (q1 > q0).
struct Matching {
  std::vector<std::size_t> assignment;
  bool permute_treated = false;

  bool operator==(const Matching&) const = default;
  auto operator<=>(const Matching&) const = default;

  std::size_t treated_at(std::size_t row) const { return permute_treated ? assignment[row] : row; }
  std::size_t control_at(std::size_t row) const { return permute_treated ? row : assignment[row]; }
};

class MatchingSet {
 public:
  enum class Mode { exhaustive, sampled };

  MatchingSet(std::size_t q1, std::size_t q0, std::vector<Matching> members, Mode mode,
              std::optional<std::uint64_t> seed = {})
      : q1_(q1), q0_(q0), members_(std::move(members)), mode_(mode), seed_(seed) {
    detail::require(!members_.empty(), "MatchingSet: empty");
    const std::size_t q = std::min(q1_, q0_);
    const std::size_t range = std::max(q1_, q0_);
    for (const auto& h : members_) {
      detail::require(h.assignment.size() == q, "MatchingSet: matching has wrong length");
      detail::require(h.permute_treated == (q1_ > q0_), "MatchingSet: matching has wrong orientation");
      std::vector<bool> used(range, false);
      for (auto a : h.assignment) {
        detail::require(a < range, "MatchingSet: matching index out of range");
        detail::require(!used[a], "MatchingSet: matching is not injective");
        used[a] = true;
      }
    }
  }

  std::size_t q1() const { return q1_; }
  std::size_t q0() const { return q0_; }
  std::size_t size() const { return members_.size(); }
  Mode mode() const { return mode_; }
  std::optional<std::uint64_t> seed() const { return seed_; }
  const Matching& operator[](std::size_t i) const { return members_[i]; }
  const std::vector<Matching>& members() const { return members_; }

 private:
  std::size_t q1_, q0_;
  std::vector<Matching> members_;
  Mode mode_;
  std::optional<std::uint64_t> seed_;
};

/// |H| = P(max, min) = max! / (max - min)!, saturating at uint64 max.
inline std::uint64_t matching_count(std::size_t q1, std::size_t q0) {
  const std::size_t hi = std::max(q1, q0), lo = std::min(q1, q0);
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < lo; ++i) {
    const std::uint64_t f = hi - i;
    if (total > std::numeric_limits<std::uint64_t>::max() / f) return std::numeric_limits<std::uint64_t>::max();
    total *= f;
  }
  return total;
}

inline constexpr std::uint64_t kMaxEnumeratedMatchings = 1'000'000;

/// Every ordered injection, in lexicographic order of the assignment.
inline MatchingSet enumerate_matchings(std::size_t q1, std::size_t q0) {
  detail::require(q1 >= 1 && q0 >= 1, "enumerate_matchings: need at least one treated and one control cluster");
  const auto total = matching_count(q1, q0);
  if (total > kMaxEnumeratedMatchings)
    throw ValidationError("enumerate_matchings: " + std::to_string(total) +
                          " matchings exceed the enumeration limit; sample a subset instead");
  const std::size_t len = std::min(q1, q0), range = std::max(q1, q0);
  const bool flip = q1 > q0;
  std::vector<Matching> out;
  out.reserve(static_cast<std::size_t>(total));
  std::vector<std::size_t> current;
  std::vector<bool> used(range, false);
  // depth-first over positions
  auto recurse = [&](auto&& self) -> void {
    if (current.size() == len) {
      out.push_back(Matching{current, flip});
      return;
    }
    for (std::size_t c = 0; c < range; ++c) {
      if (used[c]) continue;
      used[c] = true;
      current.push_back(c);
      self(self);
      current.pop_back();
      used[c] = false;
    }
  };
  recurse(recurse);
  return MatchingSet(q1, q0, std::move(out), MatchingSet::Mode::exhaustive);
}

namespace detail {

inline Matching random_matching(std::size_t q1, std::size_t q0, std::mt19937_64& gen) {
  const std::size_t len = std::min(q1, q0), range = std::max(q1, q0);
  std::vector<std::size_t> pool(range);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < len; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, range - 1);
    std::swap(pool[i], pool[pick(gen)]);
  }
  pool.resize(len);
  return Matching{std::move(pool), q1 > q0};
}

}  // namespace detail

/// count distinct matchings drawn uniformly without replacement. The draw
/// depends on the seed only, never on data.
inline MatchingSet sample_matchings(std::size_t q1, std::size_t q0, std::size_t count, std::uint64_t seed) {
  detail::require(q1 >= 1 && q0 >= 1, "sample_matchings: need at least one treated and one control cluster");
  const auto total = matching_count(q1, q0);
  detail::require(count >= 2 && count <= total,
                  "sample_matchings: count must lie in [2, " + std::to_string(total) + "]");
  std::mt19937_64 gen(seed);
  std::vector<Matching> out;
  if (total <= kMaxEnumeratedMatchings && count * 4 >= total) {
    // Dense request: partial shuffle of the full enumeration.
    auto all = enumerate_matchings(q1, q0).members();
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(gen)]);
    }
    all.resize(count);
    out = std::move(all);
  } else {
    std::set<Matching> seen;
    while (out.size() < count) {
      auto h = detail::random_matching(q1, q0, gen);
      if (seen.insert(h).second) out.push_back(std::move(h));
    }
  }
  return MatchingSet(q1, q0, std::move(out), MatchingSet::Mode::sampled, seed);
}

/// Grid functions delta_{j,k} for treated j and control k.
class PairwiseEstimates {
 public:
  PairwiseEstimates(std::size_t q1, std::size_t q0, QuantileGrid grid)
      : q1_(q1), q0_(q0), grid_(std::move(grid)), cells_(q1 * q0) {
    detail::require(q1 >= 1 && q0 >= 1, "PairwiseEstimates: need at least one treated and one control cluster");
  }

  void set(std::size_t j, std::size_t k, std::vector<double> values) {
    detail::require(j < q1_ && k < q0_, "PairwiseEstimates: pair index out of range");
    detail::require(values.size() == grid_.size(), "PairwiseEstimates: estimate length does not match grid");
    detail::require(detail::all_finite(values), "PairwiseEstimates: non-finite estimate");
    cells_[j * q0_ + k] = std::move(values);
  }

  bool has(std::size_t j, std::size_t k) const { return j < q1_ && k < q0_ && cells_[j * q0_ + k].has_value(); }

  const std::vector<double>& at(std::size_t j, std::size_t k) const {
    if (!has(j, k))
      throw ValidationError("PairwiseEstimates: missing estimate for pair (" + std::to_string(j) + ", " +
                            std::to_string(k) + ")");
    return *cells_[j * q0_ + k];
  }

  std::size_t q1() const { return q1_; }
  std::size_t q0() const { return q0_; }
  const QuantileGrid& grid() const { return grid_; }

 private:
  std::size_t q1_, q0_;
  QuantileGrid grid_;
  std::vector<std::optional<std::vector<double>>> cells_;
};

/// Stacks the pair estimates selected by h into a min(q1, q0) x L process.
inline EstimateProcess assemble_matched_process(const PairwiseEstimates& pairs, const Matching& h) {
  const std::size_t q = h.assignment.size();
  const std::size_t L = pairs.grid().size();
  RowMatrix values(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(L));
  for (std::size_t r = 0; r < q; ++r) {
    const auto& est = pairs.at(h.treated_at(r), h.control_at(r));
    for (std::size_t l = 0; l < L; ++l) values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(l)) = est[l];
  }
  return EstimateProcess(std::move(values), pairs.grid());
}

enum class Combiner { twice_mean, bonferroni, geometric_e };

inline std::string to_string(Combiner c) {
  switch (c) {
    case Combiner::twice_mean: return "twice_mean";
    case Combiner::bonferroni: return "bonferroni";
    case Combiner::geometric_e: return "geometric_e";
  }
  return "?";
}

inline Combiner parse_combiner(const std::string& s) {
  if (s == "twice_mean" || s == "twice-mean") return Combiner::twice_mean;
  if (s == "bonferroni") return Combiner::bonferroni;
  if (s == "geometric_e" || s == "geometric-e") return Combiner::geometric_e;
  throw ValidationError("unknown combiner '" + s + "' (expected twice-mean, bonferroni or geometric-e)");
}

/// Combined p-value. twice_mean is 2/H * sum p_h and is returned unclamped
/// (it may exceed 1); bonferroni and geometric_e are clamped to (0, 1].
/// Sums run in input order.
inline double combine_pvalues(std::span<const double> p, Combiner method) {
  detail::require(!p.empty(), "combine_pvalues: no p-values");
  for (double v : p) detail::require(v > 0.0 && v <= 1.0, "combine_pvalues: p-values must lie in (0,1]");
  const auto H = static_cast<double>(p.size());
  switch (method) {
    case Combiner::twice_mean: {
      detail::require(p.size() >= 2, "combine_pvalues: twice-mean rule needs at least two p-values");
      double sum = 0.0;
      for (double v : p) sum += v;
      return 2.0 * sum / H;
    }
    case Combiner::bonferroni:
      return std::min(1.0, H * *std::min_element(p.begin(), p.end()));
    case Combiner::geometric_e: {
      double log_sum = 0.0;
      for (double v : p) log_sum += std::log(v);
      return std::min(1.0, std::numbers::e * std::exp(log_sum / H));
    }
  }
  throw ValidationError("unknown combiner");
}

struct BetweenResult {
  Combiner combiner = Combiner::twice_mean;
  Direction direction = Direction::right;
  double alpha = 0.05;
  double combined_right = 1.0;  // raw combined statistic, right tail
  double combined_left = 1.0;   // raw combined statistic, left tail
  double p_value = 1.0;         // reported combined value, clamped to (0,1]
  bool reject = false;
  std::size_t matchings = 0;
  std::size_t group_size = 0;
  bool exact_group = false;
  std::vector<double> p_right;  // per matching
  std::vector<double> p_left;   // per matching (filled for left / two-sided)
};

/// Between-cluster CRK test. One sign group is drawn and shared by every
/// matching, so each p_h is a deterministic function of data and seed.
inline BetweenResult crk_test_between(const PairwiseEstimates& pairs, const MatchingSet& matchings,
                                      const NullFunction& null, double alpha, Direction direction,
                                      const GroupConfig& group, Combiner combiner = Combiner::twice_mean) {
  detail::require(alpha > 0.0 && alpha < 1.0, "crk_test_between: alpha must lie in (0,1)");
  detail::require(matchings.size() >= 2, "crk_test_between: at least two matchings are required");
  detail::require(matchings.q1() == pairs.q1() && matchings.q0() == pairs.q0(),
                  "crk_test_between: matching set does not match the pairwise estimates");
  const auto delta0 = null.on(pairs.grid());
  const auto G = make_sign_group(std::min(pairs.q1(), pairs.q0()), group);
  const PValueOptions popts{group.add_identity};

  BetweenResult res;
  res.combiner = combiner;
  res.direction = direction;
  res.alpha = alpha;
  res.matchings = matchings.size();
  res.group_size = G.size();
  res.exact_group = G.exact();
  const bool want_right = direction != Direction::left;
  const bool want_left = direction != Direction::right;
  for (const auto& h : matchings.members()) {
    const auto x = assemble_matched_process(pairs, h).centered(delta0);
    if (want_right) res.p_right.push_back(randomization_pvalue(x, G, popts));
    if (want_left) res.p_left.push_back(randomization_pvalue(-x, G, popts));
  }
  if (want_right) res.combined_right = combine_pvalues(res.p_right, combiner);
  if (want_left) res.combined_left = combine_pvalues(res.p_left, combiner);

  switch (direction) {
    case Direction::right:
      res.reject = res.combined_right <= alpha;
      res.p_value = std::min(1.0, res.combined_right);
      break;
    case Direction::left:
      res.reject = res.combined_left <= alpha;
      res.p_value = std::min(1.0, res.combined_left);
      break;
    case Direction::two_sided:
      res.reject = res.combined_right <= alpha || res.combined_left <= alpha;
      res.p_value = std::min(1.0, 2.0 * std::min(res.combined_right, res.combined_left));
      break;
  }
  return res;
}

/// Indices of treated and control clusters, from cluster-level treatment flags.
struct TreatmentSplit {
  std::vector<std::size_t> treated;
  std::vector<std::size_t> control;
};

inline TreatmentSplit split_by_treatment(const ClusterDataset& data) {
  TreatmentSplit s;
  for (std::size_t j = 0; j < data.q(); ++j) {
    const auto& c = data[j];
    detail::require(c.treated.has_value(), "cluster '" + c.id + "' has no treatment flags");
    const auto& d = *c.treated;
    detail::require(std::all_of(d.begin(), d.end(), [&](int v) { return v == d.front(); }),
                    "cluster '" + c.id + "': treatment must be constant within a cluster");
    (d.front() ? s.treated : s.control).push_back(j);
  }
  detail::require(!s.treated.empty() && !s.control.empty(), "need at least one treated and one control cluster");
  return s;
}

/// Pools each treated/control pair into one sample and applies the
/// estimator to it (e.g. the coefficient on the treatment column of a
/// quantile regression). When `only` is given, just the pairs its matchings
/// touch are estimated.
inline PairwiseEstimates estimate_pairs(const ClusterDataset& data, const EstimatorSpec& spec,
                                        const QuantileGrid& grid, const MatchingSet* only = nullptr) {
  const auto split = split_by_treatment(data);
  PairwiseEstimates pairs(split.treated.size(), split.control.size(), grid);
  std::vector<char> wanted(split.treated.size() * split.control.size(), only == nullptr);
  if (only) {
    for (const auto& h : only->members())
      for (std::size_t r = 0; r < h.assignment.size(); ++r)
        wanted[h.treated_at(r) * split.control.size() + h.control_at(r)] = 1;
  }
  for (std::size_t j = 0; j < split.treated.size(); ++j) {
    for (std::size_t k = 0; k < split.control.size(); ++k) {
      if (!wanted[j * split.control.size() + k]) continue;
      const auto& t = data[split.treated[j]];
      const auto& c = data[split.control[k]];
      const Cluster* members[] = {&t, &c};
      pairs.set(j, k, detail::cluster_estimate(pool_clusters(members), spec, grid));
    }
  }
  return pairs;
}

}  // namespace crk

#endif  // CRK_CRK_BETWEEN_HPP
