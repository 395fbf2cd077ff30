#ifndef CRK_RANDOMIZATION_HPP
#define CRK_RANDOMIZATION_HPP

// Sign-flip randomization machinery: the group {-1,+1}^q (full or sampled),
// the sup-of-cluster-means statistic, critical values, p-values and the
// CRK test decision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crk/quantile_core.hpp"

namespace crk {

enum class Direction { right, left, two_sided };

/// How the left-sided test is carried out: by applying the right-sided rule
/// to -X (default) or by comparing T(X) with the lower alpha order statistic.
enum class LeftRule { negate, lower_tail };

inline std::string to_string(Direction d) {
  switch (d) {
    case Direction::right: return "right";
    case Direction::left: return "left";
    case Direction::two_sided: return "two_sided";
  }
  return "?";
}

inline Direction parse_direction(const std::string& s) {
  if (s == "right") return Direction::right;
  if (s == "left") return Direction::left;
  if (s == "two_sided" || s == "two-sided" || s == "both") return Direction::two_sided;
  throw ValidationError("unknown direction '" + s + "' (expected right, left or two-sided)");
}

/// q x L matrix of per-cluster estimates on a quantile grid.
class EstimateProcess {
 public:
  EstimateProcess(RowMatrix values, QuantileGrid grid) : values_(std::move(values)), grid_(std::move(grid)) {
    detail::require(values_.rows() >= 1, "EstimateProcess: need at least one cluster");
    detail::require(static_cast<std::size_t>(values_.cols()) == grid_.size(),
                    "EstimateProcess: column count does not match grid size");
    detail::require(values_.allFinite(), "EstimateProcess: non-finite estimate");
  }

  std::size_t q() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t grid_size() const { return grid_.size(); }
  const QuantileGrid& grid() const { return grid_; }
  const RowMatrix& values() const { return values_; }
  double operator()(std::size_t j, std::size_t l) const {
    return values_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l));
  }

  EstimateProcess operator-() const { return EstimateProcess(-values_, grid_); }

  /// Subtract a null function (length L) from every row.
  EstimateProcess centered(std::span<const double> null) const {
    detail::require(null.size() == grid_.size(), "EstimateProcess: null length does not match grid");
    RowMatrix out = values_;
    for (Eigen::Index j = 0; j < out.rows(); ++j)
      for (Eigen::Index l = 0; l < out.cols(); ++l) out(j, l) -= null[static_cast<std::size_t>(l)];
    return EstimateProcess(std::move(out), grid_);
  }

  EstimateProcess scaled(double c) const { return EstimateProcess(c * values_, grid_); }

 private:
  RowMatrix values_;
  QuantileGrid grid_;
};

using SignVector = std::vector<std::int8_t>;

/// A collection of sign vectors of length q, stored flat (member-major).
class SignGroup {
 public:
  enum class Mode { exact, sampled };

  SignGroup(std::size_t q, std::vector<std::int8_t> signs, Mode mode, std::optional<std::uint64_t> seed = {})
      : q_(q), signs_(std::move(signs)), mode_(mode), seed_(seed) {
    detail::require(q_ >= 1, "SignGroup: q must be positive");
    detail::require(!signs_.empty() && signs_.size() % q_ == 0, "SignGroup: malformed member storage");
    for (auto s : signs_) detail::require(s == 1 || s == -1, "SignGroup: entries must be +1 or -1");
  }

  std::size_t q() const { return q_; }
  std::size_t size() const { return signs_.size() / q_; }
  Mode mode() const { return mode_; }
  bool exact() const { return mode_ == Mode::exact; }
  std::optional<std::uint64_t> seed() const { return seed_; }
  std::span<const std::int8_t> member(std::size_t i) const { return {signs_.data() + i * q_, q_}; }

 private:
  std::size_t q_;
  std::vector<std::int8_t> signs_;
  Mode mode_;
  std::optional<std::uint64_t> seed_;
};

inline constexpr std::size_t kMaxExactClusters = 20;

/// All 2^q sign vectors. Member b flips cluster j iff bit j of b is set, so
/// the identity comes first.
inline SignGroup enumerate_sign_group(std::size_t q) {
  if (q < 1 || q > kMaxExactClusters)
    throw ValidationError("enumerate_sign_group: q = " + std::to_string(q) +
                          " outside [1, 20]; use sampled sign draws instead");
  const std::size_t count = std::size_t{1} << q;
  std::vector<std::int8_t> signs(count * q);
  for (std::size_t b = 0; b < count; ++b)
    for (std::size_t j = 0; j < q; ++j) signs[b * q + j] = ((b >> j) & 1U) ? -1 : 1;
  return SignGroup(q, std::move(signs), SignGroup::Mode::exact);
}

/// m i.i.d. uniform draws from {-1,+1}^q (with replacement).
inline SignGroup sample_sign_group(std::size_t q, std::size_t m, std::uint64_t seed) {
  detail::require(q >= 1, "sample_sign_group: q must be positive");
  detail::require(m >= 1, "sample_sign_group: need at least one draw");
  std::mt19937_64 gen(seed);
  std::vector<std::int8_t> signs(m * q);
  for (std::size_t i = 0; i < m; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t j = 0; j < q; ++j) {
      if (j % 64 == 0) bits = gen();
      signs[i * q + j] = (bits & 1U) ? -1 : 1;
      bits >>= 1;
    }
  }
  return SignGroup(q, std::move(signs), SignGroup::Mode::sampled, seed);
}

/// Settings for building the sign group of a test.
struct GroupConfig {
  std::optional<std::size_t> draws;  // set: always sample this many draws
  std::size_t exact_max_q = 14;      // auto mode: enumerate when q <= this
  std::size_t default_draws = 9999;  // auto mode: draws when q > exact_max_q
  std::uint64_t seed = 1;
  bool add_identity = false;         // sampled p-value as (1 + count) / (m + 1)
  LeftRule left_rule = LeftRule::negate;
};

inline SignGroup make_sign_group(std::size_t q, const GroupConfig& cfg) {
  if (!cfg.draws && q <= std::min(cfg.exact_max_q, kMaxExactClusters)) return enumerate_sign_group(q);
  return sample_sign_group(q, cfg.draws.value_or(cfg.default_draws), cfg.seed);
}

namespace detail {

// T(gX) for one sign vector. The identity's value is bit-identical to
// ks_statistic(X) because the summation order is the same.
inline double signed_statistic(const RowMatrix& x, std::span<const std::int8_t> g, std::vector<double>& acc) {
  const auto q = x.rows();
  const auto L = x.cols();
  acc.assign(static_cast<std::size_t>(L), 0.0);
  for (Eigen::Index j = 0; j < q; ++j) {
    const double s = g[static_cast<std::size_t>(j)];
    const double* row = x.data() + j * L;
    for (Eigen::Index l = 0; l < L; ++l) acc[static_cast<std::size_t>(l)] += s * row[l];
  }
  return *std::max_element(acc.begin(), acc.end()) / static_cast<double>(q);
}

inline void check_match(const EstimateProcess& X, const SignGroup& G) {
  require(X.q() == G.q(), "sign group length " + std::to_string(G.q()) + " does not match process with q = " +
                              std::to_string(X.q()));
}

// T(gX) for every member, in member order.
inline std::vector<double> statistics_over(const EstimateProcess& X, const SignGroup& G) {
  check_match(X, G);
  std::vector<double> out(G.size());
  std::vector<double> acc;
  for (std::size_t i = 0; i < G.size(); ++i) out[i] = signed_statistic(X.values(), G.member(i), acc);
  return out;
}

}  // namespace detail

/// Supremum over the grid of the cross-cluster average.
inline double ks_statistic(const EstimateProcess& X) {
  const SignVector identity(X.q(), 1);
  std::vector<double> acc;
  return detail::signed_statistic(X.values(), identity, acc);
}

inline EstimateProcess apply_signs(const EstimateProcess& X, std::span<const std::int8_t> g) {
  detail::require(g.size() == X.q(), "apply_signs: sign vector length does not match q");
  RowMatrix out = X.values();
  for (Eigen::Index j = 0; j < out.rows(); ++j) {
    const auto s = g[static_cast<std::size_t>(j)];
    detail::require(s == 1 || s == -1, "apply_signs: entries must be +1 or -1");
    out.row(j) *= static_cast<double>(s);
  }
  return EstimateProcess(std::move(out), X.grid());
}

/// Sorted {T(gX) : g in G}, duplicates kept.
inline std::vector<double> randomization_distribution(const EstimateProcess& X, const SignGroup& G) {
  auto dist = detail::statistics_over(X, G);
  std::sort(dist.begin(), dist.end());
  return dist;
}

/// The ceil((1 - alpha) N)-th smallest value of a sorted distribution.
inline double critical_value(std::span<const double> dist, double alpha) {
  detail::require(!dist.empty(), "critical_value: empty distribution");
  detail::require(alpha > 0.0 && alpha < 1.0, "critical_value: alpha must lie in (0,1)");
  const std::size_t N = dist.size();
  const std::size_t k = std::clamp<std::size_t>(N - detail::floor_count(alpha * static_cast<double>(N)), 1, N);
  return dist[k - 1];
}

struct PValueOptions {
  bool add_identity = false;
};

/// Share of group members with T(gX) >= T(X). Sampled groups use the plain
/// average unless add_identity asks for (1 + count) / (m + 1).
inline double randomization_pvalue(const EstimateProcess& X, const SignGroup& G, PValueOptions opts = {}) {
  const auto stats = detail::statistics_over(X, G);
  const double t = ks_statistic(X);
  const auto count = static_cast<std::size_t>(std::count_if(stats.begin(), stats.end(), [t](double s) { return s >= t; }));
  if (opts.add_identity && !G.exact())
    return static_cast<double>(count + 1) / static_cast<double>(G.size() + 1);
  return static_cast<double>(count) / static_cast<double>(G.size());
}

struct TestResult {
  double statistic = 0.0;       // T(X); T(-X) for the left test
  double critical_value = 0.0;  // of the reported tail
  double p_value = 1.0;
  double alpha = 0.05;
  Direction direction = Direction::right;
  bool reject = false;
  std::size_t group_size = 0;
  bool exact_group = false;
  double p_right = 1.0;
  double p_left = 1.0;
};

struct DecisionOptions {
  LeftRule left_rule = LeftRule::negate;
  bool add_identity = false;
};

namespace detail {

struct TailOutcome {
  double statistic;
  double critical;
  double p;
  bool reject;
};

inline TailOutcome right_tail(const EstimateProcess& X, const SignGroup& G, double alpha, bool add_identity) {
  auto dist = statistics_over(X, G);
  const double t = ks_statistic(X);
  const auto count = static_cast<std::size_t>(std::count_if(dist.begin(), dist.end(), [t](double s) { return s >= t; }));
  std::sort(dist.begin(), dist.end());
  const double cv = critical_value(dist, alpha);
  double p = static_cast<double>(count) / static_cast<double>(dist.size());
  bool reject = t > cv;
  if (add_identity && !G.exact()) {
    p = static_cast<double>(count + 1) / static_cast<double>(dist.size() + 1);
    reject = p <= alpha;
  }
  return {t, cv, p, reject};
}

// Lower-tail form: reject when T(X) < the ceil(alpha N)-th smallest value.
inline TailOutcome lower_tail(const EstimateProcess& X, const SignGroup& G, double alpha) {
  auto dist = statistics_over(X, G);
  const double t = ks_statistic(X);
  const auto count = static_cast<std::size_t>(std::count_if(dist.begin(), dist.end(), [t](double s) { return s <= t; }));
  std::sort(dist.begin(), dist.end());
  const std::size_t N = dist.size();
  const std::size_t k = std::clamp<std::size_t>(ceil_count(alpha * static_cast<double>(N)), 1, N);
  const double cv = dist[k - 1];
  return {t, cv, static_cast<double>(count) / static_cast<double>(N), t < cv};
}

inline TailOutcome left_tail(const EstimateProcess& X, const SignGroup& G, double alpha, const DecisionOptions& opts) {
  if (opts.left_rule == LeftRule::lower_tail) return lower_tail(X, G, alpha);
  return right_tail(-X, G, alpha, opts.add_identity);
}

}  // namespace detail

/// The CRK test decision at level alpha. The two-sided test rejects when
/// either one-sided test rejects at alpha (overall level 2 alpha) and reports
/// p = min(1, 2 min(p_right, p_left)).
inline TestResult crk_decision(const EstimateProcess& X, const SignGroup& G, double alpha, Direction direction,
                               DecisionOptions opts = {}) {
  detail::require(alpha > 0.0 && alpha < 1.0, "crk_decision: alpha must lie in (0,1)");
  detail::check_match(X, G);
  TestResult res;
  res.alpha = alpha;
  res.direction = direction;
  res.group_size = G.size();
  res.exact_group = G.exact();

  switch (direction) {
    case Direction::right: {
      const auto r = detail::right_tail(X, G, alpha, opts.add_identity);
      res.statistic = r.statistic;
      res.critical_value = r.critical;
      res.p_value = res.p_right = r.p;
      res.reject = r.reject;
      break;
    }
    case Direction::left: {
      const auto l = detail::left_tail(X, G, alpha, opts);
      res.statistic = l.statistic;
      res.critical_value = l.critical;
      res.p_value = res.p_left = l.p;
      res.reject = l.reject;
      break;
    }
    case Direction::two_sided: {
      const auto r = detail::right_tail(X, G, alpha, opts.add_identity);
      const auto l = detail::left_tail(X, G, alpha, opts);
      res.statistic = r.statistic;
      res.critical_value = r.critical;
      res.p_right = r.p;
      res.p_left = l.p;
      res.p_value = std::min(1.0, 2.0 * std::min(r.p, l.p));
      res.reject = r.reject || l.reject;
      break;
    }
  }
  return res;
}

/// Boundary weight a(X) of the randomized exact test: the probability of
/// rejecting when T(X) equals the critical value. Requires the full group.
/// Values outside [0,1] are clamped and reported on std::clog.
inline double randomized_test_weight(const EstimateProcess& X, const SignGroup& G, double alpha) {
  detail::require(G.exact(), "randomized_test_weight: requires the full sign group");
  detail::require(alpha > 0.0 && alpha < 1.0, "randomized_test_weight: alpha must lie in (0,1)");
  auto dist = randomization_distribution(X, G);
  const double cv = critical_value(dist, alpha);
  const auto above = static_cast<double>(std::count_if(dist.begin(), dist.end(), [cv](double s) { return s > cv; }));
  const auto at = static_cast<double>(std::count(dist.begin(), dist.end(), cv));
  const double a = (detail::snap_product(static_cast<double>(G.size()) * alpha) - above) / at;
  if (a < 0.0 || a > 1.0) {
    std::clog << "crk: randomized test weight " << a << " clamped to [0,1]\n";
    return std::clamp(a, 0.0, 1.0);
  }
  return a;
}

/// Randomized exact test: reject if T(X) exceeds the critical value, or
/// equals it and v <= a(X), with v an independent uniform draw.
inline bool randomized_decision(const EstimateProcess& X, const SignGroup& G, double alpha, double v) {
  auto dist = randomization_distribution(X, G);
  const double cv = critical_value(dist, alpha);
  const double t = ks_statistic(X);
  if (t > cv) return true;
  if (t < cv) return false;
  return v <= randomized_test_weight(X, G, alpha);
}

}  // namespace crk

#endif  // CRK_RANDOMIZATION_HPP
