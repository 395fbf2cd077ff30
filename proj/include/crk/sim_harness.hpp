#ifndef CRK_SIM_HARNESS_HPP
#define CRK_SIM_HARNESS_HPP

// Monte Carlo size/power studies for the CRK tests on clustered data with
// latent neighborhoods:
//   Y = U + U Z (+ shift),  U = sqrt(rho) V_{j,k} + sqrt(1 - rho) W_{i,j,k},
//   Z = X^2 / 3,            X, V, W iid N(0, 1).
// Each replication draws its own RNG streams from (master_seed, index), so
// results do not depend on the number of worker threads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "crk/crk_between.hpp"
#include "crk/crk_within.hpp"
#include "crk/detail/parallel.hpp"
#include "crk/randomization.hpp"

namespace crk::sim {

enum class Model {
  qr_location_scale,   // design (1, X, Z); shift adds lambda * X (so beta_1 = lambda)
  qte_cluster_treatment,  // design (1, D, Z) with cluster-level D; shift adds lambda * D
  placebo_pairs  // two classrooms per school, one treated; design (1, d)
};

inline std::string to_string(Model m) {
  switch (m) {
    case Model::qr_location_scale: return "qr_location_scale";
    case Model::qte_cluster_treatment: return "qte_cluster_treatment";
    case Model::placebo_pairs: return "placebo_pairs";
  }
  return "?";
}

struct DgpConfig {
  std::size_t q = 10;                // clusters
  std::size_t K = 10;                // neighborhoods per cluster (classrooms = 2 for placebo_pairs)
  double rho = 0.5;                  // intra-neighborhood correlation
  std::size_t min_size = 5;          // neighborhood size ~ U{min_size..max_size}
  std::size_t max_size = 15;
  Model model = Model::qr_location_scale;
  double lambda_shift = 0.0;
  std::size_t treated_clusters = 0;  // qte_cluster_treatment: 0 means floor(q / 2)
};

/// Latent draw of one dataset, before neighborhood labels are dropped.
struct DgpDraw {
  struct ClusterDraw {
    std::vector<double> y, u, x, z;
    std::vector<int> d;
    std::vector<std::size_t> neighborhood;
  };
  std::vector<ClusterDraw> clusters;
};

namespace detail {

inline void check_config(const DgpConfig& cfg) {
  crk::detail::require(cfg.rho >= 0.0 && cfg.rho < 1.0, "DgpConfig: rho must lie in [0,1)");
  crk::detail::require(cfg.q >= 2, "DgpConfig: need at least two clusters");
  crk::detail::require(cfg.K >= 1, "DgpConfig: need at least one neighborhood");
  crk::detail::require(cfg.min_size >= 1 && cfg.max_size >= cfg.min_size, "DgpConfig: bad neighborhood size range");
  crk::detail::require(std::isfinite(cfg.lambda_shift), "DgpConfig: non-finite shift");
  if (cfg.model == Model::qte_cluster_treatment) {
    const auto q1 = cfg.treated_clusters ? cfg.treated_clusters : cfg.q / 2;
    crk::detail::require(q1 >= 1 && q1 < cfg.q, "DgpConfig: need treated and control clusters");
  }
}

/// 64-bit seed for stream `purpose` of replication `index`.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), purpose};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

enum Stream : std::uint32_t { kData = 0, kSigns = 1, kMatchings = 2, kUniform = 3 };

}  // namespace detail

inline DgpDraw draw_dgp(const DgpConfig& cfg, std::uint64_t seed) {
  detail::check_config(cfg);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> size_of(cfg.min_size, cfg.max_size);
  const double a = std::sqrt(cfg.rho), b = std::sqrt(1.0 - cfg.rho);

  std::vector<int> cluster_d(cfg.q, 0);
  if (cfg.model == Model::qte_cluster_treatment) {
    const auto q1 = cfg.treated_clusters ? cfg.treated_clusters : cfg.q / 2;
    std::vector<std::size_t> order(cfg.q);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), gen);
    for (std::size_t i = 0; i < q1; ++i) cluster_d[order[i]] = 1;
  }

  DgpDraw out;
  out.clusters.resize(cfg.q);
  for (std::size_t j = 0; j < cfg.q; ++j) {
    auto& c = out.clusters[j];
    const std::size_t hoods = cfg.model == Model::placebo_pairs ? 2 : cfg.K;
    const std::size_t treated_hood =
        cfg.model == Model::placebo_pairs ? std::uniform_int_distribution<std::size_t>(0, 1)(gen) : 0;
    const double school = cfg.model == Model::placebo_pairs ? normal(gen) : 0.0;
    for (std::size_t k = 0; k < hoods; ++k) {
      const std::size_t n = size_of(gen);
      const double v = normal(gen);
      for (std::size_t i = 0; i < n; ++i) {
        const double u = a * v + b * normal(gen);
        const double x = normal(gen);
        const double z = x * x / 3.0;
        int d = 0;
        double y = u + u * z;
        switch (cfg.model) {
          case Model::qr_location_scale:
            y += cfg.lambda_shift * x;
            break;
          case Model::qte_cluster_treatment:
            d = cluster_d[j];
            y += cfg.lambda_shift * d;
            break;
          case Model::placebo_pairs:
            // rough percentile-score scale; the school effect cancels within a school
            d = k == treated_hood ? 1 : 0;
            y = 50.0 + 10.0 * school + 25.0 * u + cfg.lambda_shift * d;
            break;
        }
        c.y.push_back(y);
        c.u.push_back(u);
        c.x.push_back(x);
        c.z.push_back(z);
        c.d.push_back(d);
        c.neighborhood.push_back(k);
      }
    }
  }
  return out;
}

/// Observable dataset: outcomes, design and treatment flags; neighborhood
/// labels are discarded.
inline ClusterDataset generate_cluster_dgp(const DgpConfig& cfg, std::uint64_t seed) {
  const auto draw = draw_dgp(cfg, seed);
  std::vector<Cluster> clusters;
  clusters.reserve(cfg.q);
  for (std::size_t j = 0; j < cfg.q; ++j) {
    const auto& c = draw.clusters[j];
    const auto n = static_cast<Eigen::Index>(c.y.size());
    const Eigen::Index p = cfg.model == Model::placebo_pairs ? 2 : 3;
    RowMatrix X(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      X(i, 0) = 1.0;
      switch (cfg.model) {
        case Model::qr_location_scale:
          X(i, 1) = c.x[ii];
          X(i, 2) = c.z[ii];
          break;
        case Model::qte_cluster_treatment:
          X(i, 1) = c.d[ii];
          X(i, 2) = c.z[ii];
          break;
        case Model::placebo_pairs:
          X(i, 1) = c.d[ii];
          break;
      }
    }
    std::optional<std::vector<int>> d;
    if (cfg.model != Model::qr_location_scale) d = c.d;
    clusters.push_back(Cluster{"c" + std::to_string(j + 1), Sample(c.y), DesignMatrix(std::move(X)), std::move(d)});
  }
  return ClusterDataset(std::move(clusters));
}

struct TestConfig {
  enum class Kind { within, between, cherrypick };
  Kind kind = Kind::within;
  Eigen::Index target_column = 1;
  QuantileGrid grid = QuantileGrid::deciles();
  double null_value = 0.0;
  double alpha = 0.05;
  Direction direction = Direction::right;
  std::optional<std::size_t> sign_draws = 1000;  // nullopt: exact group when q is small
  Combiner combiner = Combiner::twice_mean;
  std::size_t matchings = 50;  // |I| for the between test; 0 = all of H
  std::size_t pick_count = 3;  // cherry-picking: matchings searched over
};

inline std::string to_string(TestConfig::Kind k) {
  switch (k) {
    case TestConfig::Kind::within: return "within";
    case TestConfig::Kind::between: return "between";
    case TestConfig::Kind::cherrypick: return "cherrypick";
  }
  return "?";
}

struct StudyConfig {
  DgpConfig dgp;
  TestConfig test;
  std::size_t replications = 2000;
  std::uint64_t master_seed = 1;
  std::size_t threads = 0;  // 0: hardware concurrency (capped by CRK_THREADS)
};

struct McResult {
  std::size_t replications = 0;
  std::size_t rejections = 0;
  double rejection_rate = 0.0;
  double mc_stderr = 0.0;
  StudyConfig config;
  std::string label;  // e.g. the combiner when several share one run

  static McResult from_counts(std::size_t reps, std::size_t rejections, StudyConfig cfg, std::string label = {}) {
    McResult r;
    r.replications = reps;
    r.rejections = rejections;
    r.rejection_rate = static_cast<double>(rejections) / static_cast<double>(reps);
    r.mc_stderr = std::sqrt(r.rejection_rate * (1.0 - r.rejection_rate) / static_cast<double>(reps));
    r.config = std::move(cfg);
    r.label = std::move(label);
    return r;
  }
};

namespace detail {

inline GroupConfig group_for(const TestConfig& t, std::uint64_t seed) {
  GroupConfig g;
  g.draws = t.sign_draws;
  g.seed = seed;
  return g;
}

inline EstimatorSpec estimator_for(const DgpConfig& d, const TestConfig& t) {
  (void)d;
  return EstimatorSpec{EstimatorSpec::Kind::qr_coefficient, t.target_column};
}

inline MatchingSet matchings_for(std::size_t q1, std::size_t q0, std::size_t count, std::uint64_t seed) {
  const auto total = matching_count(q1, q0);
  if (count == 0 || count >= total) return enumerate_matchings(q1, q0);
  return sample_matchings(q1, q0, count, seed);
}

// One between-cluster replication; one decision per requested combiner.
inline std::vector<bool> between_replication(const StudyConfig& s, std::size_t rep,
                                             std::span<const Combiner> combiners) {
  const auto data = generate_cluster_dgp(s.dgp, stream_seed(s.master_seed, rep, kData));
  const auto split = split_by_treatment(data);
  const auto H = matchings_for(split.treated.size(), split.control.size(), s.test.matchings,
                               stream_seed(s.master_seed, rep, kMatchings));
  const auto pairs = estimate_pairs(data, estimator_for(s.dgp, s.test), s.test.grid, &H);
  const auto group = group_for(s.test, stream_seed(s.master_seed, rep, kSigns));
  const auto null = NullFunction::constant(s.test.null_value);
  const auto base = crk_test_between(pairs, H, null, s.test.alpha, s.test.direction, group, combiners.front());
  std::vector<bool> out{base.reject};
  for (std::size_t c = 1; c < combiners.size(); ++c) {
    bool reject = false;
    if (!base.p_right.empty()) reject = reject || combine_pvalues(base.p_right, combiners[c]) <= s.test.alpha;
    if (!base.p_left.empty()) reject = reject || combine_pvalues(base.p_left, combiners[c]) <= s.test.alpha;
    out.push_back(reject);
  }
  return out;
}

inline bool within_replication(const StudyConfig& s, std::size_t rep) {
  const auto data = generate_cluster_dgp(s.dgp, stream_seed(s.master_seed, rep, kData));
  const auto est = estimate_per_cluster(data, estimator_for(s.dgp, s.test), s.test.grid);
  const auto group = group_for(s.test, stream_seed(s.master_seed, rep, kSigns));
  return crk_test_process(est, NullFunction::constant(s.test.null_value), s.test.alpha, s.test.direction, group)
      .reject;
}

// Minimum single-matching p-value over pick_count randomly chosen matchings,
// compared with alpha without any multiplicity adjustment.
inline bool cherrypick_replication(const StudyConfig& s, std::size_t rep) {
  const auto data = generate_cluster_dgp(s.dgp, stream_seed(s.master_seed, rep, kData));
  const auto split = split_by_treatment(data);
  const std::size_t q1 = split.treated.size(), q0 = split.control.size();
  const auto mseed = stream_seed(s.master_seed, rep, kMatchings);
  std::vector<Matching> picks;
  if (s.test.pick_count == 1) {
    std::mt19937_64 gen(mseed);
    picks.push_back(crk::detail::random_matching(q1, q0, gen));
  } else {
    picks = matchings_for(q1, q0, s.test.pick_count, mseed).members();
  }
  const MatchingSet chosen(q1, q0, picks, MatchingSet::Mode::sampled, mseed);
  const auto pairs = estimate_pairs(data, estimator_for(s.dgp, s.test), s.test.grid, &chosen);
  const auto G = make_sign_group(std::min(q1, q0), group_for(s.test, stream_seed(s.master_seed, rep, kSigns)));
  const auto delta0 = NullFunction::constant(s.test.null_value).on(s.test.grid);
  double best = 1.0;
  for (const auto& h : chosen.members()) {
    const auto x = assemble_matched_process(pairs, h).centered(delta0);
    const auto r = crk_decision(x, G, s.test.alpha, s.test.direction);
    best = std::min(best, r.p_value);
  }
  return best <= s.test.alpha;
}

inline void check_study(const StudyConfig& s) {
  crk::detail::require(s.replications >= 100, "run_mc_study: need at least 100 replications");
  crk::detail::require(s.test.alpha > 0.0 && s.test.alpha < 1.0, "run_mc_study: alpha must lie in (0,1)");
  if (s.test.kind != TestConfig::Kind::within)
    crk::detail::require(s.dgp.model == Model::qte_cluster_treatment,
                         "run_mc_study: between-cluster studies need the qte_cluster_treatment model");
  if (s.test.kind == TestConfig::Kind::cherrypick)
    crk::detail::require(s.test.pick_count >= 1, "run_cherrypick_study: pick_count must be positive");
}

template <typename Rep>
std::vector<std::vector<bool>> run_replications(const StudyConfig& s, std::size_t outcomes, Rep&& rep_fn) {
  std::vector<std::vector<bool>> decisions(s.replications);
  crk::detail::parallel_for(s.replications, crk::detail::resolve_threads(s.threads), [&](std::size_t r) {
    try {
      decisions[r] = rep_fn(r);
    } catch (const ValidationError& e) {
      throw ValidationError("replication " + std::to_string(r) + " (data seed " +
                            std::to_string(stream_seed(s.master_seed, r, kData)) + "): " + e.what());
    } catch (const NumericalError& e) {
      throw NumericalError("replication " + std::to_string(r) + " (data seed " +
                           std::to_string(stream_seed(s.master_seed, r, kData)) + "): " + e.what());
    }
    if (decisions[r].size() != outcomes) throw NumericalError("internal: wrong outcome count");
  });
  return decisions;
}

inline std::size_t tally(const std::vector<std::vector<bool>>& d, std::size_t which) {
  std::size_t n = 0;
  for (const auto& row : d) n += row[which] ? 1 : 0;
  return n;
}

}  // namespace detail

/// Rejection frequency of the configured test over independent replications.
inline McResult run_mc_study(const StudyConfig& study) {
  detail::check_study(study);
  const auto decisions = detail::run_replications(study, 1, [&](std::size_t r) -> std::vector<bool> {
    switch (study.test.kind) {
      case TestConfig::Kind::within: return {detail::within_replication(study, r)};
      case TestConfig::Kind::between: {
        const Combiner c[] = {study.test.combiner};
        return detail::between_replication(study, r, c);
      }
      case TestConfig::Kind::cherrypick: return {detail::cherrypick_replication(study, r)};
    }
    return {false};
  });
  return McResult::from_counts(study.replications, detail::tally(decisions, 0), study);
}

/// Between-cluster study evaluating several combiners on the same data and
/// the same per-matching p-values.
inline std::vector<McResult> run_combiner_study(const StudyConfig& study, std::span<const Combiner> combiners) {
  crk::detail::require(!combiners.empty(), "run_combiner_study: no combiners");
  detail::check_study(study);
  crk::detail::require(study.test.kind == TestConfig::Kind::between, "run_combiner_study: needs a between study");
  const auto decisions = detail::run_replications(
      study, combiners.size(), [&](std::size_t r) { return detail::between_replication(study, r, combiners); });
  std::vector<McResult> out;
  for (std::size_t c = 0; c < combiners.size(); ++c) {
    auto cfg = study;
    cfg.test.combiner = combiners[c];
    out.push_back(McResult::from_counts(study.replications, detail::tally(decisions, c), cfg, to_string(combiners[c])));
  }
  return out;
}

/// Size of the "search over pairings" procedure: reject when the smallest
/// of pick_count single-matching p-values is <= alpha.
inline McResult run_cherrypick_study(StudyConfig study) {
  study.test.kind = TestConfig::Kind::cherrypick;
  return run_mc_study(study);
}

}  // namespace crk::sim

#endif  // CRK_SIM_HARNESS_HPP
