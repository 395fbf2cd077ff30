#ifndef CRK_CLI_HPP
#define CRK_CLI_HPP

// Command-line front end. Exit codes: 0 success, 2 invalid input, 3
// numerical failure.

#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crk/io.hpp"

namespace crk::cli {

using io::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(io::detail::trim(cur));
  return out;
}

inline double to_double(const std::string& s, const std::string& what) {
  try {
    return io::detail::parse_number(s, 0, what);
  } catch (const ValidationError&) {
    throw ValidationError("--" + what + ": '" + s + "' is not a number");
  }
}

inline std::size_t to_count(const std::string& s, const std::string& what) {
  const double v = to_double(s, what);
  if (v < 0 || v != std::floor(v)) throw ValidationError("--" + what + ": '" + s + "' is not a non-negative integer");
  return static_cast<std::size_t>(v);
}

/// "lo:hi:step" or a comma-separated list.
inline QuantileGrid parse_grid(const std::string& s) {
  if (s.find(':') != std::string::npos) {
    const auto parts = split(s, ':');
    if (parts.size() != 3) throw ValidationError("--grid: expected lo:hi:step, got '" + s + "'");
    return QuantileGrid::range(to_double(parts[0], "grid"), to_double(parts[1], "grid"), to_double(parts[2], "grid"));
  }
  std::vector<double> pts;
  for (const auto& p : split(s, ',')) pts.push_back(to_double(p, "grid"));
  return QuantileGrid(std::move(pts));
}

/// Single value broadcast over the grid, or a comma list with one value per point.
inline NullFunction parse_null(const std::string& s) {
  const auto parts = split(s, ',');
  if (parts.size() == 1) return NullFunction::constant(to_double(parts[0], "null"));
  std::vector<double> v;
  for (const auto& p : parts) v.push_back(to_double(p, "null"));
  return NullFunction::values(std::move(v));
}

/// "auto", "exact" or a number of sampled draws.
inline GroupConfig parse_draws(const std::string& s, std::uint64_t seed) {
  GroupConfig g;
  g.seed = seed;
  if (s == "auto") return g;
  if (s == "exact") {
    g.exact_max_q = kMaxExactClusters;
    return g;
  }
  const auto m = to_count(s, "draws");
  if (m < 1) throw ValidationError("--draws: need at least one draw");
  g.draws = m;
  return g;
}

struct MatchingSpec {
  bool all = true;
  std::size_t count = 0;
};

inline constexpr std::uint64_t kAutoEnumerateLimit = 10'000;

/// "all", "sample:N" or "auto" (all when |H| <= 10,000, else 50 sampled).
inline MatchingSpec parse_matchings(const std::string& s, std::size_t q1, std::size_t q0) {
  if (s == "all") return {};
  if (s == "auto") return matching_count(q1, q0) <= kAutoEnumerateLimit ? MatchingSpec{} : MatchingSpec{false, 50};
  if (s.rfind("sample:", 0) == 0) return {false, to_count(s.substr(7), "matchings")};
  throw ValidationError("--matchings: expected 'all' or 'sample:N', got '" + s + "'");
}

inline MatchingSet build_matchings(std::size_t q1, std::size_t q0, const MatchingSpec& spec, std::uint64_t seed) {
  if (spec.all) return enumerate_matchings(q1, q0);
  return sample_matchings(q1, q0, spec.count, seed);
}

inline EstimatorSpec parse_estimator(const std::string& s, Eigen::Index target) {
  if (s == "quantile") return {EstimatorSpec::Kind::unconditional_quantile, target};
  if (s == "qr") return {EstimatorSpec::Kind::qr_coefficient, target};
  if (s == "qte") return {EstimatorSpec::Kind::qte_within_pair, target};
  throw ValidationError("--estimator: expected quantile, qr or qte, got '" + s + "'");
}

/// --merge a,b --merge c,d
inline std::vector<std::vector<std::string>> parse_merge(const std::vector<std::string>& groups) {
  std::vector<std::vector<std::string>> plan;
  for (const auto& g : groups) plan.push_back(split(g, ','));
  return plan;
}

inline json group_json(const GroupConfig& g, const std::string& draws) {
  return json{{"draws", draws}, {"seed", g.seed}, {"exact_max_q", g.exact_max_q},
              {"default_draws", g.default_draws}};
}

inline void emit(const json& doc, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << doc.dump(2) << '\n';
    return;
  }
  std::ofstream f(out);
  if (!f) throw ValidationError("cannot write '" + out + "'");
  f << doc.dump(2) << '\n';
}

inline std::ofstream open_csv(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write '" + path + "'");
  f.precision(17);
  return f;
}

// Options shared by the data-driven subcommands.
struct Common {
  double alpha = 0.05;
  std::string grid = "0.1:0.9:0.1";
  std::string null = "0";
  std::string direction = "right";
  std::string draws = "auto";
  std::uint64_t seed = 1;
  std::string out;
  std::string csv;
  std::string input;
};

inline void add_common(CLI::App* app, Common& c) {
  app->add_option("--alpha", c.alpha, "significance level")->capture_default_str();
  app->add_option("--grid", c.grid, "quantile grid lo:hi:step or comma list")->capture_default_str();
  app->add_option("--null", c.null, "null value, or one value per grid point")->capture_default_str();
  app->add_option("--direction", c.direction, "right, left or two-sided")->capture_default_str();
  app->add_option("--draws", c.draws, "sign draws: auto, exact or a count")->capture_default_str();
  app->add_option("--seed", c.seed, "master seed")->capture_default_str();
  app->add_option("--out", c.out, "JSON report path (default stdout)");
  app->add_option("--csv", c.csv, "optional CSV of estimates / per-matching p-values");
  app->add_option("input", c.input, "input CSV")->required();
}

inline json common_json(const Common& c, const QuantileGrid& grid, const NullFunction& null) {
  return json{{"input", c.input},
              {"alpha", c.alpha},
              {"grid", io::grid_json(grid)},
              {"null", std::vector<double>(null.on(grid))},
              {"direction", to_string(parse_direction(c.direction))},
              {"master_seed", c.seed}};
}

inline void write_process_csv(const std::string& path, const EstimateProcess& x, const std::vector<std::string>& ids) {
  auto f = open_csv(path);
  f << "cluster";
  for (std::size_t l = 0; l < x.grid_size(); ++l) f << ",u=" << x.grid()[l];
  f << '\n';
  for (std::size_t j = 0; j < x.q(); ++j) {
    f << ids[j];
    for (std::size_t l = 0; l < x.grid_size(); ++l) f << ',' << x(j, l);
    f << '\n';
  }
}

inline void write_matching_csv(const std::string& path, const MatchingSet& H, const BetweenResult& r,
                               const std::vector<std::string>& treated, const std::vector<std::string>& control) {
  auto f = open_csv(path);
  f << "matching,pairs,p_right,p_left\n";
  for (std::size_t h = 0; h < H.size(); ++h) {
    f << h << ',';
    for (std::size_t i = 0; i < H[h].assignment.size(); ++i)
      f << (i ? ";" : "") << treated[H[h].treated_at(i)] << ':' << control[H[h].control_at(i)];
    f << ',' << (r.p_right.empty() ? std::string() : std::to_string(r.p_right[h])) << ','
      << (r.p_left.empty() ? std::string() : std::to_string(r.p_left[h])) << '\n';
  }
}

inline json matchings_json(const MatchingSet& H, const MatchingSpec& spec) {
  json j{{"mode", spec.all ? "all" : "sample"}, {"count", H.size()}, {"q1", H.q1()}, {"q0", H.q0()}};
  if (H.seed()) j["seed"] = *H.seed();
  return j;
}

// Between-cluster pipeline shared by test-between and qdid.
struct BetweenOpts {
  std::string matchings = "auto";
  std::string combiner = "twice-mean";
};

inline void add_between(CLI::App* app, BetweenOpts& b) {
  app->add_option("--matchings", b.matchings, "auto, all or sample:N")->capture_default_str();
  app->add_option("--combiner", b.combiner, "twice-mean, bonferroni or geometric-e")->capture_default_str();
}

inline int run_test_within(const Common& c, const std::string& estimator, Eigen::Index target,
                           const std::vector<std::string>& merges) {
  const auto grid = parse_grid(c.grid);
  const auto null = parse_null(c.null);
  const auto dir = parse_direction(c.direction);
  const auto spec = parse_estimator(estimator, target);
  const auto schema = spec.kind == EstimatorSpec::Kind::qr_coefficient ? io::Schema::within_qr : io::Schema::within_quantile;
  auto table = io::read_csv_file(c.input);
  WithinSession session(io::to_cluster_dataset(table, schema));
  const auto plan = parse_merge(merges);
  if (!plan.empty()) session.merge(plan);
  const auto group = parse_draws(c.draws, c.seed);
  const auto est = session.estimate(spec, grid);
  const auto result = crk_test_process(est, null, c.alpha, dir, group);

  std::vector<std::string> ids;
  for (const auto& cl : session.data().clusters()) ids.push_back(cl.id);
  if (!c.csv.empty()) write_process_csv(c.csv, est, ids);

  auto cfg = common_json(c, grid, null);
  cfg["estimator"] = estimator;
  cfg["target"] = target;
  cfg["merge"] = plan;
  cfg["group"] = group_json(group, c.draws);
  auto res = io::to_json(result);
  res["clusters"] = ids;
  emit(io::report("test-within", std::move(cfg), std::move(res)), c.out);
  return kExitOk;
}

inline int run_between(const std::string& command, const Common& c, const BetweenOpts& b,
                       const std::function<PairwiseEstimates(const MatchingSet&)>& estimate,
                       const std::vector<std::string>& treated, const std::vector<std::string>& control, json extra) {
  const auto grid = parse_grid(c.grid);
  const auto null = parse_null(c.null);
  const auto dir = parse_direction(c.direction);
  const auto comb = parse_combiner(b.combiner);
  const auto mspec = parse_matchings(b.matchings, treated.size(), control.size());
  const auto group = parse_draws(c.draws, c.seed);
  // distinct streams for matchings and signs
  const auto H = build_matchings(treated.size(), control.size(), mspec, sim::detail::stream_seed(c.seed, 0, 2));
  const auto pairs = estimate(H);
  const auto result = crk_test_between(pairs, H, null, c.alpha, dir, group, comb);
  if (!c.csv.empty()) write_matching_csv(c.csv, H, result, treated, control);

  auto cfg = common_json(c, grid, null);
  for (auto& [k, v] : extra.items()) cfg[k] = v;
  cfg["combiner"] = to_string(comb);
  cfg["matchings"] = matchings_json(H, mspec);
  cfg["group"] = group_json(group, c.draws);
  auto res = io::to_json(result);
  res["treated"] = treated;
  res["control"] = control;
  emit(io::report(command, std::move(cfg), std::move(res)), c.out);
  return kExitOk;
}

struct SimOpts {
  std::string preset = "fig1";
  std::string q = "10";
  std::size_t reps = 2000;
  std::size_t K = 10;
  double rho = 0.5;
  double delta = 0.0;
  std::size_t threads = 0;
  double alpha = 0.05;
  std::string grid;
  std::string direction = "right";
  std::string draws = "1000";
  std::string combiner = "all";
  std::size_t matchings = 50;
  std::size_t picks = 3;
  std::uint64_t seed = 1;
  std::string out;
  std::string csv;
};

inline void add_sim(CLI::App* app, SimOpts& s, bool cherry) {
  if (!cherry) app->add_option("--preset", s.preset, "fig1, fig2, fig3 or placebo")->capture_default_str();
  app->add_option("--q", s.q, "number of clusters (comma list for several rows)")->capture_default_str();
  app->add_option("--reps", s.reps, "Monte Carlo replications")->capture_default_str();
  app->add_option("--K", s.K, "neighborhoods per cluster")->capture_default_str();
  app->add_option("--rho", s.rho, "intra-neighborhood correlation")->capture_default_str();
  app->add_option("--delta", s.delta, "shift away from the null")->capture_default_str();
  app->add_option("--threads", s.threads, "worker threads (0 = all; capped by CRK_THREADS)")->capture_default_str();
  app->add_option("--alpha", s.alpha, "significance level")->capture_default_str();
  app->add_option("--grid", s.grid, "quantile grid (default 0.1:0.9:0.1)");
  app->add_option("--direction", s.direction, "right, left or two-sided")->capture_default_str();
  app->add_option("--draws", s.draws, "sign draws: a count, or exact")->capture_default_str();
  app->add_option("--seed", s.seed, "master seed")->capture_default_str();
  app->add_option("--out", s.out, "JSON report path (default stdout)");
  app->add_option("--csv", s.csv, "plot-ready CSV, one row per study");
  if (cherry) {
    app->add_option("--picks", s.picks, "pairings searched over (1 = a single pre-specified pairing)")
        ->capture_default_str();
  } else {
    app->add_option("--combiner", s.combiner, "fig3: twice-mean, bonferroni, geometric-e or all")->capture_default_str();
    app->add_option("--matchings", s.matchings, "fig3: sampled matchings |I| (0 = all)")->capture_default_str();
  }
}

inline sim::StudyConfig study_from(const SimOpts& s, const std::string& preset, std::size_t q) {
  sim::StudyConfig st;
  st.replications = s.reps;
  st.master_seed = s.seed;
  st.threads = s.threads;
  st.dgp.q = q;
  st.dgp.K = s.K;
  st.dgp.rho = s.rho;
  st.dgp.lambda_shift = s.delta;
  st.test.alpha = s.alpha;
  st.test.direction = parse_direction(s.direction);
  st.test.grid = s.grid.empty() ? QuantileGrid::deciles() : parse_grid(s.grid);
  if (s.draws == "exact") {
    st.test.sign_draws.reset();
  } else {
    const auto m = to_count(s.draws, "draws");
    if (m < 1) throw ValidationError("--draws: need at least one draw");
    st.test.sign_draws = m;
  }
  st.test.matchings = s.matchings;
  st.test.pick_count = s.picks;
  if (preset == "fig1") {
    // H0: coefficient on X is zero; --delta moves it away
    st.dgp.model = sim::Model::qr_location_scale;
    st.test.target_column = 1;
  } else if (preset == "fig2") {
    // false H0: coefficient on Z is zero
    st.dgp.model = sim::Model::qr_location_scale;
    st.test.target_column = 2;
  } else if (preset == "fig3" || preset == "cherrypick") {
    st.dgp.model = sim::Model::qte_cluster_treatment;
    st.test.target_column = 1;
    st.test.kind = preset == "fig3" ? sim::TestConfig::Kind::between : sim::TestConfig::Kind::cherrypick;
  } else if (preset == "placebo") {
    st.dgp.model = sim::Model::placebo_pairs;
    st.test.target_column = 1;
  } else {
    throw ValidationError("--preset: expected fig1, fig2, fig3 or placebo, got '" + preset + "'");
  }
  return st;
}

inline int run_simulate(const SimOpts& s, const std::string& preset) {
  std::vector<sim::McResult> rows;
  std::vector<Combiner> combiners;
  if (preset == "fig3") {
    if (s.combiner == "all")
      combiners = {Combiner::twice_mean, Combiner::geometric_e, Combiner::bonferroni};
    else
      combiners = {parse_combiner(s.combiner)};
  }
  for (const auto& qs : split(s.q, ',')) {
    const auto st = study_from(s, preset, to_count(qs, "q"));
    if (preset == "fig3") {
      for (auto& r : sim::run_combiner_study(st, combiners)) rows.push_back(std::move(r));
    } else {
      auto r = sim::run_mc_study(st);
      r.label = preset;
      rows.push_back(std::move(r));
    }
  }
  json results = json::array();
  for (const auto& r : rows) results.push_back(io::to_json(r));
  json cfg{{"preset", preset}, {"threads", s.threads}};
  if (!s.csv.empty()) {
    auto f = open_csv(s.csv);
    f << io::kMcCsvHeader << '\n';
    for (const auto& r : rows) f << io::mc_csv_row(r) << '\n';
  }
  emit(io::report(preset == "cherrypick" ? "cherrypick" : "simulate", std::move(cfg), std::move(results)), s.out);
  return kExitOk;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv) {
  using namespace detail;
  CLI::App app{"Cluster-randomized Kolmogorov-Smirnov tests"};
  app.require_subcommand(1);

  Common within_c, between_c, qdid_c;
  std::string estimator = "quantile";
  Eigen::Index target = 1;
  std::vector<std::string> merges;
  auto* tw = app.add_subcommand("test-within", "test a parameter identified within clusters");
  add_common(tw, within_c);
  tw->add_option("--estimator", estimator, "quantile, qr or qte")->capture_default_str();
  tw->add_option("--target", target, "qr: design column of the tested coefficient (0 = intercept)")
      ->capture_default_str();
  tw->add_option("--merge", merges, "comma-separated cluster ids to merge before estimation (repeatable)");

  BetweenOpts between_b, qdid_b;
  Eigen::Index between_target = 1;
  auto* tb = app.add_subcommand("test-between", "test a treatment effect identified between clusters");
  add_common(tb, between_c);
  add_between(tb, between_b);
  tb->add_option("--target", between_target, "design column of the tested coefficient (1 = treatment)")
      ->capture_default_str();

  auto* qd = app.add_subcommand("qdid", "between-cluster test of quantile difference-in-differences effects");
  add_common(qd, qdid_c);
  add_between(qd, qdid_b);

  SimOpts sim_o, cherry_o;
  auto* sm = app.add_subcommand("simulate", "Monte Carlo size and power study");
  add_sim(sm, sim_o, false);
  auto* cp = app.add_subcommand("cherrypick", "size of picking the most favorable of several pairings");
  cherry_o.q = "12";
  add_sim(cp, cherry_o, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*tw) return run_test_within(within_c, estimator, target, merges);
    if (*tb) {
      const auto grid = parse_grid(between_c.grid);
      const auto data = io::to_cluster_dataset(io::read_csv_file(between_c.input), io::Schema::between_pairs);
      const auto split = split_by_treatment(data);
      std::vector<std::string> t, k;
      for (auto j : split.treated) t.push_back(data[j].id);
      for (auto j : split.control) k.push_back(data[j].id);
      const EstimatorSpec spec{EstimatorSpec::Kind::qr_coefficient, between_target};
      return run_between(
          "test-between", between_c, between_b,
          [&](const MatchingSet& H) { return estimate_pairs(data, spec, grid, &H); }, t, k,
          json{{"estimator", "qr"}, {"target", between_target}});
    }
    if (*qd) {
      const auto grid = parse_grid(qdid_c.grid);
      const auto panels = io::to_panels(io::read_csv_file(qdid_c.input));
      std::vector<PanelSample> treated, control;
      std::vector<std::string> t, k;
      for (const auto& p : panels) {
        (p.treated ? treated : control).push_back(p);
        (p.treated ? t : k).push_back(p.id);
      }
      if (treated.empty() || control.empty())
        throw ValidationError("qdid: need at least one treated and one control cluster");
      return run_between(
          "qdid", qdid_c, qdid_b,
          [&](const MatchingSet& H) { return qdid_pairwise(treated, control, grid, &H); }, t, k,
          json{{"estimator", "qdid"}});
    }
    if (*sm) return run_simulate(sim_o, sim_o.preset);
    if (*cp) return run_simulate(cherry_o, "cherrypick");
  } catch (const ValidationError& e) {
    std::cerr << "crk: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "crk: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitValidation;
}

}  // namespace crk::cli

#endif  // CRK_CLI_HPP
