#include <catch_amalgamated.hpp>

#include <numbers>
#include <set>

#include "crk/crk_between.hpp"

using namespace crk;
using Catch::Approx;

namespace {

// Fills every (j, k) with a constant function equal to 10 j + k.
PairwiseEstimates labelled_pairs(std::size_t q1, std::size_t q0, const QuantileGrid& grid) {
  PairwiseEstimates p(q1, q0, grid);
  for (std::size_t j = 0; j < q1; ++j)
    for (std::size_t k = 0; k < q0; ++k) p.set(j, k, std::vector<double>(grid.size(), 10.0 * j + k));
  return p;
}

bool uses_each_index_once(const Matching& h, std::size_t q1, std::size_t q0) {
  std::set<std::size_t> t, c;
  for (std::size_t r = 0; r < h.assignment.size(); ++r) {
    if (h.treated_at(r) >= q1 || h.control_at(r) >= q0) return false;
    t.insert(h.treated_at(r));
    c.insert(h.control_at(r));
  }
  return t.size() == h.assignment.size() && c.size() == h.assignment.size();
}

}  // namespace

TEST_CASE("matching enumeration counts") {
  CHECK(enumerate_matchings(2, 3).size() == 6);
  CHECK(enumerate_matchings(1, 1).size() == 1);
  const auto flipped = enumerate_matchings(3, 2);
  CHECK(flipped.size() == 6);
  for (const auto& h : flipped.members()) CHECK(h.permute_treated);
  CHECK(enumerate_matchings(6, 6).size() == 720);
  CHECK(matching_count(6, 7) == 5040);
  CHECK_THROWS_AS(enumerate_matchings(10, 12), ValidationError);

  // every ordered injection appears once
  const auto all = enumerate_matchings(3, 4).members();
  CHECK(std::set<Matching>(all.begin(), all.end()).size() == 24);
  for (const auto& h : all) CHECK(uses_each_index_once(h, 3, 4));
}

TEST_CASE("matching sampling") {
  const auto a = sample_matchings(6, 6, 50, 9);
  const auto b = sample_matchings(6, 6, 50, 9);
  CHECK(a.size() == 50);
  CHECK(a.members() == b.members());
  CHECK(std::set<Matching>(a.members().begin(), a.members().end()).size() == 50);
  for (const auto& h : a.members()) CHECK(uses_each_index_once(h, 6, 6));

  const auto full = sample_matchings(2, 3, 6, 1);
  CHECK(std::set<Matching>(full.members().begin(), full.members().end()).size() == 6);
  CHECK_THROWS_AS(sample_matchings(2, 3, 7, 1), ValidationError);
  CHECK_THROWS_AS(sample_matchings(2, 3, 1, 1), ValidationError);

  // sparse regime: 10 of 12!/2! matchings
  const auto sparse = sample_matchings(10, 12, 10, 4);
  CHECK(std::set<Matching>(sparse.members().begin(), sparse.members().end()).size() == 10);
  for (const auto& h : sparse.members()) CHECK(uses_each_index_once(h, 10, 12));
}

TEST_CASE("sampled matchings are uniform over H") {
  // 6 matchings for (2, 3); draw 2 at a time many times, each should appear 1/3 of the time
  std::vector<int> hits(6, 0);
  const auto all = enumerate_matchings(2, 3).members();
  const int trials = 6000;
  for (int s = 0; s < trials; ++s) {
    const auto drawn = sample_matchings(2, 3, 2, static_cast<std::uint64_t>(s));
    for (const auto& h : drawn.members()) {
      const auto it = std::find(all.begin(), all.end(), h);
      REQUIRE(it != all.end());
      ++hits[static_cast<std::size_t>(it - all.begin())];
    }
  }
  for (int c : hits) CHECK(std::abs(c / static_cast<double>(trials) - 1.0 / 3.0) < 0.03);
}

TEST_CASE("assembled processes follow the matching") {
  const QuantileGrid g({0.5});
  const auto pairs = labelled_pairs(2, 2, g);
  const auto id = assemble_matched_process(pairs, Matching{{0, 1}, false});
  CHECK(id(0, 0) == 0);
  CHECK(id(1, 0) == 11);
  const auto sw = assemble_matched_process(pairs, Matching{{1, 0}, false});
  CHECK(sw(0, 0) == 1);
  CHECK(sw(1, 0) == 10);

  const auto tall = labelled_pairs(3, 2, g);
  const auto fl = assemble_matched_process(tall, Matching{{2, 0}, true});
  CHECK(fl.q() == 2);
  CHECK(fl(0, 0) == 20);  // treated 2 with control 0
  CHECK(fl(1, 0) == 1);   // treated 0 with control 1

  PairwiseEstimates partial(2, 2, g);
  partial.set(0, 0, {1.0});
  CHECK_THROWS_AS(assemble_matched_process(partial, Matching{{0, 1}, false}), ValidationError);
}

TEST_CASE("p-value combiners") {
  const std::vector<double> p{0.1, 0.3};
  CHECK(combine_pvalues(p, Combiner::twice_mean) == Approx(0.4));
  CHECK(combine_pvalues(p, Combiner::bonferroni) == Approx(0.2));
  CHECK(combine_pvalues(p, Combiner::geometric_e) == Approx(std::numbers::e * std::sqrt(0.03)));
  CHECK(combine_pvalues(p, Combiner::geometric_e) == Approx(0.470820).margin(1e-6));
  CHECK(combine_pvalues(std::vector<double>{0.9, 1.0}, Combiner::twice_mean) == Approx(1.9));
  CHECK(combine_pvalues(std::vector<double>{0.9, 1.0}, Combiner::geometric_e) == 1.0);
  CHECK_THROWS_AS(combine_pvalues(std::vector<double>{}, Combiner::bonferroni), ValidationError);
  CHECK_THROWS_AS(combine_pvalues(std::vector<double>{0.2}, Combiner::twice_mean), ValidationError);
  CHECK_THROWS_AS(combine_pvalues(std::vector<double>{0.0, 0.2}, Combiner::twice_mean), ValidationError);
  CHECK(parse_combiner("twice-mean") == Combiner::twice_mean);
  CHECK_THROWS_AS(parse_combiner("fisher"), ValidationError);
}

TEST_CASE("between test with estimates at the null") {
  const auto g = QuantileGrid::deciles();
  PairwiseEstimates pairs(3, 3, g);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 3; ++k) pairs.set(j, k, std::vector<double>(9, 0.5));
  const auto r = crk_test_between(pairs, enumerate_matchings(3, 3), NullFunction::constant(0.5), 0.05,
                                  Direction::right, {});
  CHECK(r.combined_right == 2.0);
  CHECK(r.p_value == 1.0);
  CHECK_FALSE(r.reject);
  for (double p : r.p_right) CHECK(p == 1.0);

  const MatchingSet single(3, 3, {Matching{{0, 1, 2}, false}}, MatchingSet::Mode::sampled);
  CHECK_THROWS_AS(crk_test_between(pairs, single, NullFunction::constant(0.5), 0.05, Direction::right, {}),
                  ValidationError);
}

TEST_CASE("between test p-values equal per-matching within tests") {
  std::mt19937_64 gen(6);
  std::normal_distribution<double> z;
  const QuantileGrid g({0.25, 0.5, 0.75});
  PairwiseEstimates pairs(4, 5, g);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t k = 0; k < 5; ++k) pairs.set(j, k, {z(gen) + 0.3, z(gen) + 0.3, z(gen) + 0.3});
  const auto H = sample_matchings(4, 5, 12, 3);
  const auto r = crk_test_between(pairs, H, NullFunction::constant(0.0), 0.1, Direction::two_sided, {});
  const auto G = enumerate_sign_group(4);
  double sum = 0;
  for (std::size_t h = 0; h < H.size(); ++h) {
    const auto x = assemble_matched_process(pairs, H[h]);
    CHECK(r.p_right[h] == randomization_pvalue(x, G));
    CHECK(r.p_left[h] == randomization_pvalue(-x, G));
    sum += r.p_right[h];
  }
  CHECK(r.combined_right == Approx(2.0 * sum / 12.0));
  CHECK(r.p_value == Approx(std::min(1.0, 2.0 * std::min(r.combined_right, r.combined_left))));
}

TEST_CASE("treatment split and pooled pair estimates") {
  auto cl = [](std::string id, std::vector<double> y, int d) {
    RowMatrix X(static_cast<Eigen::Index>(y.size()), 2);
    X.col(0).setOnes();
    X.col(1).setConstant(d);
    const auto n = y.size();
    return Cluster{std::move(id), Sample(std::move(y)), DesignMatrix(X), std::vector<int>(n, d)};
  };
  const ClusterDataset data({cl("t1", {5, 6, 7}, 1), cl("c1", {1, 2, 3}, 0), cl("c2", {0, 1, 2}, 0)});
  const auto s = split_by_treatment(data);
  CHECK(s.treated == std::vector<std::size_t>{0});
  CHECK(s.control == std::vector<std::size_t>{1, 2});
  const auto pairs = estimate_pairs(data, {EstimatorSpec::Kind::qr_coefficient, 1}, QuantileGrid({0.5}));
  CHECK(pairs.at(0, 0)[0] == Approx(4.0));
  CHECK(pairs.at(0, 1)[0] == Approx(5.0));

  const ClusterDataset mixed({cl("a", {1, 2}, 1), Cluster{"b", Sample({1, 2}), std::nullopt, std::vector<int>{0, 1}}});
  CHECK_THROWS_AS(split_by_treatment(mixed), ValidationError);
}
