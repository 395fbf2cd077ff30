#include <catch_amalgamated.hpp>

#include <map>
#include <set>

#include "crk/randomization.hpp"

using namespace crk;
using Catch::Approx;

namespace {

EstimateProcess process(std::vector<std::vector<double>> rows, std::vector<double> grid) {
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t l = 0; l < grid.size(); ++l) m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) = rows[j][l];
  return EstimateProcess(std::move(m), QuantileGrid(std::move(grid)));
}

// Direct evaluation of max_u (1/q) sum_j g_j X_j(u) for every g in {-1,+1}^q,
// enumerated by nested recursion rather than bit masks.
std::vector<double> enumerated_distribution(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  std::vector<int> g;
  const std::size_t q = rows.size(), L = rows[0].size();
  auto rec = [&](auto&& self) -> void {
    if (g.size() == q) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < L; ++l) {
        double s = 0;
        for (std::size_t j = 0; j < q; ++j) s += g[j] * rows[j][l];
        best = std::max(best, s / static_cast<double>(q));
      }
      out.push_back(best);
      return;
    }
    for (int s : {1, -1}) {
      g.push_back(s);
      self(self);
      g.pop_back();
    }
  };
  rec(rec);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("enumerated sign groups") {
  const auto g3 = enumerate_sign_group(3);
  CHECK(g3.size() == 8);
  std::set<std::vector<std::int8_t>> distinct;
  for (std::size_t i = 0; i < g3.size(); ++i) distinct.emplace(g3.member(i).begin(), g3.member(i).end());
  CHECK(distinct.size() == 8);

  const auto g1 = enumerate_sign_group(1);
  REQUIRE(g1.size() == 2);
  CHECK(((g1.member(0)[0] == 1 && g1.member(1)[0] == -1)));

  const auto g2 = enumerate_sign_group(2);
  int identities = 0;
  for (std::size_t i = 0; i < g2.size(); ++i) identities += (g2.member(i)[0] == 1 && g2.member(i)[1] == 1);
  CHECK(identities == 1);
  CHECK(g2.exact());
  CHECK_THROWS_AS(enumerate_sign_group(0), ValidationError);
  CHECK_THROWS_AS(enumerate_sign_group(21), ValidationError);
}

TEST_CASE("sampled sign groups") {
  const auto a = sample_sign_group(4, 1000, 7);
  const auto b = sample_sign_group(4, 1000, 7);
  REQUIRE(a.size() == 1000);
  bool same = true;
  for (std::size_t i = 0; i < a.size(); ++i)
    same = same && std::equal(a.member(i).begin(), a.member(i).end(), b.member(i).begin());
  CHECK(same);
  CHECK_FALSE(a.exact());

  const auto one = sample_sign_group(1, 1, 3);
  CHECK(one.size() == 1);
  CHECK((one.member(0)[0] == 1 || one.member(0)[0] == -1));
}

TEST_CASE("sampled sign vectors are uniform over the group") {
  const std::size_t m = 100000;
  const auto G = sample_sign_group(2, m, 99);
  std::map<std::pair<int, int>, std::size_t> freq;
  for (std::size_t i = 0; i < m; ++i) ++freq[{G.member(i)[0], G.member(i)[1]}];
  REQUIRE(freq.size() == 4);
  for (const auto& [k, c] : freq) CHECK(std::abs(static_cast<double>(c) / m - 0.25) <= 0.01);
}

TEST_CASE("make_sign_group switches between exact and sampled") {
  GroupConfig cfg;
  CHECK(make_sign_group(14, cfg).exact());
  CHECK(make_sign_group(14, cfg).size() == 16384);
  CHECK_FALSE(make_sign_group(15, cfg).exact());
  CHECK(make_sign_group(15, cfg).size() == 9999);
  cfg.draws = 500;
  CHECK(make_sign_group(3, cfg).size() == 500);
}

TEST_CASE("ks statistic") {
  CHECK(ks_statistic(process({{1, 3}, {2, -1}}, {0.25, 0.75})) == 1.5);
  CHECK(ks_statistic(process({{0, 0}, {0, 0}}, {0.25, 0.75})) == 0.0);
  CHECK(ks_statistic(process({{-2, -1}}, {0.25, 0.75})) == -1.0);
}

TEST_CASE("apply_signs") {
  const auto X = process({{1, 3}, {2, -1}, {0.5, 0.25}}, {0.25, 0.75});
  const SignVector id{1, 1, 1}, neg{-1, -1, -1}, g{1, -1, -1};
  CHECK(apply_signs(X, id).values() == X.values());
  CHECK(apply_signs(X, neg).values() == (-X).values());
  CHECK(apply_signs(apply_signs(X, g), g).values() == X.values());
  CHECK_THROWS_AS(apply_signs(X, SignVector{1, 1}), ValidationError);
}

TEST_CASE("two-cluster randomization distribution by enumeration") {
  const std::vector<std::vector<double>> rows{{1}, {2}};
  const auto X = process(rows, {0.5});
  const auto G = enumerate_sign_group(2);
  const auto dist = randomization_distribution(X, G);
  const auto oracle = enumerated_distribution(rows);
  CHECK(dist == oracle);
  CHECK(dist == std::vector<double>{-1.5, -0.5, 0.5, 1.5});
  CHECK(randomization_pvalue(X, G) == 0.25);

  const auto zero = process({{0}, {0}}, {0.5});
  for (double v : randomization_distribution(zero, G)) CHECK(v == 0.0);
  CHECK(randomization_pvalue(zero, G) == 1.0);
}

TEST_CASE("randomization distribution matches enumeration on random processes") {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t q = 2 + rep % 6, L = 1 + rep % 4;
    std::vector<std::vector<double>> rows(q, std::vector<double>(L));
    for (auto& r : rows)
      for (auto& v : r) v = z(gen);
    std::vector<double> grid;
    for (std::size_t l = 0; l < L; ++l) grid.push_back((l + 1.0) / (L + 1.0));
    const auto dist = randomization_distribution(process(rows, grid), enumerate_sign_group(q));
    const auto oracle = enumerated_distribution(rows);
    REQUIRE(dist.size() == oracle.size());
    for (std::size_t i = 0; i < dist.size(); ++i) CHECK(dist[i] == Approx(oracle[i]).margin(1e-14));
  }
}

TEST_CASE("critical values") {
  const std::vector<double> d{-1.5, -0.5, 0.5, 1.5};
  CHECK(critical_value(d, 0.25) == 0.5);
  CHECK(critical_value(d, 0.05) == 1.5);
  CHECK(critical_value(std::vector<double>(7, 2.5), 0.1) == 2.5);
  CHECK_THROWS_AS(critical_value(d, 0.0), ValidationError);
  CHECK_THROWS_AS(critical_value(std::vector<double>{}, 0.1), ValidationError);
}

TEST_CASE("crk decision on the two-cluster example") {
  const auto X = process({{1}, {2}}, {0.5});
  const auto G = enumerate_sign_group(2);
  const auto r = crk_decision(X, G, 0.25, Direction::right);
  CHECK(r.reject);
  CHECK(r.p_value == 0.25);
  CHECK(r.statistic == 1.5);
  CHECK(r.critical_value == 0.5);
  CHECK(r.group_size == 4);

  const auto zero = process({{0}, {0}}, {0.5});
  for (auto d : {Direction::right, Direction::left, Direction::two_sided}) {
    const auto z = crk_decision(zero, G, 0.5, d);
    CHECK_FALSE(z.reject);
    CHECK(z.p_value == 1.0);
  }

  const auto s = crk_decision(X.scaled(3.0), G, 0.25, Direction::right);
  CHECK(s.reject == r.reject);
  CHECK(s.p_value == r.p_value);
  CHECK(s.statistic == 3 * r.statistic);
  CHECK(s.critical_value == 3 * r.critical_value);
}

TEST_CASE("left and two-sided decisions") {
  const auto X = process({{-1}, {-2}}, {0.5});
  const auto G = enumerate_sign_group(2);
  const auto l = crk_decision(X, G, 0.25, Direction::left);
  CHECK(l.reject);
  CHECK(l.p_value == 0.25);
  const auto r = crk_decision(X, G, 0.25, Direction::right);
  CHECK_FALSE(r.reject);
  const auto t = crk_decision(X, G, 0.25, Direction::two_sided);
  CHECK(t.reject);
  CHECK(t.p_value == 0.5);
  CHECK(t.p_left == 0.25);
  CHECK(t.p_right == 1.0);

  // lower-tail form: T(X) = -1.5 ties the lowest order statistic, so the strict rule keeps H0
  // while the negated form rejects
  const auto lt = crk_decision(X, G, 0.25, Direction::left, {LeftRule::lower_tail, false});
  CHECK(lt.critical_value == -1.5);
  CHECK_FALSE(lt.reject);
}

TEST_CASE("add-identity p-value") {
  const auto X = process({{1}, {2}, {3}}, {0.5});
  const auto G = sample_sign_group(3, 99, 5);
  const double plain = randomization_pvalue(X, G);
  const double plus = randomization_pvalue(X, G, {true});
  CHECK(plus == Approx((plain * 99 + 1) / 100));
  // exact groups already contain the identity
  const auto E = enumerate_sign_group(3);
  CHECK(randomization_pvalue(X, E, {true}) == randomization_pvalue(X, E));
}

TEST_CASE("randomized test weight") {
  const auto G = enumerate_sign_group(2);
  CHECK(randomized_test_weight(process({{0}, {0}}, {0.5}), G, 0.25) == 0.25);
  CHECK(randomized_test_weight(process({{1}, {2}}, {0.5}), G, 0.25) == 0.0);
  CHECK_THROWS_AS(randomized_test_weight(process({{1}, {2}}, {0.5}), sample_sign_group(2, 10, 1), 0.25),
                  ValidationError);

  // all T-values distinct, alpha |G| integer: weight is alpha|G| minus the strict count
  const auto X = process({{1}, {2.5}, {4.25}}, {0.5});
  const auto E = enumerate_sign_group(3);
  const double a = randomized_test_weight(X, E, 0.25);
  CHECK((a == 0.0 || a == 1.0));
}

TEST_CASE("randomized decision uses the boundary weight") {
  const auto zero = process({{0}, {0}}, {0.5});
  const auto G = enumerate_sign_group(2);
  CHECK(randomized_decision(zero, G, 0.25, 0.2));
  CHECK_FALSE(randomized_decision(zero, G, 0.25, 0.3));
  const auto X = process({{1}, {2}}, {0.5});
  CHECK(randomized_decision(X, G, 0.25, 0.99));
}

TEST_CASE("mismatched inputs are rejected") {
  const auto X = process({{1}, {2}}, {0.5});
  CHECK_THROWS_AS(randomization_pvalue(X, enumerate_sign_group(3)), ValidationError);
  CHECK_THROWS_AS(crk_decision(X, enumerate_sign_group(2), 1.0, Direction::right), ValidationError);
  CHECK_THROWS_AS(parse_direction("up"), ValidationError);
  CHECK(parse_direction("two-sided") == Direction::two_sided);
  RowMatrix bad(1, 1);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(EstimateProcess(bad, QuantileGrid({0.5})), ValidationError);
}
