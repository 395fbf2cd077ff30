#include <catch_amalgamated.hpp>

#include <sstream>

#include "crk/io.hpp"

using namespace crk;
using Catch::Matchers::ContainsSubstring;

namespace {

io::CsvTable table(const std::string& text) {
  std::istringstream in(text);
  return io::parse_csv(in);
}

std::string data_file(const std::string& name) { return std::string(CRK_DATA_DIR) + "/" + name; }

}  // namespace

TEST_CASE("three-cluster unconditional file") {
  const auto data = std::get<ClusterDataset>(io::load_csv(data_file("within_quantile.csv"), io::Schema::within_quantile));
  REQUIRE(data.q() == 3);
  CHECK(data[0].id == "north");
  CHECK(data[1].id == "south");
  CHECK(data[2].id == "east");
  CHECK(data[0].y[1] == 0.4);
  CHECK_FALSE(data[0].X.has_value());
}

TEST_CASE("clusters keep first-appearance order and row order") {
  const auto data = io::to_cluster_dataset(table("cluster,y,x1\nb,1,0\na,2,1\nb,3,2\na,4,3\n"), io::Schema::within_qr);
  REQUIRE(data.q() == 2);
  CHECK(data[0].id == "b");
  CHECK(data[0].y[1] == 3);
  CHECK(data[0].X->matrix()(1, 1) == 2);
  CHECK(data[0].X->matrix()(1, 0) == 1);
}

TEST_CASE("csv defects are reported with row numbers") {
  CHECK_THROWS_WITH(table("1,2\n3,4\n"), ContainsSubstring("header"));
  CHECK_THROWS_WITH(table(""), ContainsSubstring("header"));
  CHECK_THROWS_WITH(io::to_cluster_dataset(table("cluster,z\na,1\n"), io::Schema::within_quantile),
                    ContainsSubstring("'y'"));
  CHECK_THROWS_WITH(io::to_cluster_dataset(table("cluster,y\na,1\nb,x\n"), io::Schema::within_quantile),
                    ContainsSubstring("row 3"));
  CHECK_THROWS_WITH(table("cluster,y\na,1,2\n"), ContainsSubstring("row 2"));
  CHECK_THROWS_WITH(io::to_cluster_dataset(table("cluster,y\n,1\nb,2\n"), io::Schema::within_quantile),
                    ContainsSubstring("row 2"));
  CHECK_THROWS_WITH(io::to_cluster_dataset(table("cluster,y\na,1\nb,2\n"), io::Schema::within_qr),
                    ContainsSubstring("x1"));
  CHECK_THROWS_WITH(io::to_cluster_dataset(table("cluster,y,d\na,1,2\nb,2,0\n"), io::Schema::between_pairs),
                    ContainsSubstring("row 2"));
  CHECK_THROWS_WITH(io::to_cluster_dataset(table("cluster,y\na,nan\nb,2\n"), io::Schema::within_quantile),
                    ContainsSubstring("row 2"));
}

TEST_CASE("quoted fields and a byte-order mark") {
  const auto t = table("\xEF\xBB\xBF" "cluster,y\n\"a,b\",1\n\"c\"\"d\",2\n");
  CHECK(t.header[0] == "cluster");
  const auto data = io::to_cluster_dataset(t, io::Schema::within_quantile);
  CHECK(data[0].id == "a,b");
  CHECK(data[1].id == "c\"d");
}

TEST_CASE("between schema builds the treatment design") {
  const auto data = io::to_cluster_dataset(io::read_csv_file(data_file("between_pairs.csv")), io::Schema::between_pairs);
  CHECK(data.q() == 12);
  CHECK(data[0].X->cols() == 3);
  const auto split = split_by_treatment(data);
  CHECK(split.treated.size() == 6);
  for (auto j : split.treated) CHECK(data[j].X->matrix().col(1).minCoeff() == 1.0);
}

TEST_CASE("panel files in long and wide layout agree") {
  const auto lng = std::get<std::vector<PanelSample>>(io::load_csv(data_file("panel_long.csv"), io::Schema::panel_qdid));
  const auto wide = std::get<std::vector<PanelSample>>(io::load_csv(data_file("panel_wide.csv"), io::Schema::panel_qdid));
  REQUIRE(lng.size() == 6);
  REQUIRE(wide.size() == 6);
  for (std::size_t j = 0; j < 6; ++j) {
    CHECK(lng[j].id == wide[j].id);
    CHECK(lng[j].treated == wide[j].treated);
    CHECK(lng[j].units == wide[j].units);
  }
  CHECK(lng[0].treated);
  CHECK_FALSE(lng[5].treated);
}

TEST_CASE("panel defects") {
  CHECK_THROWS_WITH(io::to_panels(table("cluster,unit,t,y,d\na,1,-1,0,1\na,1,0,0,1\n")),
                    ContainsSubstring("all periods"));
  CHECK_THROWS_WITH(io::to_panels(table("cluster,unit,t,y,d\na,1,-1,0,1\na,1,-1,0,1\n")),
                    ContainsSubstring("duplicate"));
  CHECK_THROWS_WITH(io::to_panels(table("cluster,unit,t,y,d\na,1,2,0,1\n")), ContainsSubstring("row 2"));
  CHECK_THROWS_WITH(io::to_panels(table("cluster,d,y_m1,y0,y1\na,1,0,0,0\na,0,0,0,0\n")),
                    ContainsSubstring("constant"));
}

TEST_CASE("written datasets reload to identical estimates") {
  sim::DgpConfig cfg;
  cfg.model = sim::Model::qte_cluster_treatment;
  cfg.q = 6;
  const auto data = sim::generate_cluster_dgp(cfg, 11);
  std::ostringstream out;
  io::write_cluster_csv(out, data, io::Schema::between_pairs);
  std::istringstream in(out.str());
  const auto back = io::to_cluster_dataset(io::parse_csv(in), io::Schema::between_pairs);
  const auto g = QuantileGrid::deciles();
  const EstimatorSpec spec{EstimatorSpec::Kind::qr_coefficient, 1};
  const auto a = estimate_pairs(data, spec, g);
  const auto b = estimate_pairs(back, spec, g);
  for (std::size_t j = 0; j < a.q1(); ++j)
    for (std::size_t k = 0; k < a.q0(); ++k) CHECK(a.at(j, k) == b.at(j, k));

  sim::DgpConfig c5;
  c5.q = 4;
  const auto d5 = sim::generate_cluster_dgp(c5, 2);
  std::ostringstream o5;
  io::write_cluster_csv(o5, d5, io::Schema::within_qr);
  std::istringstream i5(o5.str());
  const auto r5 = io::to_cluster_dataset(io::parse_csv(i5), io::Schema::within_qr);
  const EstimatorSpec s5{EstimatorSpec::Kind::qr_coefficient, 2};
  CHECK(estimate_per_cluster(d5, s5, g).values() == estimate_per_cluster(r5, s5, g).values());
}

TEST_CASE("reports carry the schema version and a config echo") {
  sim::StudyConfig st;
  st.replications = 100;
  st.dgp.q = 5;
  st.master_seed = 9;
  const auto r = sim::run_mc_study(st);
  const auto j = io::report("simulate", io::json{{"preset", "fig1"}}, io::to_json(r));
  CHECK(j["schema_version"] == 1);
  CHECK(j["result"]["master_seed"] == 9);
  CHECK(j["result"]["dgp"]["q"] == 5);
  CHECK(j["result"]["test"]["sign_draws"] == 1000);
  const auto row = io::mc_csv_row(r);
  CHECK(std::count(row.begin(), row.end(), ',') ==
        std::count(io::kMcCsvHeader, io::kMcCsvHeader + std::strlen(io::kMcCsvHeader), ','));
}
