#ifndef CRK_IO_HPP
#define CRK_IO_HPP

// CSV ingestion and JSON/CSV serialization of test and study results.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "crk/crk_between.hpp"
#include "crk/crk_within.hpp"
#include "crk/qdid.hpp"
#include "crk/sim_harness.hpp"

namespace crk::io {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// within_quantile: cluster, y [, d]
/// within_qr:       cluster, y, x1..xp [, d]       design (1, x1..xp)
/// between_pairs:   cluster, y, d [, x1..xp]       design (1, d, x1..xp)
/// panel_qdid:      cluster, unit, t, y, d  (long) or cluster, d, y_m1, y0, y1 (wide)
enum class Schema { within_quantile, within_qr, between_pairs, panel_qdid };

inline Schema parse_schema(const std::string& s) {
  if (s == "within_quantile") return Schema::within_quantile;
  if (s == "within_qr") return Schema::within_qr;
  if (s == "between_pairs") return Schema::between_pairs;
  if (s == "panel_qdid") return Schema::panel_qdid;
  throw ValidationError("unknown CSV schema '" + s + "'");
}

/// Header plus rows of raw cells; row numbers are 1-based file lines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;

  std::optional<std::size_t> column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Splits one line on commas; double quotes group a field ("" is a literal quote).
inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline double parse_number(const std::string& cell, std::size_t line, const std::string& col) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ValidationError("row " + std::to_string(line) + ": column '" + col + "' has non-numeric value '" + cell + "'");
  return v;
}

inline int parse_flag(const std::string& cell, std::size_t line, const std::string& col, int lo, int hi) {
  const double v = parse_number(cell, line, col);
  if (v != std::floor(v) || v < lo || v > hi)
    throw ValidationError("row " + std::to_string(line) + ": column '" + col + "' must be an integer in [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "], got '" + cell + "'");
  return static_cast<int>(v);
}

inline std::size_t require_column(const CsvTable& t, const std::string& name) {
  const auto c = t.column(name);
  if (!c) throw ValidationError("CSV is missing required column '" + name + "'");
  return *c;
}

// x1, x2, ... in numeric order.
inline std::vector<std::size_t> covariate_columns(const CsvTable& t) {
  std::vector<std::size_t> out;
  for (std::size_t k = 1;; ++k) {
    const auto c = t.column("x" + std::to_string(k));
    if (!c) break;
    out.push_back(*c);
  }
  return out;
}

}  // namespace detail

inline CsvTable parse_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_line(line);
    if (t.header.empty()) {
      for (const auto& h : cells) {
        if (h.empty()) throw ValidationError("row " + std::to_string(lineno) + ": empty column name in header");
        if (!h.empty() && (std::isdigit(static_cast<unsigned char>(h[0])) || h[0] == '-' || h[0] == '.'))
          throw ValidationError("row " + std::to_string(lineno) +
                                ": missing header row (first line starts with a number)");
      }
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw ValidationError("row " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.line.push_back(lineno);
  }
  if (t.header.empty()) throw ValidationError("CSV is empty: missing header row");
  if (t.rows.empty()) throw ValidationError("CSV has a header but no data rows");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return parse_csv(in);
}

/// Cluster data in first-appearance order; rows keep file order within a cluster.
inline ClusterDataset to_cluster_dataset(const CsvTable& t, Schema schema) {
  crk::detail::require(schema != Schema::panel_qdid, "to_cluster_dataset: panel schema yields panels, not clusters");
  const auto c_cluster = detail::require_column(t, "cluster");
  const auto c_y = detail::require_column(t, "y");
  const auto c_d = schema == Schema::between_pairs ? std::optional(detail::require_column(t, "d")) : t.column("d");
  const auto xs = detail::covariate_columns(t);
  if (schema == Schema::within_qr && xs.empty())
    throw ValidationError("CSV is missing required column 'x1' for the within_qr schema");

  struct Acc {
    std::vector<double> y;
    std::vector<int> d;
    std::vector<std::vector<double>> x;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto line = t.line[r];
    const auto& id = row[c_cluster];
    if (id.empty()) throw ValidationError("row " + std::to_string(line) + ": empty cluster id");
    auto [it, fresh] = acc.try_emplace(id);
    if (fresh) order.push_back(id);
    auto& a = it->second;
    a.y.push_back(detail::parse_number(row[c_y], line, "y"));
    if (c_d) a.d.push_back(detail::parse_flag(row[*c_d], line, "d", 0, 1));
    std::vector<double> x;
    for (std::size_t k = 0; k < xs.size(); ++k) x.push_back(detail::parse_number(row[xs[k]], line, t.header[xs[k]]));
    a.x.push_back(std::move(x));
  }

  const bool with_design = schema != Schema::within_quantile;
  std::vector<Cluster> clusters;
  for (const auto& id : order) {
    auto& a = acc[id];
    std::optional<DesignMatrix> X;
    if (with_design) {
      const auto n = static_cast<Eigen::Index>(a.y.size());
      const Eigen::Index extra = schema == Schema::between_pairs ? 1 : 0;
      RowMatrix m(n, 1 + extra + static_cast<Eigen::Index>(xs.size()));
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        m(i, 0) = 1.0;
        if (extra) m(i, 1) = a.d[ii];
        for (std::size_t k = 0; k < xs.size(); ++k) m(i, 1 + extra + static_cast<Eigen::Index>(k)) = a.x[ii][k];
      }
      X.emplace(std::move(m));
    }
    std::optional<std::vector<int>> d;
    if (c_d) d = std::move(a.d);
    clusters.push_back(Cluster{id, Sample(std::move(a.y)), std::move(X), std::move(d)});
  }
  return ClusterDataset(std::move(clusters));
}

/// Panels per cluster (first-appearance order), from long or wide layout.
inline std::vector<PanelSample> to_panels(const CsvTable& t) {
  const auto c_cluster = detail::require_column(t, "cluster");
  const auto c_d = detail::require_column(t, "d");
  const bool wide = t.column("y_m1").has_value();

  std::vector<std::string> order;
  std::map<std::string, std::pair<int, std::vector<std::array<double, 3>>>> panels;
  auto cluster_entry = [&](const std::string& id, int d, std::size_t line) -> auto& {
    if (id.empty()) throw ValidationError("row " + std::to_string(line) + ": empty cluster id");
    auto [it, fresh] = panels.try_emplace(id, d, std::vector<std::array<double, 3>>{});
    if (fresh) order.push_back(id);
    if (it->second.first != d)
      throw ValidationError("row " + std::to_string(line) + ": treatment must be constant within cluster '" + id + "'");
    return it->second.second;
  };

  if (wide) {
    const std::size_t cols[3] = {detail::require_column(t, "y_m1"), detail::require_column(t, "y0"),
                                 detail::require_column(t, "y1")};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& row = t.rows[r];
      const auto line = t.line[r];
      auto& units = cluster_entry(row[c_cluster], detail::parse_flag(row[c_d], line, "d", 0, 1), line);
      std::array<double, 3> u{};
      for (int k = 0; k < 3; ++k) u[k] = detail::parse_number(row[cols[k]], line, t.header[cols[k]]);
      units.push_back(u);
    }
  } else {
    const auto c_unit = detail::require_column(t, "unit");
    const auto c_t = detail::require_column(t, "t");
    const auto c_y = detail::require_column(t, "y");
    // (cluster, unit) -> filled periods, in first-appearance order of units
    std::map<std::string, std::vector<std::string>> unit_order;
    std::map<std::pair<std::string, std::string>, std::pair<std::array<double, 3>, std::array<bool, 3>>> cells;
    std::map<std::pair<std::string, std::string>, std::size_t> first_line;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& row = t.rows[r];
      const auto line = t.line[r];
      const auto& id = row[c_cluster];
      cluster_entry(id, detail::parse_flag(row[c_d], line, "d", 0, 1), line);
      const int period = detail::parse_flag(row[c_t], line, "t", -1, 1);
      const double y = detail::parse_number(row[c_y], line, "y");
      const auto key = std::make_pair(id, row[c_unit]);
      auto [it, fresh] = cells.try_emplace(key);
      if (fresh) {
        unit_order[id].push_back(row[c_unit]);
        first_line[key] = line;
      }
      auto& [vals, seen] = it->second;
      const auto slot = static_cast<std::size_t>(period + 1);
      if (seen[slot])
        throw ValidationError("row " + std::to_string(line) + ": duplicate period " + std::to_string(period) +
                              " for unit '" + row[c_unit] + "' in cluster '" + id + "'");
      seen[slot] = true;
      vals[slot] = y;
    }
    for (const auto& id : order) {
      for (const auto& unit : unit_order[id]) {
        const auto key = std::make_pair(id, unit);
        const auto& [vals, seen] = cells[key];
        if (!(seen[0] && seen[1] && seen[2]))
          throw ValidationError("row " + std::to_string(first_line[key]) + ": unit '" + unit + "' in cluster '" + id +
                                "' does not have all periods -1, 0, 1");
        panels[id].second.push_back(vals);
      }
    }
  }

  std::vector<PanelSample> out;
  for (const auto& id : order) {
    auto& [d, units] = panels[id];
    out.emplace_back(std::move(units), d == 1, id);
  }
  return out;
}

inline std::variant<ClusterDataset, std::vector<PanelSample>> load_csv(const std::string& path, Schema schema) {
  const auto t = read_csv_file(path);
  if (schema == Schema::panel_qdid) return to_panels(t);
  return to_cluster_dataset(t, schema);
}

/// Writes a dataset back in the long layout understood by to_cluster_dataset.
/// Columns: cluster, y, then d (if flags exist), then x1..xp for the non-
/// intercept (and, for between_pairs, non-treatment) design columns.
inline void write_cluster_csv(std::ostream& out, const ClusterDataset& data, Schema schema) {
  const auto& first = data[0];
  const bool with_d = first.treated.has_value();
  const Eigen::Index skip = schema == Schema::between_pairs ? 2 : 1;
  const Eigen::Index p = (schema == Schema::within_quantile || !first.X) ? 0 : first.X->cols() - skip;
  out << "cluster,y";
  if (with_d) out << ",d";
  for (Eigen::Index k = 1; k <= p; ++k) out << ",x" << k;
  out << '\n';
  out.precision(17);
  for (const auto& c : data.clusters()) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      out << c.id << ',' << c.y[i];
      if (with_d) out << ',' << (*c.treated)[i];
      for (Eigen::Index k = 0; k < p; ++k) out << ',' << c.X->matrix()(static_cast<Eigen::Index>(i), skip + k);
      out << '\n';
    }
  }
}

// ---- reports ----

inline json grid_json(const QuantileGrid& g) { return json(g.points()); }

inline json to_json(const TestResult& r) {
  return json{{"statistic", r.statistic},   {"critical_value", r.critical_value},
              {"p_value", r.p_value},       {"p_right", r.p_right},
              {"p_left", r.p_left},         {"alpha", r.alpha},
              {"direction", to_string(r.direction)}, {"reject", r.reject},
              {"group_size", r.group_size}, {"exact_group", r.exact_group}};
}

inline json to_json(const BetweenResult& r) {
  json j{{"combiner", to_string(r.combiner)},
         {"direction", to_string(r.direction)},
         {"alpha", r.alpha},
         {"combined_right", r.combined_right},
         {"combined_left", r.combined_left},
         {"p_value", r.p_value},
         {"reject", r.reject},
         {"matchings", r.matchings},
         {"group_size", r.group_size},
         {"exact_group", r.exact_group}};
  if (!r.p_right.empty()) j["p_right"] = r.p_right;
  if (!r.p_left.empty()) j["p_left"] = r.p_left;
  return j;
}

inline json to_json(const sim::DgpConfig& d) {
  return json{{"model", sim::to_string(d.model)}, {"q", d.q},
              {"K", d.K},                         {"rho", d.rho},
              {"min_size", d.min_size},           {"max_size", d.max_size},
              {"lambda_shift", d.lambda_shift},   {"treated_clusters", d.treated_clusters}};
}

inline json to_json(const sim::TestConfig& t) {
  json j{{"kind", sim::to_string(t.kind)},
         {"target_column", t.target_column},
         {"grid", grid_json(t.grid)},
         {"null_value", t.null_value},
         {"alpha", t.alpha},
         {"direction", to_string(t.direction)},
         {"sign_draws", t.sign_draws ? json(*t.sign_draws) : json("exact")}};
  if (t.kind != sim::TestConfig::Kind::within) {
    j["combiner"] = to_string(t.combiner);
    j["matchings"] = t.matchings;
    j["pick_count"] = t.pick_count;
  }
  return j;
}

inline json to_json(const sim::McResult& r) {
  json j{{"replications", r.replications},
         {"rejections", r.rejections},
         {"rejection_rate", r.rejection_rate},
         {"mc_stderr", r.mc_stderr},
         {"master_seed", r.config.master_seed}};
  if (!r.label.empty()) j["label"] = r.label;
  j["dgp"] = to_json(r.config.dgp);
  j["test"] = to_json(r.config.test);
  return j;
}

inline const char* kMcCsvHeader =
    "label,model,q,K,rho,lambda_shift,kind,combiner,alpha,direction,replications,rejections,rejection_rate,mc_stderr,"
    "master_seed";

/// One plot-ready row per study.
inline std::string mc_csv_row(const sim::McResult& r) {
  std::ostringstream o;
  o.precision(10);
  const auto& c = r.config;
  o << r.label << ',' << sim::to_string(c.dgp.model) << ',' << c.dgp.q << ',' << c.dgp.K << ',' << c.dgp.rho << ','
    << c.dgp.lambda_shift << ',' << sim::to_string(c.test.kind) << ','
    << (c.test.kind == sim::TestConfig::Kind::within ? "" : to_string(c.test.combiner)) << ',' << c.test.alpha << ','
    << to_string(c.test.direction) << ',' << r.replications << ',' << r.rejections << ',' << r.rejection_rate << ','
    << r.mc_stderr << ',' << c.master_seed;
  return o.str();
}

/// Envelope shared by every report.
inline json report(const std::string& command, json config, json result) {
  return json{{"schema_version", kSchemaVersion}, {"command", command}, {"config", std::move(config)},
              {"result", std::move(result)}};
}

}  // namespace crk::io

#endif  // CRK_IO_HPP
