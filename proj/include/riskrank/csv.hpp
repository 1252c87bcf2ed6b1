#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "riskrank/common.hpp"
#include "riskrank/data.hpp"

#include "json.hpp"

namespace riskrank {

// Round-trip-exact rendering of a 64-bit float.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }

  int require_column(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw data_error("missing column '" + name + "'");
    return c;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw data_error("empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.header = split_csv_line(line);
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != table.header.size()) {
      throw data_error(path + ": row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

inline double parse_double_cell(const std::string& cell, const std::string& path, std::size_t row_no,
                                const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw data_error(path + ": row " + std::to_string(row_no) + ", column '" + col + "': cannot parse '" +
                     cell + "' as a number");
  }
}

inline long parse_int_cell(const std::string& cell, const std::string& path, std::size_t row_no,
                           const std::string& col) {
  const double v = parse_double_cell(cell, path, row_no, col);
  const long r = std::lround(v);
  if (static_cast<double>(r) != v) {
    throw data_error(path + ": row " + std::to_string(row_no) + ", column '" + col + "': '" + cell +
                     "' is not an integer");
  }
  return r;
}

// Declarative mapping from an external CSV onto the record schema. Loaded
// from a JSON file so public datasets plug in without code changes.
struct IngestConfig {
  std::vector<std::string> continuous;
  std::vector<std::string> categorical;
  std::vector<int> vocab_sizes;
  std::string account_column;  // empty: row index
  std::string period_column;   // empty: constant 0
  std::string market_feature;  // empty: single market; else one of `categorical`
  std::string proxy_column;    // label by the top alpha% of this column
  std::string label_column;    // direct 0/1 labels
  std::string profit_column;
  std::string profit20_column;
  double alpha = 1.0;

  static IngestConfig from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open schema config " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw config_error(std::string("malformed schema config: ") + e.what());
    }
    IngestConfig cfg;
    for (const auto& name : j.value("continuous", nlohmann::json::array())) {
      cfg.continuous.push_back(name.get<std::string>());
    }
    for (const auto& cat : j.value("categorical", nlohmann::json::array())) {
      cfg.categorical.push_back(cat.at("name").get<std::string>());
      cfg.vocab_sizes.push_back(cat.at("vocab").get<int>());
    }
    cfg.account_column = j.value("account_column", "");
    cfg.period_column = j.value("period_column", "");
    cfg.market_feature = j.value("market_feature", "");
    cfg.proxy_column = j.value("proxy_column", "");
    cfg.label_column = j.value("label_column", "");
    cfg.profit_column = j.value("profit_column", "");
    cfg.profit20_column = j.value("profit20_column", "");
    cfg.alpha = j.value("alpha", 1.0);
    if (cfg.continuous.empty()) throw config_error("schema config declares no continuous features");
    if (cfg.proxy_column.empty() && cfg.label_column.empty()) {
      throw config_error("schema config needs a proxy_column or a label_column");
    }
    return cfg;
  }
};

struct IngestResult {
  std::vector<TraderRecord> records;
  FeatureSchema schema;
};

// Reads an external CSV into records. With a proxy column configured, the
// top alpha% rows by proxy value become positives and the proxy stands in
// for all profit fields.
inline IngestResult ingest_csv(const std::string& path, const IngestConfig& cfg) {
  const CsvTable table = read_csv(path);
  if (table.rows.empty()) throw data_error(path + ": no data rows");

  std::vector<int> cont_cols, cat_cols;
  for (const std::string& name : cfg.continuous) cont_cols.push_back(table.require_column(name));
  for (const std::string& name : cfg.categorical) cat_cols.push_back(table.require_column(name));
  const int account_col = cfg.account_column.empty() ? -1 : table.require_column(cfg.account_column);
  const int period_col = cfg.period_column.empty() ? -1 : table.require_column(cfg.period_column);
  const int proxy_col = cfg.proxy_column.empty() ? -1 : table.require_column(cfg.proxy_column);
  const int label_col = cfg.label_column.empty() ? -1 : table.require_column(cfg.label_column);
  const int profit_col = cfg.profit_column.empty() ? -1 : table.require_column(cfg.profit_column);
  const int profit20_col = cfg.profit20_column.empty() ? -1 : table.require_column(cfg.profit20_column);

  IngestResult out;
  out.schema.continuous_names = cfg.continuous;
  out.schema.categorical_names = cfg.categorical;
  out.schema.vocab_sizes = cfg.vocab_sizes;
  out.schema.alpha = cfg.alpha;
  if (!cfg.market_feature.empty()) {
    for (std::size_t i = 0; i < cfg.categorical.size(); ++i) {
      if (cfg.categorical[i] == cfg.market_feature) out.schema.market_feature = static_cast<int>(i);
    }
    if (out.schema.market_feature < 0) {
      throw config_error("market_feature '" + cfg.market_feature + "' is not a categorical feature");
    }
  }

  out.records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::size_t row_no = r + 2;  // header is row 1
    const auto& cells = table.rows[r];
    TraderRecord rec;
    rec.account_id = account_col >= 0
                         ? parse_int_cell(cells[static_cast<std::size_t>(account_col)], path, row_no, cfg.account_column)
                         : static_cast<std::int64_t>(r);
    rec.period = period_col >= 0
                     ? static_cast<int>(parse_int_cell(cells[static_cast<std::size_t>(period_col)], path, row_no,
                                                       cfg.period_column))
                     : 0;
    for (std::size_t j = 0; j < cont_cols.size(); ++j) {
      rec.continuous.push_back(
          parse_double_cell(cells[static_cast<std::size_t>(cont_cols[j])], path, row_no, cfg.continuous[j]));
    }
    for (std::size_t j = 0; j < cat_cols.size(); ++j) {
      const long v = parse_int_cell(cells[static_cast<std::size_t>(cat_cols[j])], path, row_no, cfg.categorical[j]);
      if (v < 0 || v >= cfg.vocab_sizes[j]) {
        throw data_error(path + ": row " + std::to_string(row_no) + ": categorical '" + cfg.categorical[j] +
                         "' value " + std::to_string(v) + " outside vocabulary of " +
                         std::to_string(cfg.vocab_sizes[j]));
      }
      rec.categorical.push_back(static_cast<int>(v));
    }
    if (proxy_col >= 0) {
      const double proxy = parse_double_cell(cells[static_cast<std::size_t>(proxy_col)], path, row_no, cfg.proxy_column);
      rec.next_total_pl = proxy;
      rec.next_profit_20 = proxy;
      rec.future_return = proxy;
    } else {
      rec.label = static_cast<int>(parse_int_cell(cells[static_cast<std::size_t>(label_col)], path, row_no, cfg.label_column));
      if (rec.label != 0 && rec.label != 1) {
        throw data_error(path + ": row " + std::to_string(row_no) + ": label must be 0 or 1");
      }
    }
    if (profit_col >= 0) {
      rec.next_total_pl = parse_double_cell(cells[static_cast<std::size_t>(profit_col)], path, row_no, cfg.profit_column);
    }
    if (profit20_col >= 0) {
      rec.next_profit_20 =
          parse_double_cell(cells[static_cast<std::size_t>(profit20_col)], path, row_no, cfg.profit20_column);
    }
    out.records.push_back(std::move(rec));
  }

  if (proxy_col >= 0) {
    std::vector<ReturnEntry> entries;
    entries.reserve(out.records.size());
    for (std::size_t i = 0; i < out.records.size(); ++i) {
      entries.push_back(ReturnEntry{out.records[i].account_id, static_cast<std::size_t>(i), out.records[i].future_return});
    }
    const std::vector<int> labels = assign_labels(entries, cfg.alpha);
    for (std::size_t i = 0; i < out.records.size(); ++i) out.records[i].label = labels[i];
  }
  return out;
}

}  // namespace riskrank
