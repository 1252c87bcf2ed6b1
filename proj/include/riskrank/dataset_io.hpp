#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "riskrank/common.hpp"
#include "riskrank/csv.hpp"
#include "riskrank/data.hpp"

#include "json.hpp"

namespace riskrank {

// On-disk dataset layout: a directory holding raw.csv (pre-split), the three
// split CSVs, groups_train.jsonl / groups_test.jsonl and schema.json.

inline void write_records_csv(const std::string& path, const std::vector<TraderRecord>& records,
                              const FeatureSchema& schema) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  out << "account_id,period";
  for (const std::string& n : schema.continuous_names) out << ',' << n;
  for (const std::string& n : schema.categorical_names) out << ',' << n;
  out << ",next_total_pl,next_profit_20,future_return,label\n";
  for (const TraderRecord& r : records) {
    out << r.account_id << ',' << r.period;
    for (double v : r.continuous) out << ',' << format_double(v);
    for (int v : r.categorical) out << ',' << v;
    out << ',' << format_double(r.next_total_pl) << ',' << format_double(r.next_profit_20) << ','
        << format_double(r.future_return) << ',' << r.label << '\n';
  }
}

inline std::vector<TraderRecord> read_records_csv(const std::string& path, const FeatureSchema& schema) {
  const CsvTable table = read_csv(path);
  std::vector<int> cont_cols, cat_cols;
  for (const std::string& n : schema.continuous_names) cont_cols.push_back(table.require_column(n));
  for (const std::string& n : schema.categorical_names) cat_cols.push_back(table.require_column(n));
  const int acc = table.require_column("account_id");
  const int per = table.require_column("period");
  const int pl = table.require_column("next_total_pl");
  const int pl20 = table.require_column("next_profit_20");
  const int ret = table.require_column("future_return");
  const int lab = table.require_column("label");

  std::vector<TraderRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::size_t row_no = r + 2;
    const auto& cells = table.rows[r];
    TraderRecord rec;
    rec.account_id = parse_int_cell(cells[static_cast<std::size_t>(acc)], path, row_no, "account_id");
    rec.period = static_cast<int>(parse_int_cell(cells[static_cast<std::size_t>(per)], path, row_no, "period"));
    for (std::size_t j = 0; j < cont_cols.size(); ++j) {
      rec.continuous.push_back(parse_double_cell(cells[static_cast<std::size_t>(cont_cols[j])], path, row_no,
                                                 schema.continuous_names[j]));
    }
    for (std::size_t j = 0; j < cat_cols.size(); ++j) {
      rec.categorical.push_back(static_cast<int>(
          parse_int_cell(cells[static_cast<std::size_t>(cat_cols[j])], path, row_no, schema.categorical_names[j])));
    }
    rec.next_total_pl = parse_double_cell(cells[static_cast<std::size_t>(pl)], path, row_no, "next_total_pl");
    rec.next_profit_20 = parse_double_cell(cells[static_cast<std::size_t>(pl20)], path, row_no, "next_profit_20");
    rec.future_return = parse_double_cell(cells[static_cast<std::size_t>(ret)], path, row_no, "future_return");
    rec.label = static_cast<int>(parse_int_cell(cells[static_cast<std::size_t>(lab)], path, row_no, "label"));
    schema.validate_record(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

inline void write_schema_json(const std::string& path, const FeatureSchema& schema) {
  nlohmann::json j;
  j["continuous"] = schema.continuous_names;
  j["categorical"] = schema.categorical_names;
  j["vocab_sizes"] = schema.vocab_sizes;
  j["market_feature"] = schema.market_feature;
  j["alpha"] = schema.alpha;
  j["seed"] = schema.seed;
  j["config_hash"] = schema.config_hash;
  if (schema.normalization_fitted()) {
    j["norm_lo"] = schema.norm_lo;
    j["norm_hi"] = schema.norm_hi;
  }
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline FeatureSchema read_schema_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw data_error(std::string("malformed schema.json: ") + e.what());
  }
  FeatureSchema schema;
  schema.continuous_names = j.at("continuous").get<std::vector<std::string>>();
  schema.categorical_names = j.at("categorical").get<std::vector<std::string>>();
  schema.vocab_sizes = j.at("vocab_sizes").get<std::vector<int>>();
  schema.market_feature = j.value("market_feature", -1);
  schema.alpha = j.value("alpha", 1.0);
  schema.seed = j.value("seed", std::uint64_t{0});
  schema.config_hash = j.value("config_hash", "");
  if (j.contains("norm_lo")) {
    schema.norm_lo = j.at("norm_lo").get<std::vector<double>>();
    schema.norm_hi = j.at("norm_hi").get<std::vector<double>>();
  }
  return schema;
}

inline void write_groups_jsonl(const std::string& path, const std::vector<RankingGroup>& groups) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  for (const RankingGroup& g : groups) {
    nlohmann::json j;
    j["group_id"] = g.group_id;
    j["market"] = g.market;
    j["period"] = g.period;
    j["members"] = g.members;
    out << j.dump() << '\n';
  }
}

inline std::vector<RankingGroup> read_groups_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  std::vector<RankingGroup> groups;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw data_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    RankingGroup g;
    g.group_id = j.at("group_id").get<std::int64_t>();
    g.market = j.at("market").get<int>();
    g.period = j.at("period").get<int>();
    g.members = j.at("members").get<std::vector<std::size_t>>();
    groups.push_back(std::move(g));
  }
  return groups;
}

struct DatasetDir {
  FeatureSchema schema;
  std::vector<TraderRecord> train;
  std::vector<TraderRecord> validation;
  std::vector<TraderRecord> test;
};

inline DatasetDir read_dataset_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  DatasetDir d;
  d.schema = read_schema_json((fs::path(dir) / "schema.json").string());
  d.train = read_records_csv((fs::path(dir) / "train.csv").string(), d.schema);
  d.validation = read_records_csv((fs::path(dir) / "valid.csv").string(), d.schema);
  d.test = read_records_csv((fs::path(dir) / "test.csv").string(), d.schema);
  return d;
}

}  // namespace riskrank
