// Command-line front end for the profit-aware risk ranking pipeline.
//
// Subcommands: synth | ingest | split | group | pretrain | train | rank |
//              eval | twostep | gradcheck
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "riskrank/csv.hpp"
#include "riskrank/data.hpp"
#include "riskrank/dataset_io.hpp"
#include "riskrank/eval.hpp"
#include "riskrank/finite_diff.hpp"
#include "riskrank/loss.hpp"
#include "riskrank/model.hpp"
#include "riskrank/synth.hpp"
#include "riskrank/train.hpp"

namespace fs = std::filesystem;
using namespace riskrank;

namespace {

// Flat key=value configuration file; command-line flags win over file values.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw config_error("config file " + path + ": line " + std::to_string(line_no) + " is not key=value");
    }
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

struct CommonOptions {
  std::string config_path;
  std::uint64_t seed = 7;
  std::map<std::string, std::string> file_values;

  void register_on(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key=value config file; flags override it");
    cmd->add_option("--seed", seed, "master RNG seed");
  }

  // Applies config-file values to options the user did not pass explicitly.
  void apply_file(CLI::App* cmd) {
    if (config_path.empty()) return;
    file_values = read_config_file(config_path);
    for (const auto& [key, value] : file_values) {
      CLI::Option* opt = cmd->get_option_no_throw("--" + key);
      if (opt == nullptr) throw config_error("config file sets unknown option '" + key + "'");
      if (opt->count() == 0) {
        opt->add_result(value);
        opt->run_callback();
      }
    }
  }

  std::string config_hash(const CLI::App* cmd) const {
    std::ostringstream canon;
    for (const CLI::Option* opt : cmd->get_options()) {
      if (opt->get_name().rfind("--", 0) != 0) continue;
      canon << opt->get_name() << '=';
      for (const std::string& r : opt->results()) canon << r << ';';
      canon << '\n';
    }
    std::ostringstream hex;
    hex << std::hex << fnv1a(canon.str());
    return hex.str();
  }
};

void write_run_meta(const fs::path& dir, const std::string& subcommand, std::uint64_t seed,
                    const std::string& hash) {
  nlohmann::json j;
  j["subcommand"] = subcommand;
  j["seed"] = seed;
  j["config_hash"] = hash;
  fs::create_directories(dir);
  std::ofstream out(dir / ("run_meta_" + subcommand + ".json"));
  out << j.dump(2) << '\n';
}

struct ModelFlags {
  std::size_t d_k = 64;
  std::size_t n_heads = 2;
  std::size_t feedforward = 128;
  std::size_t n_self_layers = 2;
  std::size_t n_cross_layers = 4;
  double dropout = 0.0;
  std::string activation = "gelu";

  void register_on(CLI::App* cmd) {
    cmd->add_option("--d-k", d_k, "embedding width");
    cmd->add_option("--heads", n_heads, "attention heads");
    cmd->add_option("--feedforward", feedforward, "feedforward width");
    cmd->add_option("--self-layers", n_self_layers, "self-trader encoder layers");
    cmd->add_option("--cross-layers", n_cross_layers, "cross-trader encoder layers");
    cmd->add_option("--dropout", dropout, "dropout rate (training only)");
    cmd->add_option("--activation", activation, "gelu | relu");
  }

  ModelConfig to_config(const FeatureSchema& schema) const {
    ModelConfig cfg = ModelConfig::from_schema(schema);
    cfg.d_k = d_k;
    cfg.n_heads = n_heads;
    cfg.feedforward = feedforward;
    cfg.n_self_layers = n_self_layers;
    cfg.n_cross_layers = n_cross_layers;
    cfg.dropout = dropout;
    if (activation == "gelu") {
      cfg.activation = Activation::kGelu;
    } else if (activation == "relu") {
      cfg.activation = Activation::kRelu;
    } else {
      throw config_error("unknown activation '" + activation + "'");
    }
    cfg.validate();
    return cfg;
  }
};

std::vector<double> read_scores_csv(const std::string& path, std::size_t expected_rows) {
  const CsvTable table = read_csv(path);
  const int col = table.require_column("score");
  const int row_col = table.require_column("row");
  std::vector<double> scores(table.rows.size());
  if (scores.size() != expected_rows) {
    throw data_error(path + ": has " + std::to_string(scores.size()) + " scores, split has " +
                     std::to_string(expected_rows) + " records");
  }
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const long row = parse_int_cell(table.rows[r][static_cast<std::size_t>(row_col)], path, r + 2, "row");
    if (row < 0 || static_cast<std::size_t>(row) >= expected_rows) {
      throw data_error(path + ": row index " + std::to_string(row) + " out of range");
    }
    scores[static_cast<std::size_t>(row)] =
        parse_double_cell(table.rows[r][static_cast<std::size_t>(col)], path, r + 2, "score");
  }
  return scores;
}

void write_scores_csv(const std::string& path, const std::vector<TraderRecord>& records,
                      const std::vector<double>& scores) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  out << "row,account_id,period,score\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << i << ',' << records[i].account_id << ',' << records[i].period << ',' << format_double(scores[i])
        << '\n';
  }
}

// --- subcommand bodies ------------------------------------------------------

int run_synth(const CommonOptions& common, const std::string& out_dir, std::size_t n_traders,
              std::size_t trades, double alpha, const std::string& hash) {
  SynthConfig cfg;
  cfg.n_traders = n_traders;
  cfg.trades_per_trader = trades;
  cfg.seed = common.seed;
  cfg.alpha = alpha;
  SynthResult result = generate_synthetic(cfg);
  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << '\n';
  result.schema.seed = common.seed;
  result.schema.config_hash = hash;
  fs::create_directories(out_dir);
  write_records_csv((fs::path(out_dir) / "raw.csv").string(), result.records, result.schema);
  write_schema_json((fs::path(out_dir) / "schema.json").string(), result.schema);
  write_run_meta(out_dir, "synth", common.seed, hash);
  std::cout << "synth: " << result.records.size() << " records, "
            << [&] {
                 int p = 0;
                 for (const auto& r : result.records) p += r.label;
                 return p;
               }()
            << " positives -> " << out_dir << '\n';
  return kExitOk;
}

int run_ingest(const CommonOptions& common, const std::string& csv_path, const std::string& schema_config,
               const std::string& out_dir, const std::string& hash) {
  const IngestConfig cfg = IngestConfig::from_json_file(schema_config);
  IngestResult result = ingest_csv(csv_path, cfg);
  result.schema.seed = common.seed;
  result.schema.config_hash = hash;
  fs::create_directories(out_dir);
  write_records_csv((fs::path(out_dir) / "raw.csv").string(), result.records, result.schema);
  write_schema_json((fs::path(out_dir) / "schema.json").string(), result.schema);
  write_run_meta(out_dir, "ingest", common.seed, hash);
  std::cout << "ingest: " << result.records.size() << " records -> " << out_dir << '\n';
  return kExitOk;
}

int run_split(const CommonOptions& common, const std::string& data_dir, const std::string& hash) {
  FeatureSchema schema = read_schema_json((fs::path(data_dir) / "schema.json").string());
  std::vector<TraderRecord> records = read_records_csv((fs::path(data_dir) / "raw.csv").string(), schema);
  SplitSpec spec;
  spec.seed = common.seed;
  SplitResult split = split_dataset(records, spec);
  fit_normalization(schema, split.train);
  apply_normalization(schema, split.train);
  apply_normalization(schema, split.validation);
  apply_normalization(schema, split.test);
  schema.seed = common.seed;
  schema.config_hash = hash;
  write_records_csv((fs::path(data_dir) / "train.csv").string(), split.train, schema);
  write_records_csv((fs::path(data_dir) / "valid.csv").string(), split.validation, schema);
  write_records_csv((fs::path(data_dir) / "test.csv").string(), split.test, schema);
  write_schema_json((fs::path(data_dir) / "schema.json").string(), schema);
  write_run_meta(data_dir, "split", common.seed, hash);
  std::cout << "split: train " << split.train.size() << ", valid " << split.validation.size() << ", test "
            << split.test.size() << '\n';
  return kExitOk;
}

int run_group(const CommonOptions& common, const std::string& data_dir, std::size_t group_size,
              std::size_t test_group_size, bool exhaustive, const std::string& hash) {
  DatasetDir data = read_dataset_dir(data_dir);
  const auto train_groups =
      allocate_groups(data.train, data.schema, group_size, GroupMode::kTrain, common.seed);
  const auto test_groups = allocate_groups(data.test, data.schema, test_group_size, GroupMode::kTest,
                                           derive_seed(common.seed, 0x7e57), exhaustive);
  write_groups_jsonl((fs::path(data_dir) / "groups_train.jsonl").string(), train_groups);
  write_groups_jsonl((fs::path(data_dir) / "groups_test.jsonl").string(), test_groups);
  write_run_meta(data_dir, "group", common.seed, hash);
  std::cout << "group: " << train_groups.size() << " train groups, " << test_groups.size()
            << " test groups\n";
  return kExitOk;
}

std::ofstream open_log(const std::string& path) {
  std::ofstream log;
  if (!path.empty()) {
    log.open(path);
    if (!log) throw data_error("cannot write log file " + path);
  }
  return log;
}

int run_pretrain(const CommonOptions& common, const std::string& data_dir, const std::string& out_path,
                 const ModelFlags& mf, TrainConfig tc, const std::string& log_path, const std::string& hash) {
  DatasetDir data = read_dataset_dir(data_dir);
  Model model(mf.to_config(data.schema), common.seed);
  tc.seed = common.seed;
  std::ofstream log = open_log(log_path);
  PretrainResult result = pretrain(model, data.train, data.validation, tc, log.is_open() ? &log : &std::cout);
  save_checkpoint(model, out_path);
  write_run_meta(fs::path(out_path).parent_path().empty() ? "." : fs::path(out_path).parent_path(),
                 "pretrain", common.seed, hash);
  std::cout << "pretrain: best validation AUC " << result.best_val_auc << " at epoch " << result.best_epoch
            << " -> " << out_path << '\n';
  return kExitOk;
}

int run_train(const CommonOptions& common, const std::string& data_dir, const std::string& out_path,
              const std::string& init_path, const ModelFlags& mf, TrainConfig tc,
              std::size_t valid_group_size, const std::string& log_path, const std::string& hash) {
  DatasetDir data = read_dataset_dir(data_dir);
  const ModelConfig model_cfg = mf.to_config(data.schema);
  Model model = init_path.empty() ? Model(model_cfg, common.seed) : load_checkpoint(init_path, model_cfg);
  const auto train_groups = read_groups_jsonl((fs::path(data_dir) / "groups_train.jsonl").string());
  const auto valid_groups = allocate_groups(data.validation, data.schema, valid_group_size, GroupMode::kTest,
                                            derive_seed(common.seed, 0xa1), /*exhaustive=*/true);
  tc.seed = common.seed;
  tc.checkpoint_path = out_path;
  std::ofstream log = open_log(log_path);
  FinetuneResult result =
      finetune(model, data.train, train_groups, data.validation, valid_groups, tc, log.is_open() ? &log : &std::cout);
  write_run_meta(fs::path(out_path).parent_path().empty() ? "." : fs::path(out_path).parent_path(), "train",
                 common.seed, hash);
  std::cout << "train: best validation NDCG@10 " << result.best_val_ndcg10 << " at epoch "
            << result.best_epoch << " -> " << out_path << '\n';
  return kExitOk;
}

int run_rank(const CommonOptions& common, const std::string& data_dir, const std::string& model_path,
             const ModelFlags& mf, const std::string& split, std::size_t group_size, const std::string& out,
             const std::string& hash) {
  DatasetDir data = read_dataset_dir(data_dir);
  Model model = load_checkpoint(model_path, mf.to_config(data.schema));
  auto score_split = [&](const std::vector<TraderRecord>& records, const std::string& path) {
    const auto scores =
        score_all_records(model, records, data.schema, group_size, derive_seed(common.seed, 0x5c0e));
    write_scores_csv(path, records, scores);
  };
  fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path().string());
  if (split == "test" || split == "train" || split == "valid") {
    const auto& records = split == "test" ? data.test : split == "train" ? data.train : data.validation;
    score_split(records, out);
  } else if (split == "all") {
    // writes <out stem>_train/valid/test.csv
    const fs::path base(out);
    const std::string stem = (base.parent_path() / base.stem()).string();
    score_split(data.train, stem + "_train.csv");
    score_split(data.validation, stem + "_valid.csv");
    score_split(data.test, stem + "_test.csv");
  } else {
    throw config_error("--split must be train | valid | test | all");
  }
  write_run_meta(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path(), "rank",
                 common.seed, hash);
  std::cout << "rank: scored split '" << split << "' -> " << out << '\n';
  return kExitOk;
}

int run_eval(const CommonOptions& common, const std::string& data_dir, const std::string& scores_path,
             const std::string& valid_scores_path, bool with_prior, const std::string& out_prefix,
             const std::string& hash) {
  DatasetDir data = read_dataset_dir(data_dir);
  const auto groups = read_groups_jsonl((fs::path(data_dir) / "groups_test.jsonl").string());
  const std::vector<double> scores = read_scores_csv(scores_path, data.test.size());

  EvalReport report;
  report.with_prior = with_prior;
  report.seed = common.seed;
  report.config_hash = hash;

  std::vector<GroupMetricsRow> rows;
  const auto ranked = ranked_group_labels(data.test, groups, scores, &rows);
  report.ndcg3 = mean_ndcg(ranked, 3);
  report.ndcg5 = mean_ndcg(ranked, 5);
  report.ndcg10 = mean_ndcg(ranked, 10);
  report.mrr = mrr(ranked);

  std::vector<int> labels;
  std::vector<std::int64_t> ids;
  std::vector<double> profits;
  for (const TraderRecord& r : data.test) {
    labels.push_back(r.label);
    ids.push_back(r.account_id);
    profits.push_back(r.next_profit_20);
  }
  std::vector<int> predictions;
  if (with_prior) {
    predictions = classify_with_prior(scores, ids, data.schema.alpha / 100.0);
  } else {
    if (valid_scores_path.empty()) {
      throw config_error("--without-prior needs --valid-scores from `rank --split valid`");
    }
    const std::vector<double> valid_scores = read_scores_csv(valid_scores_path, data.validation.size());
    std::vector<int> valid_labels;
    for (const TraderRecord& r : data.validation) valid_labels.push_back(r.label);
    auto [choice, preds] = classify_without_prior(scores, valid_scores, valid_labels);
    report.threshold = choice.threshold;
    predictions = std::move(preds);
  }
  const ConfusionMetrics cm = confusion_metrics(predictions, labels);
  report.macro_f1 = cm.macro_f1;
  report.precision = cm.precision;
  report.sensitivity = cm.sensitivity;
  report.specificity = cm.specificity;
  report.tp = cm.tp;
  report.fp = cm.fp;
  report.tn = cm.tn;
  report.fn = cm.fn;
  report.pnl = pnl_metric(predictions, profits);
  report.auc = auc(scores, labels);

  std::ofstream json_out(out_prefix + ".json");
  json_out << report.to_json().dump(2) << '\n';
  std::ofstream text_out(out_prefix + ".txt");
  text_out << report.to_text();
  std::ofstream groups_out(out_prefix + "_groups.csv");
  groups_out << "group_id,ndcg3,ndcg5,ndcg10,rr\n";
  for (const GroupMetricsRow& r : rows) {
    groups_out << r.group_id << ',' << format_double(r.ndcg3) << ',' << format_double(r.ndcg5) << ','
               << format_double(r.ndcg10) << ',' << format_double(r.rr) << '\n';
  }
  std::cout << report.to_text();
  return kExitOk;
}

int run_twostep(const CommonOptions& common, const std::string& data_dir, const std::string& model_path,
                const ModelFlags& mf, std::size_t group_size, const std::string& out_dir,
                const std::string& hash) {
  DatasetDir data = read_dataset_dir(data_dir);
  Model model = load_checkpoint(model_path, mf.to_config(data.schema));
  const std::uint64_t score_seed = derive_seed(common.seed, 0x5c0e);
  const auto s_train = score_all_records(model, data.train, data.schema, group_size, score_seed);
  const auto s_valid = score_all_records(model, data.validation, data.schema, group_size, score_seed);
  const auto s_test = score_all_records(model, data.test, data.schema, group_size, score_seed);

  // baseline second step on the original features
  std::vector<double> zero_train(data.train.size(), 0.0), zero_valid(data.validation.size(), 0.0),
      zero_test(data.test.size(), 0.0);
  AugmentedDataset without = export_two_step(data.schema, data.train, zero_train, data.validation,
                                             zero_valid, data.test, zero_test, "fst_step_scores_disabled");
  AugmentedDataset with =
      export_two_step(data.schema, data.train, s_train, data.validation, s_valid, data.test, s_test);
  SecondStepResult base = second_step_classifier(without, common.seed);
  SecondStepResult lifted = second_step_classifier(with, common.seed);

  fs::create_directories(out_dir);
  write_records_csv((fs::path(out_dir) / "train.csv").string(), with.train, with.schema);
  write_records_csv((fs::path(out_dir) / "valid.csv").string(), with.validation, with.schema);
  write_records_csv((fs::path(out_dir) / "test.csv").string(), with.test, with.schema);
  write_schema_json((fs::path(out_dir) / "schema.json").string(), with.schema);

  nlohmann::json j;
  j["seed"] = common.seed;
  j["config_hash"] = hash;
  auto pack = [](const SecondStepResult& r) {
    nlohmann::json s;
    s["macro_f1"] = r.confusion.macro_f1;
    s["pnl"] = r.pnl;
    s["auc"] = r.auc_value;
    s["threshold"] = r.threshold.threshold;
    return s;
  };
  j["without_scores"] = pack(base);
  j["with_scores"] = pack(lifted);
  j["delta"] = {{"macro_f1", lifted.confusion.macro_f1 - base.confusion.macro_f1},
                {"pnl", lifted.pnl - base.pnl},
                {"auc", lifted.auc_value - base.auc_value}};
  nlohmann::json imp = nlohmann::json::array();
  for (const auto& [name, drop] : lifted.permutation_importance) {
    imp.push_back({{"feature", name}, {"mean_f1_drop", drop}});
  }
  j["permutation_importance"] = imp;
  std::ofstream out(fs::path(out_dir) / "twostep.json");
  out << j.dump(2) << '\n';
  write_run_meta(out_dir, "twostep", common.seed, hash);
  std::cout << "twostep: macro F1 " << base.confusion.macro_f1 << " -> " << lifted.confusion.macro_f1
            << ", P&L " << base.pnl << " -> " << lifted.pnl << '\n';
  return kExitOk;
}

int run_gradcheck(const CommonOptions& common, std::size_t n_seeds, std::size_t group_size, std::size_t d_k) {
  double worst = 0.0;
  std::string worst_param;
  for (std::uint64_t s = 0; s < n_seeds; ++s) {
    const std::uint64_t seed = derive_seed(common.seed, s + 1);
    Rng rng(seed);
    ModelConfig cfg;
    cfg.d_k = d_k;
    cfg.n_heads = 2;
    cfg.feedforward = 2 * d_k;
    cfg.n_self_layers = 1;
    cfg.n_cross_layers = 1;
    cfg.n_continuous = 3;
    cfg.vocab_sizes = {4};
    Model model(cfg, seed);

    std::vector<TraderRecord> records(group_size);
    std::vector<double> profits(group_size);
    for (std::size_t i = 0; i < group_size; ++i) {
      records[i].account_id = static_cast<std::int64_t>(i + 1);
      records[i].continuous = {rng.uniform(), rng.uniform(), rng.uniform()};
      records[i].categorical = {static_cast<int>(rng.uniform_index(4))};
      profits[i] = rng.uniform(-1e4, 1e4);
    }
    std::sort(profits.begin(), profits.end(), std::greater<>());

    std::vector<const TraderRecord*> members;
    for (const auto& r : records) members.push_back(&r);
    auto loss_value = [&]() {
      Graph g;
      return g.value(pa_bce_loss_node(score_group_node(g, model, members), profits)).value();
    };
    auto params = model.parameters();
    zero_gradients(params);
    {
      Graph g;
      g.backward(pa_bce_loss_node(score_group_node(g, model, members), profits));
    }
    const GradCheckReport rep = compare_gradients(params, loss_value, 1e-5);
    if (rep.max_rel_error > worst) {
      worst = rep.max_rel_error;
      worst_param = rep.worst_parameter;
    }
  }
  std::cout << "gradcheck: max relative error " << worst << " (worst at " << worst_param << ") over "
            << n_seeds << " seeds\n";
  if (!(worst < 1e-4)) {
    std::cerr << "error: numeric: gradient check failed with max relative error " << worst << '\n';
    return kExitNumericError;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"profit-aware learning-to-rank pipeline for risky-trader detection"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a calibrated synthetic dataset");
  CommonOptions synth_common;
  synth_common.register_on(synth);
  std::string synth_out = "data";
  std::size_t synth_n = 2000, synth_trades = 200;
  double synth_alpha = 1.0;
  synth->add_option("--out", synth_out, "output dataset directory");
  synth->add_option("--n", synth_n, "number of traders");
  synth->add_option("--trades", synth_trades, "trades per trader (>= 140)");
  synth->add_option("--alpha", synth_alpha, "top percentile labelled risky");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "ingest an external CSV via a schema config");
  CommonOptions ingest_common;
  ingest_common.register_on(ingest);
  std::string ingest_csv_path, ingest_schema, ingest_out = "data";
  ingest->add_option("--csv", ingest_csv_path, "input CSV file")->required();
  ingest->add_option("--schema-config", ingest_schema, "JSON schema config")->required();
  ingest->add_option("--out", ingest_out, "output dataset directory");

  // split
  auto* split = app.add_subcommand("split", "stratified train/valid/test split + normalization");
  CommonOptions split_common;
  split_common.register_on(split);
  std::string split_data = "data";
  split->add_option("--data", split_data, "dataset directory holding raw.csv");

  // group
  auto* group = app.add_subcommand("group", "allocate ranking groups");
  CommonOptions group_common;
  group_common.register_on(group);
  std::string group_data = "data";
  std::size_t group_size = 50, test_group_size = 100;
  bool exhaustive = false;
  group->add_option("--data", group_data, "dataset directory");
  group->add_option("--group-size", group_size, "training group size");
  group->add_option("--test-group-size", test_group_size, "test group size");
  group->add_flag("--exhaustive-test-groups", exhaustive, "partition whole test cells instead of sampling once");

  // shared model/train flags
  auto add_train_flags = [](CLI::App* cmd, TrainConfig& tc) {
    cmd->add_option("--epochs", tc.finetune_epochs, "fine-tuning epochs");
    cmd->add_option("--pretrain-epochs", tc.pretrain_epochs, "pretraining epochs");
    cmd->add_option("--lr", tc.learning_rate, "learning rate");
    cmd->add_option("--batch-groups", tc.batch_groups, "groups per optimizer step");
    cmd->add_option("--pretrain-batch", tc.pretrain_batch, "records per pretraining step");
    cmd->add_option("--topk", tc.top_k, "top-k sampling cutoff");
    cmd->add_option("--clip-norm", tc.clip_norm, "global gradient norm clip");
    cmd->add_option("--positive-weight", tc.positive_weight, "w-bce positive weight");
    cmd->add_flag("--mean-per-group", tc.mean_per_group, "normalize the loss by groups per batch");
  };

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "classification pretraining of the self-trader encoder");
  CommonOptions pre_common;
  pre_common.register_on(pre);
  ModelFlags pre_mf;
  pre_mf.register_on(pre);
  TrainConfig pre_tc;
  add_train_flags(pre, pre_tc);
  std::string pre_data = "data", pre_out = "pretrained.ckpt", pre_log;
  pre->add_option("--data", pre_data, "dataset directory");
  pre->add_option("--out", pre_out, "checkpoint path");
  pre->add_option("--log", pre_log, "progress log CSV (default stdout)");

  // train
  auto* train_cmd = app.add_subcommand("train", "fine-tune the full ranker on ranking groups");
  CommonOptions train_common;
  train_common.register_on(train_cmd);
  ModelFlags train_mf;
  train_mf.register_on(train_cmd);
  TrainConfig train_tc;
  add_train_flags(train_cmd, train_tc);
  std::string train_data = "data", train_out = "model.ckpt", train_init, train_log, train_loss = "pa-bce";
  std::size_t valid_group_size = 100;
  train_cmd->add_option("--data", train_data, "dataset directory");
  train_cmd->add_option("--out", train_out, "checkpoint path");
  train_cmd->add_option("--init", train_init, "warm-start checkpoint (from pretrain)");
  train_cmd->add_option("--loss", train_loss, "pa-bce | bce | w-bce | logsoftmax");
  train_cmd->add_option("--valid-group-size", valid_group_size, "validation group size");
  train_cmd->add_option("--log", train_log, "progress log CSV (default stdout)");

  // rank
  auto* rank = app.add_subcommand("rank", "score records with a trained checkpoint");
  CommonOptions rank_common;
  rank_common.register_on(rank);
  ModelFlags rank_mf;
  rank_mf.register_on(rank);
  std::string rank_data = "data", rank_model = "model.ckpt", rank_split = "test", rank_out = "scores.csv";
  std::size_t rank_group_size = 100;
  rank->add_option("--data", rank_data, "dataset directory");
  rank->add_option("--model", rank_model, "checkpoint path");
  rank->add_option("--split", rank_split, "train | valid | test | all");
  rank->add_option("--group-size", rank_group_size, "scoring group size");
  rank->add_option("--out", rank_out, "scores CSV path");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "full evaluation report from scores");
  CommonOptions eval_common;
  eval_common.register_on(eval_cmd);
  std::string eval_data = "data", eval_scores = "scores.csv", eval_valid_scores, eval_out = "report";
  bool with_prior = false, without_prior = false;
  eval_cmd->add_option("--data", eval_data, "dataset directory");
  eval_cmd->add_option("--scores", eval_scores, "test scores CSV from `rank`");
  eval_cmd->add_option("--valid-scores", eval_valid_scores, "validation scores CSV (without-prior)");
  eval_cmd->add_flag("--with-prior", with_prior, "flag the known top fraction by score");
  eval_cmd->add_flag("--without-prior", without_prior, "sigmoid + validation threshold grid search");
  eval_cmd->add_option("--out", eval_out, "report path prefix");

  // twostep
  auto* twostep = app.add_subcommand("twostep", "inject first-step scores into an interpretable classifier");
  CommonOptions twostep_common;
  twostep_common.register_on(twostep);
  ModelFlags twostep_mf;
  twostep_mf.register_on(twostep);
  std::string twostep_data = "data", twostep_model = "model.ckpt", twostep_out = "twostep";
  std::size_t twostep_group_size = 100;
  twostep->add_option("--data", twostep_data, "dataset directory");
  twostep->add_option("--model", twostep_model, "checkpoint path");
  twostep->add_option("--group-size", twostep_group_size, "scoring group size");
  twostep->add_option("--out", twostep_out, "output directory");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full-model gradient");
  CommonOptions gc_common;
  gc_common.register_on(gradcheck);
  std::size_t gc_seeds = 20, gc_group = 5, gc_dk = 8;
  gradcheck->add_option("--seeds", gc_seeds, "number of random seeds");
  gradcheck->add_option("--group-size", gc_group, "traders per group");
  gradcheck->add_option("--d-k", gc_dk, "embedding width");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return app.exit(e);  // --help
      std::cerr << "error: config: " << e.what() << '\n';
      return kExitConfigError;
    }

    if (synth->parsed()) {
      synth_common.apply_file(synth);
      return run_synth(synth_common, synth_out, synth_n, synth_trades, synth_alpha,
                       synth_common.config_hash(synth));
    }
    if (ingest->parsed()) {
      ingest_common.apply_file(ingest);
      return run_ingest(ingest_common, ingest_csv_path, ingest_schema, ingest_out,
                        ingest_common.config_hash(ingest));
    }
    if (split->parsed()) {
      split_common.apply_file(split);
      return run_split(split_common, split_data, split_common.config_hash(split));
    }
    if (group->parsed()) {
      group_common.apply_file(group);
      return run_group(group_common, group_data, group_size, test_group_size, exhaustive,
                       group_common.config_hash(group));
    }
    if (pre->parsed()) {
      pre_common.apply_file(pre);
      return run_pretrain(pre_common, pre_data, pre_out, pre_mf, pre_tc, pre_log,
                          pre_common.config_hash(pre));
    }
    if (train_cmd->parsed()) {
      train_common.apply_file(train_cmd);
      train_tc.loss = parse_loss_kind(train_loss);
      return run_train(train_common, train_data, train_out, train_init, train_mf, train_tc,
                       valid_group_size, train_log, train_common.config_hash(train_cmd));
    }
    if (rank->parsed()) {
      rank_common.apply_file(rank);
      return run_rank(rank_common, rank_data, rank_model, rank_mf, rank_split, rank_group_size, rank_out,
                      rank_common.config_hash(rank));
    }
    if (eval_cmd->parsed()) {
      eval_common.apply_file(eval_cmd);
      if (with_prior == without_prior) {
        throw config_error("choose exactly one of --with-prior / --without-prior");
      }
      return run_eval(eval_common, eval_data, eval_scores, eval_valid_scores, with_prior, eval_out,
                      eval_common.config_hash(eval_cmd));
    }
    if (twostep->parsed()) {
      twostep_common.apply_file(twostep);
      return run_twostep(twostep_common, twostep_data, twostep_model, twostep_mf, twostep_group_size,
                         twostep_out, twostep_common.config_hash(twostep));
    }
    if (gradcheck->parsed()) {
      gc_common.apply_file(gradcheck);
      return run_gradcheck(gc_common, gc_seeds, gc_group, gc_dk);
    }
    std::cerr << "error: config: no subcommand\n";
    return kExitConfigError;
  } catch (const config_error& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const data_error& e) {
    std::cerr << "error: data: " << e.what() << '\n';
    return kExitDataError;
  } catch (const numeric_error& e) {
    std::cerr << "error: numeric: " << e.what() << '\n';
    return kExitNumericError;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return kExitDataError;
  }
}
