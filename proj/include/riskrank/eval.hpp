#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "riskrank/common.hpp"
#include "riskrank/data.hpp"

#include "json.hpp"

namespace riskrank {

// --- ranking metrics --------------------------------------------------------

// DCG with gain 2^rel - 1 and discount log2(i+1), binary relevance.
inline double dcg_at_k(const std::vector<int>& ranked_labels, std::size_t k) {
  double dcg = 0.0;
  const std::size_t limit = std::min(k, ranked_labels.size());
  for (std::size_t i = 0; i < limit; ++i) {
    const double gain = std::pow(2.0, static_cast<double>(ranked_labels[i])) - 1.0;
    dcg += gain / std::log2(static_cast<double>(i) + 2.0);
  }
  return dcg;
}

// NDCG of one ranked list. Lists without a positive have no ideal ordering
// and are rejected; mean helpers skip them instead.
inline double ndcg_at_k(const std::vector<int>& ranked_labels, std::size_t k) {
  if (k < 1) throw config_error("ndcg_at_k: k must be at least 1");
  std::vector<int> ideal = ranked_labels;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg_at_k(ideal, k);
  if (idcg == 0.0) throw data_error("ndcg_at_k: list has no positive label");
  return dcg_at_k(ranked_labels, k) / idcg;
}

// 1 / rank of the first positive.
inline double reciprocal_rank(const std::vector<int>& ranked_labels) {
  for (std::size_t i = 0; i < ranked_labels.size(); ++i) {
    if (ranked_labels[i] == 1) return 1.0 / static_cast<double>(i + 1);
  }
  throw data_error("reciprocal_rank: list has no positive label");
}

inline bool has_positive(const std::vector<int>& labels) {
  return std::find(labels.begin(), labels.end(), 1) != labels.end();
}

// Means over ranked groups; groups without positives are excluded.
inline double mean_ndcg(const std::vector<std::vector<int>>& groups, std::size_t k) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& g : groups) {
    if (!has_positive(g)) continue;
    total += ndcg_at_k(g, k);
    ++counted;
  }
  if (counted == 0) throw data_error("mean_ndcg: no group contains a positive");
  return total / static_cast<double>(counted);
}

inline double mrr(const std::vector<std::vector<int>>& groups) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& g : groups) {
    if (!has_positive(g)) continue;
    total += reciprocal_rank(g);
    ++counted;
  }
  if (counted == 0) throw data_error("mrr: no group contains a positive");
  return total / static_cast<double>(counted);
}

// --- financial metric -------------------------------------------------------

// Market maker P&L: unhedged trades absorb the inverse of the trader's next
// 20-trade outcome, hedged trades contribute nothing.
inline double pnl_metric(const std::vector<int>& predictions, const std::vector<double>& next_profit_20) {
  if (predictions.size() != next_profit_20.size()) throw data_error("pnl_metric: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    total += -(1.0 - static_cast<double>(predictions[i])) * next_profit_20[i];
  }
  return total;
}

// --- classification regimes -------------------------------------------------

// Flags exactly ceil(prior * N) of the highest scorers, ties by id.
inline std::vector<int> classify_with_prior(const std::vector<double>& scores,
                                            const std::vector<std::int64_t>& ids, double prior = 0.01) {
  if (scores.empty()) throw data_error("classify_with_prior: empty score set");
  if (scores.size() != ids.size()) throw data_error("classify_with_prior: score/id length mismatch");
  const std::size_t n = scores.size();
  const std::size_t n_pos = static_cast<std::size_t>(std::ceil(prior * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (ids[a] != ids[b]) return ids[a] < ids[b];
    return a < b;
  });
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n_pos && i < n; ++i) out[order[i]] = 1;
  return out;
}

struct ConfusionMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double macro_f1 = 0.0;
};

// Standard definitions over binary vectors. Macro F1 averages the positive-
// and negative-class F1 scores; 0/0 ratios resolve to 0.
inline ConfusionMetrics confusion_metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw data_error("confusion_metrics: length mismatch");
  ConfusionMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      (predictions[i] == 1 ? m.tp : m.fn) += 1;
    } else {
      (predictions[i] == 1 ? m.fp : m.tn) += 1;
    }
  }
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.sensitivity = ratio(m.tp, m.tp + m.fn);
  m.specificity = ratio(m.tn, m.tn + m.fp);
  const double f1_pos = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
  const double f1_neg = ratio(2 * m.tn, 2 * m.tn + m.fn + m.fp);
  m.macro_f1 = 0.5 * (f1_pos + f1_neg);
  return m;
}

struct ThresholdChoice {
  double threshold = 0.1;
  double validation_f1 = 0.0;
};

// Sigmoid-transforms scores, grid-searches thresholds 0.1 .. 0.9 on the
// validation set by macro F1 (smallest threshold wins ties), then applies
// the winner to the test scores.
inline std::pair<ThresholdChoice, std::vector<int>> classify_without_prior(
    const std::vector<double>& test_scores, const std::vector<double>& validation_scores,
    const std::vector<int>& validation_labels) {
  if (validation_scores.empty()) throw data_error("classify_without_prior: empty validation set");
  if (validation_scores.size() != validation_labels.size()) {
    throw data_error("classify_without_prior: validation score/label length mismatch");
  }
  auto sigmoid = [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  std::vector<double> val_probs(validation_scores.size());
  for (std::size_t i = 0; i < validation_scores.size(); ++i) val_probs[i] = sigmoid(validation_scores[i]);

  ThresholdChoice best;
  best.validation_f1 = -1.0;
  for (int step = 1; step <= 9; ++step) {
    const double threshold = 0.1 * static_cast<double>(step);
    std::vector<int> preds(val_probs.size());
    for (std::size_t i = 0; i < val_probs.size(); ++i) preds[i] = val_probs[i] >= threshold ? 1 : 0;
    const double f1 = confusion_metrics(preds, validation_labels).macro_f1;
    if (f1 > best.validation_f1) {
      best.threshold = threshold;
      best.validation_f1 = f1;
    }
  }
  std::vector<int> out(test_scores.size());
  for (std::size_t i = 0; i < test_scores.size(); ++i) out[i] = sigmoid(test_scores[i]) >= best.threshold ? 1 : 0;
  return {best, out};
}

// Rank-statistic AUC: probability a random positive outscores a random
// negative, ties counted half.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw data_error("auc: length mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw data_error("auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks over tie runs
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] == 1) rank_sum_pos += rank[t];
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// --- report -----------------------------------------------------------------

struct GroupMetricsRow {
  std::int64_t group_id = 0;
  double ndcg3 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0, rr = 0.0;
};

struct EvalReport {
  double ndcg3 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
  double mrr = 0.0;
  double pnl = 0.0;
  double macro_f1 = 0.0;
  double auc = 0.0;
  double precision = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  bool with_prior = true;
  std::optional<double> threshold;  // without-prior only
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["ndcg@3"] = ndcg3;
    j["ndcg@5"] = ndcg5;
    j["ndcg@10"] = ndcg10;
    j["mrr"] = mrr;
    j["pnl"] = pnl;
    j["macro_f1"] = macro_f1;
    j["auc"] = auc;
    j["precision"] = precision;
    j["sensitivity"] = sensitivity;
    j["specificity"] = specificity;
    j["regime"] = with_prior ? "with-prior" : "without-prior";
    if (threshold) j["threshold"] = *threshold;
    j["counts"] = {{"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn}};
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    auto line = [&](const std::string& name, double v) {
      os << name;
      for (std::size_t i = name.size(); i < 14; ++i) os << ' ';
      os << v << '\n';
    };
    os << "regime        " << (with_prior ? "with-prior" : "without-prior") << '\n';
    line("ndcg@3", ndcg3);
    line("ndcg@5", ndcg5);
    line("ndcg@10", ndcg10);
    line("mrr", mrr);
    line("pnl", pnl);
    line("macro_f1", macro_f1);
    line("auc", auc);
    line("precision", precision);
    line("sensitivity", sensitivity);
    line("specificity", specificity);
    if (threshold) line("threshold", *threshold);
    os << "counts        tp=" << tp << " fp=" << fp << " tn=" << tn << " fn=" << fn << '\n';
    return os.str();
  }
};

// Orders each group's members by score (descending, ties by account id) and
// returns the label lists plus per-group metric rows for groups that contain
// a positive.
inline std::vector<std::vector<int>> ranked_group_labels(const std::vector<TraderRecord>& records,
                                                         const std::vector<RankingGroup>& groups,
                                                         const std::vector<double>& scores,
                                                         std::vector<GroupMetricsRow>* rows = nullptr) {
  if (scores.size() != records.size()) throw data_error("ranked_group_labels: score/record length mismatch");
  std::vector<std::vector<int>> out;
  out.reserve(groups.size());
  for (const RankingGroup& g : groups) {
    std::vector<std::size_t> members = g.members;
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return records[a].account_id < records[b].account_id;
    });
    std::vector<int> labels;
    labels.reserve(members.size());
    for (std::size_t m : members) labels.push_back(records[m].label);
    if (rows && has_positive(labels)) {
      rows->push_back(GroupMetricsRow{g.group_id, ndcg_at_k(labels, 3), ndcg_at_k(labels, 5),
                                      ndcg_at_k(labels, 10), reciprocal_rank(labels)});
    }
    out.push_back(std::move(labels));
  }
  return out;
}

// --- second step: interpretable classifier ----------------------------------

struct LogisticRegressionConfig {
  double learning_rate = 0.5;
  double l2 = 1e-4;
  int iterations = 3000;
  bool balance_classes = true;  // weight positives by the class ratio
};

// L2-regularised logistic regression trained by deterministic full-batch
// gradient descent. Class balancing keeps the sigmoid outputs spread across
// the threshold grid under 99:1 imbalance. Inputs are expected roughly in
// [0,1]; categorical features go through one-hot expansion in the caller.
class LogisticRegression {
 public:
  using Config = LogisticRegressionConfig;

  void fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
           const Config& cfg = Config{}) {
    if (x.empty() || x.size() != y.size()) throw data_error("logistic regression: bad training data");
    double n_pos = 0, n_neg = 0;
    for (int l : y) (l == 1 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) throw data_error("logistic regression: single-class training data");
    const double pos_weight = cfg.balance_classes ? n_neg / n_pos : 1.0;
    const std::size_t d = x[0].size();
    weights_.assign(d, 0.0);
    bias_ = 0.0;
    const double total_weight = n_neg + pos_weight * n_pos;
    std::vector<double> grad(d);
    for (int it = 0; it < cfg.iterations; ++it) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double grad_b = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double w = y[i] == 1 ? pos_weight : 1.0;
        const double err = w * (predict_proba(x[i]) - static_cast<double>(y[i]));
        for (std::size_t j = 0; j < d; ++j) grad[j] += err * x[i][j];
        grad_b += err;
      }
      for (std::size_t j = 0; j < d; ++j) {
        weights_[j] -= cfg.learning_rate * (grad[j] / total_weight + cfg.l2 * weights_[j]);
      }
      bias_ -= cfg.learning_rate * grad_b / total_weight;
    }
  }

  double predict_proba(const std::vector<double>& features) const {
    double z = bias_;
    for (std::size_t j = 0; j < weights_.size(); ++j) z += weights_[j] * features[j];
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }

  // raw logit, usable with the sigmoid-based threshold search
  double decision(const std::vector<double>& features) const {
    double z = bias_;
    for (std::size_t j = 0; j < weights_.size(); ++j) z += weights_[j] * features[j];
    return z;
  }

  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }

 private:
  std::vector<double> weights_;
  double bias_ = 0.0;
};

// Designs a flat numeric matrix from records: continuous features followed
// by one-hot encoded categorical features.
inline std::vector<std::vector<double>> design_matrix(const std::vector<TraderRecord>& records,
                                                      const FeatureSchema& schema) {
  std::size_t width = schema.continuous_names.size();
  for (int s : schema.vocab_sizes) width += static_cast<std::size_t>(s);
  std::vector<std::vector<double>> x;
  x.reserve(records.size());
  for (const TraderRecord& r : records) {
    std::vector<double> row;
    row.reserve(width);
    row.insert(row.end(), r.continuous.begin(), r.continuous.end());
    for (std::size_t j = 0; j < r.categorical.size(); ++j) {
      for (int v = 0; v < schema.vocab_sizes[j]; ++v) row.push_back(r.categorical[j] == v ? 1.0 : 0.0);
    }
    x.push_back(std::move(row));
  }
  return x;
}

// Adds the first-step scores as one extra continuous feature, min-max
// normalized with bounds fitted on the training split only.
struct AugmentedDataset {
  FeatureSchema schema;
  std::vector<TraderRecord> train, validation, test;
};

inline AugmentedDataset export_two_step(const FeatureSchema& schema, const std::vector<TraderRecord>& train,
                                        const std::vector<double>& train_scores,
                                        const std::vector<TraderRecord>& validation,
                                        const std::vector<double>& validation_scores,
                                        const std::vector<TraderRecord>& test,
                                        const std::vector<double>& test_scores,
                                        const std::string& column_name = "fst_step_scores") {
  if (train.size() != train_scores.size() || validation.size() != validation_scores.size() ||
      test.size() != test_scores.size()) {
    throw data_error("export_two_step: score/record alignment mismatch");
  }
  double lo = train_scores.empty() ? 0.0 : train_scores[0];
  double hi = lo;
  for (double s : train_scores) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  const double range = hi - lo;
  auto scale = [&](double s) { return range > 0.0 ? (s - lo) / range : 0.0; };

  AugmentedDataset out;
  out.schema = schema;
  out.schema.continuous_names.push_back(column_name);
  if (out.schema.normalization_fitted()) {
    out.schema.norm_lo.push_back(0.0);
    out.schema.norm_hi.push_back(1.0);
  }
  auto augment = [&](const std::vector<TraderRecord>& records, const std::vector<double>& scores,
                     std::vector<TraderRecord>& dst) {
    dst = records;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].continuous.push_back(scale(scores[i]));
  };
  augment(train, train_scores, out.train);
  augment(validation, validation_scores, out.validation);
  augment(test, test_scores, out.test);
  return out;
}

struct SecondStepResult {
  std::vector<int> predictions;  // on the test split
  ThresholdChoice threshold;
  ConfusionMetrics confusion;
  double pnl = 0.0;
  double auc_value = 0.0;
  std::vector<std::pair<std::string, double>> permutation_importance;  // mean F1 drop
};

// Trains the interpretable second-step classifier with the usual threshold
// grid search. Permutation importance is the mean macro-F1 drop over
// `shuffles` shuffles of one feature column on the test split.
inline SecondStepResult second_step_classifier(const AugmentedDataset& data, std::uint64_t seed,
                                               std::size_t shuffles = 5) {
  SecondStepResult out;
  const auto x_train = design_matrix(data.train, data.schema);
  const auto x_valid = design_matrix(data.validation, data.schema);
  const auto x_test = design_matrix(data.test, data.schema);
  auto labels_of = [](const std::vector<TraderRecord>& rs) {
    std::vector<int> y;
    y.reserve(rs.size());
    for (const auto& r : rs) y.push_back(r.label);
    return y;
  };
  const std::vector<int> y_train = labels_of(data.train);
  const std::vector<int> y_valid = labels_of(data.validation);
  const std::vector<int> y_test = labels_of(data.test);

  LogisticRegression lr;
  lr.fit(x_train, y_train);

  auto decisions = [&](const std::vector<std::vector<double>>& x) {
    std::vector<double> s;
    s.reserve(x.size());
    for (const auto& row : x) s.push_back(lr.decision(row));
    return s;
  };
  const std::vector<double> valid_scores = decisions(x_valid);
  const std::vector<double> test_scores = decisions(x_test);
  auto [choice, predictions] = classify_without_prior(test_scores, valid_scores, y_valid);
  out.threshold = choice;
  out.predictions = predictions;
  out.confusion = confusion_metrics(predictions, y_test);
  std::vector<double> profits;
  profits.reserve(data.test.size());
  for (const auto& r : data.test) profits.push_back(r.next_profit_20);
  out.pnl = pnl_metric(predictions, profits);
  out.auc_value = auc(test_scores, y_test);

  // permutation importance over schema-level features (one-hot groups of a
  // categorical feature shuffle together)
  const double base_f1 = out.confusion.macro_f1;
  std::size_t col = 0;
  auto shuffled_f1 = [&](std::size_t first_col, std::size_t width, std::uint64_t key) {
    std::vector<std::vector<double>> x = x_test;
    Rng rng(derive_seed(seed, key, first_col));
    std::vector<std::size_t> perm(x.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t w = 0; w < width; ++w) x[i][first_col + w] = x_test[perm[i]][first_col + w];
    }
    std::vector<int> preds(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double p = lr.predict_proba(x[i]);
      preds[i] = p >= choice.threshold ? 1 : 0;
    }
    return confusion_metrics(preds, y_test).macro_f1;
  };
  auto record_importance = [&](const std::string& name, std::size_t width) {
    double drop = 0.0;
    for (std::size_t s = 0; s < shuffles; ++s) {
      drop += base_f1 - shuffled_f1(col, width, s + 1);
    }
    out.permutation_importance.emplace_back(name, drop / static_cast<double>(shuffles));
    col += width;
  };
  for (const std::string& name : data.schema.continuous_names) record_importance(name, 1);
  for (std::size_t j = 0; j < data.schema.categorical_names.size(); ++j) {
    record_importance(data.schema.categorical_names[j], static_cast<std::size_t>(data.schema.vocab_sizes[j]));
  }
  return out;
}

}  // namespace riskrank
