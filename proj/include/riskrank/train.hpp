#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "riskrank/autograd.hpp"
#include "riskrank/common.hpp"
#include "riskrank/data.hpp"
#include "riskrank/eval.hpp"
#include "riskrank/loss.hpp"
#include "riskrank/model.hpp"
#include "riskrank/optim.hpp"

namespace riskrank {

struct TrainConfig {
  std::size_t pretrain_epochs = 50;
  std::size_t finetune_epochs = 200;
  double learning_rate = 1e-4;
  std::size_t batch_groups = 32;      // ranking groups per optimizer step
  std::size_t pretrain_batch = 128;   // records per optimizer step
  LossKind loss = LossKind::kPaBce;
  std::size_t top_k = 20;
  double positive_weight = 2.0;       // w-bce only
  double clip_norm = 5.0;
  bool mean_per_group = false;        // scale the pair-sum loss by groups per batch
  std::size_t pretrain_patience = 10; // epochs without validation AUC improvement
  std::uint64_t seed = 0;
  std::string checkpoint_path;

  void validate() const {
    if (finetune_epochs < 1 || pretrain_epochs < 1) throw config_error("train config: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw config_error("train config: learning rate must be positive");
    if (batch_groups < 1 || pretrain_batch < 1) throw config_error("train config: batch size must be >= 1");
  }
};

namespace detail {

inline std::vector<Tensor> snapshot_values(Model& model) {
  std::vector<Tensor> out;
  out.reserve(model.raw_parameters().size());
  for (const Parameter& p : model.raw_parameters()) out.push_back(p.value);
  return out;
}

inline void restore_values(Model& model, const std::vector<Tensor>& snapshot) {
  auto& params = model.raw_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = snapshot[i];
}

inline double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

inline std::vector<double> trader_summary_values(Model& model, const TraderRecord& record) {
  Graph g;
  return g.value(trader_summary(g, model, record)).data();
}

// Mean ranking metrics over groups, scoring each group with the current
// model; groups without positives are skipped.
struct RankingEval {
  double ndcg3 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0, mrr = 0.0;
  std::size_t groups_counted = 0;
};

inline RankingEval evaluate_groups(Model& model, const std::vector<TraderRecord>& records,
                                   const std::vector<RankingGroup>& groups) {
  RankingEval out;
  for (const RankingGroup& g : groups) {
    bool any = false;
    for (std::size_t m : g.members) any |= records[m].label == 1;
    if (!any) continue;
    std::vector<const TraderRecord*> members;
    members.reserve(g.members.size());
    for (std::size_t m : g.members) members.push_back(&records[m]);
    const std::vector<double> scores = score_group(model, members);
    std::vector<std::size_t> order(members.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return members[a]->account_id < members[b]->account_id;
    });
    std::vector<int> labels;
    labels.reserve(order.size());
    for (std::size_t i : order) labels.push_back(members[i]->label);
    out.ndcg3 += ndcg_at_k(labels, 3);
    out.ndcg5 += ndcg_at_k(labels, 5);
    out.ndcg10 += ndcg_at_k(labels, 10);
    out.mrr += reciprocal_rank(labels);
    out.groups_counted += 1;
  }
  if (out.groups_counted == 0) throw data_error("evaluate_groups: no group contains a positive");
  const double n = static_cast<double>(out.groups_counted);
  out.ndcg3 /= n;
  out.ndcg5 /= n;
  out.ndcg10 /= n;
  out.mrr /= n;
  return out;
}

// Per-record scores for a whole split: partitions each (market, period) cell
// exhaustively so every record is scored exactly once within group context.
inline std::vector<double> score_all_records(Model& model, const std::vector<TraderRecord>& records,
                                             const FeatureSchema& schema, std::size_t group_size,
                                             std::uint64_t seed) {
  const std::vector<RankingGroup> groups =
      allocate_groups(records, schema, group_size, GroupMode::kTest, seed, /*exhaustive=*/true);
  std::vector<double> scores(records.size(), 0.0);
  for (const RankingGroup& g : groups) {
    std::vector<const TraderRecord*> members;
    members.reserve(g.members.size());
    for (std::size_t m : g.members) members.push_back(&records[m]);
    const std::vector<double> s = score_group(model, members);
    for (std::size_t i = 0; i < g.members.size(); ++i) scores[g.members[i]] = s[i];
  }
  return scores;
}

struct PretrainEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_auc = 0.0;
  double seconds = 0.0;
};

struct PretrainResult {
  std::vector<PretrainEpoch> history;
  double best_val_auc = 0.0;
  std::size_t best_epoch = 0;
};

// Step one of the training strategy: the embeddings, CLS token and self
// encoder learn the risky/normal classification task through a temporary
// scalar head. The head is discarded; everything upstream is retained.
inline PretrainResult pretrain(Model& model, const std::vector<TraderRecord>& train,
                               const std::vector<TraderRecord>& validation, const TrainConfig& config,
                               std::ostream* log = nullptr) {
  config.validate();
  bool has_positive = false;
  for (const TraderRecord& r : train) has_positive |= r.label == 1;
  if (!has_positive) throw data_error("pretrain: no positive labels in training data");

  const std::size_t d = model.config().d_k;
  Rng init_rng(derive_seed(config.seed, 0x9ead));
  Tensor head_w({d, 1});
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i) head_w.at(i) = init_rng.uniform(-bound, bound);
  Parameter head("pretrain_head_w", std::move(head_w));
  Parameter head_bias("pretrain_head_b", Tensor({1}));

  std::vector<Parameter*> params = model.pretraining_parameters();
  params.push_back(&head);
  params.push_back(&head_bias);
  OptimizerState opt = OptimizerState::create(params, config.learning_rate);

  auto validation_auc = [&]() {
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(validation.size());
    for (const TraderRecord& r : validation) {
      const std::vector<double> cls = trader_summary_values(model, r);
      double z = head_bias.value.at(0);
      for (std::size_t i = 0; i < d; ++i) z += cls[i] * head.value.at(i);
      scores.push_back(z);
      labels.push_back(r.label);
    }
    return auc(scores, labels);
  };

  PretrainResult result;
  std::vector<Tensor> best = detail::snapshot_values(model);
  double best_auc = -1.0;
  std::size_t best_epoch = 0, since_best = 0;
  Rng shuffle_rng(derive_seed(config.seed, 0x9ead, 1));
  if (log) (*log) << "epoch,loss,val_auc,seconds\n";

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t off = 0; off < order.size(); off += config.pretrain_batch) {
      const std::size_t end = std::min(order.size(), off + config.pretrain_batch);
      Graph g;
      std::vector<Var> summaries;
      std::vector<int> labels;
      summaries.reserve(end - off);
      for (std::size_t i = off; i < end; ++i) {
        summaries.push_back(trader_summary(g, model, train[order[i]]));
        labels.push_back(train[order[i]].label);
      }
      Var logits = add_rowvec(matmul(stack_rows(summaries), g.param(head)), g.param(head_bias));
      Var loss = bce_loss_node(logits, labels);
      epoch_loss += g.value(loss).value();
      zero_gradients(params);
      g.backward(loss);
      clip_global_norm(params, config.clip_norm);
      adam_step(params, opt);
    }
    const double val_auc = validation.empty() ? 0.0 : validation_auc();
    const double secs = detail::elapsed_seconds(start);
    result.history.push_back(PretrainEpoch{epoch, epoch_loss, val_auc, secs});
    if (log) (*log) << epoch << ',' << epoch_loss << ',' << val_auc << ',' << secs << '\n';
    if (val_auc > best_auc) {
      best_auc = val_auc;
      best_epoch = epoch;
      best = detail::snapshot_values(model);
      since_best = 0;
    } else if (++since_best >= config.pretrain_patience) {
      break;
    }
  }
  detail::restore_values(model, best);
  result.best_val_auc = best_auc;
  result.best_epoch = best_epoch;
  return result;
}

struct FinetuneEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_ndcg10 = 0.0;
  double val_mrr = 0.0;
  double seconds = 0.0;
};

struct FinetuneResult {
  std::vector<FinetuneEpoch> history;
  double best_val_ndcg10 = 0.0;
  std::size_t best_epoch = 0;
};

namespace detail {

// Loss-ready view of one allocated group: members profit-descending, then
// truncated to the top-k most profitable.
struct PreparedGroup {
  std::vector<std::size_t> members;     // record indices, profit-descending
  std::vector<double> profits;
  std::vector<int> labels;
};

inline std::vector<PreparedGroup> prepare_groups(const std::vector<TraderRecord>& records,
                                                 const std::vector<RankingGroup>& groups, std::size_t top_k) {
  std::vector<PreparedGroup> out;
  out.reserve(groups.size());
  for (const RankingGroup& g : groups) {
    std::vector<TopKEntry> entries;
    entries.reserve(g.members.size());
    for (std::size_t m : g.members) {
      entries.push_back(TopKEntry{records[m].account_id, records[m].next_total_pl, m});
    }
    const std::vector<TopKEntry> kept = topk_sample(std::move(entries), top_k);
    if (kept.size() < 2) continue;  // a pairwise loss needs at least one pair
    PreparedGroup pg;
    for (const TopKEntry& e : kept) {
      pg.members.push_back(e.index);
      pg.profits.push_back(e.profit);
      pg.labels.push_back(records[e.index].label);
    }
    out.push_back(std::move(pg));
  }
  return out;
}

inline Var group_loss_node(Graph& g, Model& model, const PreparedGroup& group,
                           const std::vector<TraderRecord>& records, const TrainConfig& config,
                           const DropoutContext& dropout) {
  std::vector<const TraderRecord*> members;
  members.reserve(group.members.size());
  for (std::size_t m : group.members) members.push_back(&records[m]);
  Var scores = score_group_node(g, model, members, dropout);
  switch (config.loss) {
    case LossKind::kPaBce: return pa_bce_loss_node(scores, group.profits);
    case LossKind::kBce: return bce_loss_node(scores, group.labels);
    case LossKind::kWeightedBce: return bce_loss_node(scores, group.labels, config.positive_weight);
    case LossKind::kLogSoftmax: return logsoftmax_loss_node(scores, group.labels);
  }
  throw config_error("unknown loss kind");
}

}  // namespace detail

// Step two: the full model (embeddings, both encoders and the scoring head)
// trains on ranking groups with the configured loss. Validation NDCG@10
// selects the retained checkpoint, so the result is never worse on that
// metric than the final epoch.
inline FinetuneResult finetune(Model& model, const std::vector<TraderRecord>& train_records,
                               const std::vector<RankingGroup>& train_groups,
                               const std::vector<TraderRecord>& validation_records,
                               const std::vector<RankingGroup>& validation_groups, const TrainConfig& config,
                               std::ostream* log = nullptr) {
  config.validate();
  if (train_groups.empty()) throw data_error("finetune: empty group list");
  const std::vector<detail::PreparedGroup> prepared =
      detail::prepare_groups(train_records, train_groups, config.top_k);
  if (prepared.empty()) throw data_error("finetune: no group has at least two members after top-k");

  std::vector<Parameter*> params = model.parameters();
  OptimizerState opt = OptimizerState::create(params, config.learning_rate);
  Rng shuffle_rng(derive_seed(config.seed, 0xf17e));
  Rng dropout_rng(derive_seed(config.seed, 0xf17e, 2));

  FinetuneResult result;
  std::vector<Tensor> best = detail::snapshot_values(model);
  double best_ndcg = -1.0;
  std::size_t best_epoch = 0;
  if (log) (*log) << "epoch,loss,val_ndcg10,val_mrr,seconds\n";

  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.finetune_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t off = 0; off < order.size(); off += config.batch_groups) {
      const std::size_t end = std::min(order.size(), off + config.batch_groups);
      Graph g;
      DropoutContext dropout{&dropout_rng, model.config().dropout};
      Var batch_loss = g.constant(Tensor::scalar(0.0));
      for (std::size_t i = off; i < end; ++i) {
        batch_loss = add(batch_loss, detail::group_loss_node(g, model, prepared[order[i]], train_records,
                                                             config, dropout));
      }
      if (config.mean_per_group) {
        batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - off));
      }
      epoch_loss += g.value(batch_loss).value();
      zero_gradients(params);
      g.backward(batch_loss);
      clip_global_norm(params, config.clip_norm);
      adam_step(params, opt);
    }
    double val_ndcg10 = 0.0, val_mrr = 0.0;
    if (!validation_groups.empty()) {
      const RankingEval ev = evaluate_groups(model, validation_records, validation_groups);
      val_ndcg10 = ev.ndcg10;
      val_mrr = ev.mrr;
    }
    const double secs = detail::elapsed_seconds(start);
    result.history.push_back(FinetuneEpoch{epoch, epoch_loss, val_ndcg10, val_mrr, secs});
    if (log) (*log) << epoch << ',' << epoch_loss << ',' << val_ndcg10 << ',' << val_mrr << ',' << secs << '\n';
    // without validation groups, the final epoch is retained
    if (validation_groups.empty() || val_ndcg10 > best_ndcg) {
      best_ndcg = val_ndcg10;
      best_epoch = epoch;
      best = detail::snapshot_values(model);
    }
  }
  detail::restore_values(model, best);
  result.best_val_ndcg10 = best_ndcg;
  result.best_epoch = best_epoch;
  if (!config.checkpoint_path.empty()) save_checkpoint(model, config.checkpoint_path);
  return result;
}

}  // namespace riskrank
