#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "riskrank/autograd.hpp"
#include "riskrank/common.hpp"
#include "riskrank/tensor.hpp"

namespace riskrank {

enum class LossKind { kPaBce, kBce, kWeightedBce, kLogSoftmax };

inline LossKind parse_loss_kind(const std::string& name) {
  if (name == "pa-bce") return LossKind::kPaBce;
  if (name == "bce") return LossKind::kBce;
  if (name == "w-bce") return LossKind::kWeightedBce;
  if (name == "logsoftmax") return LossKind::kLogSoftmax;
  throw config_error("unknown loss '" + name + "' (expected pa-bce | bce | w-bce | logsoftmax)");
}

inline std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kPaBce: return "pa-bce";
    case LossKind::kBce: return "bce";
    case LossKind::kWeightedBce: return "w-bce";
    case LossKind::kLogSoftmax: return "logsoftmax";
  }
  return "?";
}

// Per-group gap matrices: symmetric log-profit gaps, sigmoid score gaps and
// the strict upper-triangular target.
struct GapMatrices {
  Tensor g_pnl;    // n x n, g_pnl(i,j) = ln(1 + p_i - p_j) for i<j, mirrored
  Tensor g_score;  // n x n, g_score(i,j) = sigmoid(s_i - s_j), zero diagonal
  Tensor target;   // n x n, 1 above the diagonal
};

// Profit gap matrix over profits sorted descending. Callers may pass
// unsorted profits; the applied permutation is reported so scores can be
// aligned. Natural logarithm.
inline Tensor build_pnl_gap(const std::vector<double>& profits, std::vector<std::size_t>* permutation = nullptr) {
  const std::size_t n = profits.size();
  if (n == 0) throw data_error("build_pnl_gap: empty group");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return profits[a] > profits[b]; });
  if (permutation) *permutation = order;
  Tensor gap({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double diff = profits[order[i]] - profits[order[j]];
      const double w = std::log1p(diff);
      gap.at(i, j) = w;
      gap.at(j, i) = w;
    }
  }
  return gap;
}

inline Tensor build_score_gap(const std::vector<double>& scores) {
  const std::size_t n = scores.size();
  if (n == 0) throw data_error("build_score_gap: empty group");
  Tensor gap({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      gap.at(i, j) = detail::stable_sigmoid(scores[i] - scores[j]);
    }
  }
  return gap;
}

inline Tensor build_target_matrix(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) t.at(i, j) = 1.0;
  return t;
}

inline GapMatrices build_gap_matrices(const std::vector<double>& scores, const std::vector<double>& profits) {
  if (scores.size() != profits.size()) throw data_error("gap matrices: score/profit length mismatch");
  std::vector<std::size_t> order;
  GapMatrices m;
  m.g_pnl = build_pnl_gap(profits, &order);
  std::vector<double> sorted_scores(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted_scores[i] = scores[order[i]];
  m.g_score = build_score_gap(sorted_scores);
  m.target = build_target_matrix(scores.size());
  return m;
}

// One group's contribution to the profit-aware pairwise loss, upper
// triangle only:  sum_{i<j} ln(1 + p_i - p_j) * BCE(sigmoid(s_i - s_j), 1).
// BCE against target 1 reduces to softplus(-(s_i - s_j)).
struct GroupLossInput {
  std::vector<double> scores;   // aligned with profits
  std::vector<double> profits;  // must be sorted descending
};

inline double pa_bce_loss_value(const std::vector<GroupLossInput>& groups) {
  double total = 0.0;
  for (const GroupLossInput& g : groups) {
    if (g.scores.size() != g.profits.size()) throw data_error("pa_bce_loss: score/profit length mismatch");
    const std::size_t n = g.scores.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (g.profits[i] < g.profits[i + 1]) throw data_error("pa_bce_loss: profits must be sorted descending");
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double w = std::log1p(g.profits[i] - g.profits[j]);
        total += w * detail::stable_softplus(-(g.scores[i] - g.scores[j]));
      }
    }
  }
  return total;
}

// Differentiable form over score variables recorded on a graph. scores is a
// column vector of per-trader scores aligned with profit-descending order.
inline Var pa_bce_loss_node(Var scores, const std::vector<double>& profits) {
  Graph& g = *scores.graph;
  const std::size_t n = g.value(scores).size();
  if (n != profits.size()) throw data_error("pa_bce_loss: score/profit length mismatch");
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (profits[i] < profits[i + 1]) throw data_error("pa_bce_loss: profits must be sorted descending");
  }
  Tensor weights({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) weights.at(i, j) = std::log1p(profits[i] - profits[j]);
  // D(i,j) = s_i - s_j via rank-one broadcasts, then sum W (*) softplus(-D)
  Var ones_row = g.constant(Tensor::ones({1, n}));
  Var ones_col = g.constant(Tensor::ones({n, 1}));
  Var diffs = sub(matmul(scores, ones_row), matmul(ones_col, transpose(scores)));
  return sum(mul(g.constant(std::move(weights)), softplus(neg(diffs))));
}

// Executable form of the full-matrix definition (every ordered pair i != j),
// used to exercise the 2x upper-triangle equivalence.
inline double pa_bce_loss_full_matrix(const GroupLossInput& g) {
  if (g.scores.size() != g.profits.size()) throw data_error("pa_bce_loss: score/profit length mismatch");
  const std::size_t n = g.scores.size();
  const Tensor weights = build_pnl_gap(g.profits);
  const Tensor target = build_target_matrix(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      // -[t ln sigmoid(d) + (1-t) ln(1 - sigmoid(d))] in stable logit form
      const double d = g.scores[i] - g.scores[j];
      const double bce =
          target.at(i, j) > 0.5 ? detail::stable_softplus(-d) : detail::stable_softplus(d);
      total += weights.at(i, j) * bce;
    }
  }
  return total;
}

// Keeps the k most profitable members (all when n <= k), profit-descending,
// boundary ties broken by account id ascending.
struct TopKEntry {
  std::int64_t account_id = 0;
  double profit = 0.0;
  std::size_t index = 0;  // caller's index, reported back
};

inline std::vector<TopKEntry> topk_sample(std::vector<TopKEntry> members, std::size_t k) {
  if (k < 2) throw config_error("topk_sample: k must be at least 2");
  std::sort(members.begin(), members.end(), [](const TopKEntry& a, const TopKEntry& b) {
    if (a.profit != b.profit) return a.profit > b.profit;
    return a.account_id < b.account_id;
  });
  if (members.size() > k) members.resize(k);
  return members;
}

// Pointwise BCE over logits; weight applies to positive targets only
// (weight 1 is plain BCE).
inline double bce_loss_value(const std::vector<double>& scores, const std::vector<int>& labels,
                             double positive_weight = 1.0) {
  if (scores.size() != labels.size()) throw data_error("bce_loss: score/label length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double w = labels[i] == 1 ? positive_weight : 1.0;
    total += w * detail::stable_softplus(labels[i] == 1 ? -scores[i] : scores[i]);
  }
  return total;
}

inline Var bce_loss_node(Var scores, const std::vector<int>& labels, double positive_weight = 1.0) {
  Graph& g = *scores.graph;
  const Tensor& sv = g.value(scores);
  if (sv.size() != labels.size()) throw data_error("bce_loss: score/label length mismatch");
  // w * softplus(s) for negatives, w * softplus(-s) for positives
  Tensor sign(sv.shape());
  Tensor weight(sv.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sign.at(i) = labels[i] == 1 ? -1.0 : 1.0;
    weight.at(i) = labels[i] == 1 ? positive_weight : 1.0;
  }
  return sum(mul(g.constant(std::move(weight)), softplus(mul(g.constant(std::move(sign)), scores))));
}

// Listwise -sum_{positives} ln softmax(scores). Groups without a positive
// contribute zero.
inline double logsoftmax_loss_value(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw data_error("logsoftmax_loss: score/label length mismatch");
  int positives = 0;
  for (int l : labels) positives += l;
  if (positives == 0) return 0.0;
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double den = 0.0;
  for (double s : scores) den += std::exp(s - mx);
  const double lse = mx + std::log(den);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) total += lse - scores[i];
  }
  return total;
}

inline Var logsoftmax_loss_node(Var scores, const std::vector<int>& labels) {
  Graph& g = *scores.graph;
  const Tensor& sv = g.value(scores);
  if (sv.size() != labels.size()) throw data_error("logsoftmax_loss: score/label length mismatch");
  double positives = 0.0;
  Tensor mask(sv.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    mask.at(i) = labels[i] == 1 ? 1.0 : 0.0;
    positives += mask.at(i);
  }
  if (positives == 0.0) return g.constant(Tensor::scalar(0.0));
  Var lse = logsumexp(scores);
  return sub(scale(lse, positives), sum(mul(g.constant(std::move(mask)), scores)));
}

// Ordered pairwise labels y_ij = [p_i > p_j] over all i != j split exactly
// in half when profits are pairwise distinct.
struct PairwiseBalance {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline PairwiseBalance pairwise_label_balance(const std::vector<double>& profits) {
  const std::size_t n = profits.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (profits[i] == profits[j]) {
        throw data_error("pairwise_label_balance: duplicate profit " + std::to_string(profits[i]) +
                         " at indices " + std::to_string(i) + " and " + std::to_string(j));
      }
    }
  }
  PairwiseBalance b;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      (profits[i] > profits[j] ? b.positives : b.negatives) += 1;
    }
  }
  return b;
}

}  // namespace riskrank
