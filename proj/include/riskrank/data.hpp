#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "riskrank/common.hpp"

namespace riskrank {

// One trader-period row. Continuous features are min-max scaled to [0,1]
// once a fitted schema has been applied.
struct TraderRecord {
  std::int64_t account_id = 0;
  int period = 0;
  std::vector<double> continuous;
  std::vector<int> categorical;
  double next_total_pl = 0.0;   // P&L of the next 100 trades
  double next_profit_20 = 0.0;  // P&L of the next 20 trades
  double future_return = 0.0;   // margin-weighted return backing the label
  int label = 0;
};

struct FeatureSchema {
  std::vector<std::string> continuous_names;
  std::vector<std::string> categorical_names;
  std::vector<int> vocab_sizes;  // aligned with categorical_names
  int market_feature = -1;       // index into categorical_names; -1 = single market
  std::vector<double> norm_lo;   // fitted min-max bounds, empty until fit
  std::vector<double> norm_hi;
  double alpha = 1.0;  // labeling percentile
  std::uint64_t seed = 0;
  std::string config_hash;

  std::size_t feature_count() const { return continuous_names.size() + categorical_names.size(); }
  bool normalization_fitted() const { return norm_lo.size() == continuous_names.size(); }

  void validate_record(const TraderRecord& r) const {
    if (r.continuous.size() != continuous_names.size() || r.categorical.size() != categorical_names.size()) {
      throw data_error("record feature counts do not match schema");
    }
    for (std::size_t j = 0; j < r.categorical.size(); ++j) {
      if (r.categorical[j] < 0 || r.categorical[j] >= vocab_sizes[j]) {
        throw data_error("categorical value " + std::to_string(r.categorical[j]) + " out of vocabulary for " +
                         categorical_names[j]);
      }
    }
  }
};

inline int market_of(const TraderRecord& r, const FeatureSchema& schema) {
  if (schema.market_feature < 0) return 0;
  return r.categorical[static_cast<std::size_t>(schema.market_feature)];
}

struct Trade {
  double pnl = 0.0;
  double margin = 0.0;
};

// Per-account trade history; margins are strictly positive by construction.
class TradeLedger {
 public:
  void add(std::int64_t account, double pnl, double margin) {
    if (!(margin > 0.0)) {
      throw data_error("ledger: non-positive margin for account " + std::to_string(account));
    }
    accounts_[account].push_back(Trade{pnl, margin});
  }

  bool has(std::int64_t account) const { return accounts_.count(account) != 0; }

  const std::vector<Trade>& trades(std::int64_t account) const {
    auto it = accounts_.find(account);
    if (it == accounts_.end()) throw data_error("ledger: unknown account " + std::to_string(account));
    return it->second;
  }

  const std::map<std::int64_t, std::vector<Trade>>& accounts() const { return accounts_; }

 private:
  std::map<std::int64_t, std::vector<Trade>> accounts_;
};

// Future return after `trade_index` completed trades: sum of the next
// `window` P&Ls over the sum of the matching margins.
inline double compute_return(const TradeLedger& ledger, std::int64_t account, std::size_t trade_index,
                             std::size_t window) {
  const std::vector<Trade>& ts = ledger.trades(account);
  if (trade_index + window > ts.size()) {
    throw data_error("compute_return: account " + std::to_string(account) + " has only " +
                     std::to_string(ts.size() - std::min(ts.size(), trade_index)) + " future trades, need " +
                     std::to_string(window));
  }
  double pnl = 0.0, margin = 0.0;
  for (std::size_t k = trade_index; k < trade_index + window; ++k) {
    pnl += ts[k].pnl;
    margin += ts[k].margin;
  }
  if (margin == 0.0) throw data_error("compute_return: zero total margin");
  return pnl / margin;
}

struct ReturnEntry {
  std::int64_t account_id = 0;
  std::size_t trade_index = 0;
  double value = 0.0;
};

// Marks exactly ceil(alpha/100 * N) entries as positive: those with the
// highest returns, ties at the cutoff broken by (account, trade index)
// ascending. Returns labels aligned with the input order.
inline std::vector<int> assign_labels(const std::vector<ReturnEntry>& returns, double alpha) {
  if (returns.empty()) throw data_error("assign_labels: empty input");
  if (!(alpha > 0.0) || !(alpha < 100.0)) throw config_error("assign_labels: alpha must be in (0,100)");
  const std::size_t n = returns.size();
  const std::size_t n_pos = static_cast<std::size_t>(std::ceil(alpha / 100.0 * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (returns[a].value != returns[b].value) return returns[a].value > returns[b].value;
    if (returns[a].account_id != returns[b].account_id) return returns[a].account_id < returns[b].account_id;
    return returns[a].trade_index < returns[b].trade_index;
  });
  std::vector<int> labels(n, 0);
  for (std::size_t i = 0; i < n_pos && i < n; ++i) labels[order[i]] = 1;
  return labels;
}

struct SplitSpec {
  double train_fraction = 0.70;
  double validation_fraction = 0.10;
  double test_fraction = 0.20;
  double minority_ratio = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (std::fabs(train_fraction + validation_fraction + test_fraction - 1.0) > 1e-9) {
      throw config_error("split fractions must sum to 1");
    }
    if (!(minority_ratio > 0.0) || !(minority_ratio < 1.0)) {
      throw config_error("minority ratio must lie in (0,1)");
    }
  }
};

struct SplitResult {
  std::vector<TraderRecord> train;
  std::vector<TraderRecord> validation;
  std::vector<TraderRecord> test;
};

namespace detail {

// Largest-remainder apportionment of n items to the three splits. With
// min_one set, every split receives at least one item (requires n >= 3).
inline std::array<std::size_t, 3> allocate_counts(std::size_t n, const SplitSpec& spec, bool min_one) {
  const double fracs[3] = {spec.train_fraction, spec.validation_fraction, spec.test_fraction};
  std::array<std::size_t, 3> counts{};
  double remainders[3];
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = fracs[s] * static_cast<double>(n);
    counts[s] = static_cast<std::size_t>(std::floor(exact));
    remainders[s] = exact - std::floor(exact);
    assigned += counts[s];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s) {
      if (remainders[s] > remainders[best]) best = s;
    }
    counts[best] += 1;
    remainders[best] = -1.0;
    ++assigned;
  }
  if (min_one && n >= 3) {
    for (int s = 0; s < 3; ++s) {
      while (counts[s] == 0) {
        int largest = 0;
        for (int t = 1; t < 3; ++t) {
          if (counts[t] > counts[largest]) largest = t;
        }
        counts[largest] -= 1;
        counts[s] += 1;
      }
    }
  }
  return counts;
}

}  // namespace detail

// Stratified 70/10/20 split holding the positive fraction at the minority
// ratio (within one record) in every split. The over-represented class is
// downsampled; dropped records are discarded.
inline SplitResult split_dataset(const std::vector<TraderRecord>& records, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (records[i].label == 1 ? pos : neg).push_back(i);
  }
  if (pos.empty()) throw data_error("split_dataset: no positive records");

  Rng rng(derive_seed(spec.seed, 0x51ULL));
  rng.shuffle(pos);
  rng.shuffle(neg);

  const auto pos_counts = detail::allocate_counts(pos.size(), spec, /*min_one=*/true);
  const auto neg_counts = detail::allocate_counts(neg.size(), spec, /*min_one=*/false);

  SplitResult out;
  std::size_t pos_off = 0, neg_off = 0;
  for (int s = 0; s < 3; ++s) {
    std::vector<std::size_t> p(pos.begin() + static_cast<long>(pos_off),
                               pos.begin() + static_cast<long>(pos_off + pos_counts[s]));
    std::vector<std::size_t> g(neg.begin() + static_cast<long>(neg_off),
                               neg.begin() + static_cast<long>(neg_off + neg_counts[s]));
    pos_off += pos_counts[s];
    neg_off += neg_counts[s];
    if (p.empty()) throw data_error("split_dataset: a split received no positive records");

    // enforce minority ratio by trimming whichever class is over-represented
    const double r = spec.minority_ratio;
    const std::size_t max_pos =
        static_cast<std::size_t>(std::llround(r * static_cast<double>(g.size()) / (1.0 - r)));
    if (p.size() > max_pos + 1 && max_pos >= 1) {
      p.resize(max_pos);
    } else {
      const std::size_t max_neg =
          static_cast<std::size_t>(std::llround(static_cast<double>(p.size()) * (1.0 - r) / r));
      if (g.size() > max_neg + 1) g.resize(max_neg);
    }

    std::vector<std::size_t> merged;
    merged.reserve(p.size() + g.size());
    merged.insert(merged.end(), p.begin(), p.end());
    merged.insert(merged.end(), g.begin(), g.end());
    std::sort(merged.begin(), merged.end());  // stable on-disk order
    std::vector<TraderRecord>& dst = (s == 0 ? out.train : s == 1 ? out.validation : out.test);
    dst.reserve(merged.size());
    for (std::size_t idx : merged) dst.push_back(records[idx]);
  }
  return out;
}

// The unit of loss and metric computation: members index into the split the
// group was allocated from.
struct RankingGroup {
  std::int64_t group_id = 0;
  int market = 0;
  int period = 0;
  std::vector<std::size_t> members;
};

enum class GroupMode { kTrain, kTest };

// Ranking group allocation. Train mode draws one risky plus up to
// group_size-1 normal members per group, repeating while both pools are
// non-empty; leftovers are discarded. Test mode draws a single group of
// min(cell, group_size-1) per cell, or partitions the whole cell into chunks
// of at most group_size when exhaustive is set.
inline std::vector<RankingGroup> allocate_groups(const std::vector<TraderRecord>& records,
                                                 const FeatureSchema& schema, std::size_t group_size,
                                                 GroupMode mode, std::uint64_t seed, bool exhaustive = false) {
  if (group_size < 2) throw config_error("allocate_groups: group size must be at least 2");

  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < records.size(); ++i) {
    cells[{market_of(records[i], schema), records[i].period}].push_back(i);
  }

  std::vector<RankingGroup> groups;
  std::int64_t next_id = 0;
  for (auto& [key, cell] : cells) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(key.first) + 1,
                        static_cast<std::uint64_t>(key.second) + 1));
    if (mode == GroupMode::kTrain) {
      std::vector<std::size_t> risky, normal;
      for (std::size_t idx : cell) (records[idx].label == 1 ? risky : normal).push_back(idx);
      rng.shuffle(risky);
      rng.shuffle(normal);
      std::size_t ri = 0, ni = 0;
      while (ri < risky.size() && ni < normal.size()) {
        RankingGroup grp;
        grp.group_id = next_id++;
        grp.market = key.first;
        grp.period = key.second;
        grp.members.push_back(risky[ri++]);
        const std::size_t take = std::min(normal.size() - ni, group_size - 1);
        for (std::size_t k = 0; k < take; ++k) grp.members.push_back(normal[ni++]);
        groups.push_back(std::move(grp));
      }
    } else if (!exhaustive) {
      std::vector<std::size_t> pool = cell;
      rng.shuffle(pool);
      const std::size_t take = std::min(pool.size(), group_size - 1);
      RankingGroup grp;
      grp.group_id = next_id++;
      grp.market = key.first;
      grp.period = key.second;
      grp.members.assign(pool.begin(), pool.begin() + static_cast<long>(take));
      groups.push_back(std::move(grp));
    } else {
      std::vector<std::size_t> pool = cell;
      rng.shuffle(pool);
      for (std::size_t off = 0; off < pool.size(); off += group_size) {
        const std::size_t take = std::min(group_size, pool.size() - off);
        RankingGroup grp;
        grp.group_id = next_id++;
        grp.market = key.first;
        grp.period = key.second;
        grp.members.assign(pool.begin() + static_cast<long>(off), pool.begin() + static_cast<long>(off + take));
        groups.push_back(std::move(grp));
      }
    }
  }
  return groups;
}

// Min-max bounds fitted on the training split only.
inline void fit_normalization(FeatureSchema& schema, const std::vector<TraderRecord>& train) {
  if (train.empty()) throw data_error("fit_normalization: empty training split");
  const std::size_t d = schema.continuous_names.size();
  schema.norm_lo.assign(d, 0.0);
  schema.norm_hi.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double lo = train[0].continuous[j], hi = train[0].continuous[j];
    for (const TraderRecord& r : train) {
      lo = std::min(lo, r.continuous[j]);
      hi = std::max(hi, r.continuous[j]);
    }
    schema.norm_lo[j] = lo;
    schema.norm_hi[j] = hi;
  }
}

// Zero-range features map to 0.0.
inline void apply_normalization(const FeatureSchema& schema, std::vector<TraderRecord>& records) {
  if (!schema.normalization_fitted()) throw data_error("apply_normalization: schema has no fitted bounds");
  for (TraderRecord& r : records) {
    for (std::size_t j = 0; j < schema.norm_lo.size(); ++j) {
      const double range = schema.norm_hi[j] - schema.norm_lo[j];
      r.continuous[j] = range > 0.0 ? (r.continuous[j] - schema.norm_lo[j]) / range : 0.0;
    }
  }
}

}  // namespace riskrank
