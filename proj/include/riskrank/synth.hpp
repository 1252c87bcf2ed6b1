#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "riskrank/common.hpp"
#include "riskrank/data.hpp"

namespace riskrank {

// Class-conditional moments for one continuous feature.
struct FeatureMoments {
  std::string name;
  double mean_normal, std_normal;
  double mean_risky, std_risky;
  bool linked_to_skill = false;  // reordered against the latent skill score
};

// Published desk statistics for the 14 continuous behaviour features.
inline std::vector<FeatureMoments> default_calibration() {
  return {
      {"AVGPTS3_20", 0.430, 0.211, 0.588, 0.244, false},
      {"AvgOpen20", 0.535, 0.220, 0.638, 0.345, false},
      {"AvgShortSales20", 0.485, 0.270, 0.419, 0.330, false},
      {"DurationRate20", 0.320, 0.120, 0.355, 0.132, false},
      {"DurationRatio20", 0.127, 0.067, 0.166, 0.124, false},
      {"PassAvgReturn", 0.502, 0.053, 0.540, 0.121, false},
      {"ProfitRate20", 0.497, 0.243, 0.623, 0.297, true},
      {"ProfitxDur20", 0.327, 0.173, 0.422, 0.223, false},
      {"SharpeRatio20", 0.443, 0.082, 0.489, 0.127, true},
      {"WinTradeRate20", 0.623, 0.204, 0.685, 0.238, true},
      {"PerFTSE20", 0.249, 0.356, 0.157, 0.279, false},
      {"TradFQ20", 0.363, 0.292, 0.314, 0.285, false},
      {"OrderCloseRate20", 0.182, 0.263, 0.189, 0.286, false},
      {"NumTrades", 0.305, 0.326, 0.270, 0.290, false},
  };
}

struct BetaParams {
  double a = 1.0, b = 1.0;
  bool feasible = true;
};

// Moment matching on [0,1]: feasible iff std^2 < mean*(1-mean).
inline BetaParams moment_matched_beta(double mean, double stddev) {
  BetaParams p;
  const double var = stddev * stddev;
  const double bound = mean * (1.0 - mean);
  if (!(mean > 0.0) || !(mean < 1.0) || var <= 0.0 || var >= bound) {
    p.feasible = false;
    return p;
  }
  const double nu = bound / var - 1.0;
  p.a = mean * nu;
  p.b = (1.0 - mean) * nu;
  return p;
}

// One class-conditional feature draw; infeasible moments fall back to a
// clamped normal.
inline double sample_feature(const FeatureMoments& m, bool risky, Rng& rng, bool* fell_back = nullptr) {
  const double mean = risky ? m.mean_risky : m.mean_normal;
  const double sd = risky ? m.std_risky : m.std_normal;
  const BetaParams p = moment_matched_beta(mean, sd);
  if (!p.feasible) {
    if (fell_back) *fell_back = true;
    return std::clamp(mean + sd * rng.normal(), 0.0, 1.0);
  }
  return rng.beta(p.a, p.b);
}

struct SynthConfig {
  std::size_t n_traders = 2000;
  std::size_t trades_per_trader = 500;  // >= 140: 20-trade history + 100 future + 20 P&L window
  std::uint64_t seed = 7;
  double alpha = 1.0;  // top percentile labelled risky
  std::size_t n_markets = 10;
  std::size_t n_age_groups = 5;
  // Planted link: the hidden skill is the standardized sum of the linked
  // features plus this much noise; profits follow the skill.
  double skill_noise = 0.25;
  double pnl_scale = 30000.0;
  std::vector<FeatureMoments> calibration = default_calibration();
};

struct SynthResult {
  std::vector<TraderRecord> records;
  TradeLedger ledger;
  FeatureSchema schema;
  std::vector<double> skill;  // latent score, aligned with records
  std::vector<std::string> warnings;
};

// Generates a calibrated ledger plus trader-period records. Each record
// claims a disjoint 120-trade stretch (20-trade history bucket followed by
// the 100-trade future window); profits are realised in the ledger so that
// the labeling pipeline (compute_return + assign_labels) reproduces the
// planted ranking.
inline SynthResult generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n_traders < 100) throw config_error("generate_synthetic: need at least 100 traders");
  if (cfg.trades_per_trader < 140) {
    throw config_error("generate_synthetic: need at least 140 trades per trader");
  }
  const std::size_t periods = (cfg.trades_per_trader - 20) / 120;  // records per trader
  const std::size_t n_records = cfg.n_traders * periods;
  const std::size_t n_features = cfg.calibration.size();

  SynthResult out;
  out.schema.alpha = cfg.alpha;
  out.schema.seed = cfg.seed;
  for (const FeatureMoments& m : cfg.calibration) out.schema.continuous_names.push_back(m.name);
  out.schema.categorical_names = {"AgeGroup", "MarketCluster", "Segment"};
  out.schema.vocab_sizes = {static_cast<int>(cfg.n_age_groups), static_cast<int>(cfg.n_markets), 3};
  out.schema.market_feature = 1;

  Rng rng(derive_seed(cfg.seed, 0x5e, 0xed));

  // Two trader populations: the intended risky minority (top alpha% of a
  // latent draw) carries the shifted feature distributions.
  std::vector<double> latent(n_records);
  for (double& z : latent) z = rng.normal();
  const std::size_t n_intended =
      static_cast<std::size_t>(std::ceil(cfg.alpha / 100.0 * static_cast<double>(n_records)));
  std::vector<std::size_t> by_latent(n_records);
  std::iota(by_latent.begin(), by_latent.end(), 0);
  std::sort(by_latent.begin(), by_latent.end(),
            [&](std::size_t a, std::size_t b) { return latent[a] > latent[b]; });
  std::vector<char> intended_risky(n_records, 0);
  for (std::size_t i = 0; i < n_intended; ++i) intended_risky[by_latent[i]] = 1;

  // class-conditional feature draws
  bool fell_back = false;
  std::vector<std::vector<double>> features(n_records, std::vector<double>(n_features));
  for (std::size_t r = 0; r < n_records; ++r) {
    for (std::size_t f = 0; f < n_features; ++f) {
      features[r][f] = sample_feature(cfg.calibration[f], intended_risky[r] != 0, rng, &fell_back);
    }
  }
  if (fell_back) {
    out.warnings.push_back("infeasible beta moments for at least one feature; used clamped normal fallback");
  }

  // The hidden skill is the standardized sum of the linked behaviour
  // features plus noise, so profits stay predictable from the observables.
  std::vector<double> skill(n_records);
  {
    double mean = 0.0;
    for (std::size_t r = 0; r < n_records; ++r) {
      double s = 0.0;
      for (std::size_t f = 0; f < n_features; ++f) {
        if (cfg.calibration[f].linked_to_skill) s += features[r][f];
      }
      skill[r] = s;
      mean += s;
    }
    mean /= static_cast<double>(n_records);
    double var = 0.0;
    for (double s : skill) var += (s - mean) * (s - mean);
    var /= static_cast<double>(n_records);
    const double inv_sd = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    for (double& s : skill) s = (s - mean) * inv_sd;
  }

  // Ledger realisation. Record t of a trader owns trades
  // [20 + 120t - 20, 20 + 120t + 100): a 20-trade history bucket plus five
  // future 20-trade blocks whose sums realise the target window P&L. The
  // first future block doubles as the next-20-trade P&L, so it tracks the
  // window target rather than pure noise.
  out.records.reserve(n_records);
  out.skill.reserve(n_records);
  std::size_t rec_idx = 0;
  for (std::size_t trader = 0; trader < cfg.n_traders; ++trader) {
    const std::int64_t account = static_cast<std::int64_t>(trader + 1);
    const int age = static_cast<int>(rng.uniform_index(cfg.n_age_groups));

    auto emit_block = [&](double target_sum) {
      double draws[20];
      double drawn = 0.0;
      for (double& d : draws) {
        d = rng.normal() * (std::fabs(target_sum) / 40.0 + 50.0);
        drawn += d;
      }
      const double adjust = (target_sum - drawn) / 20.0;
      for (double d : draws) out.ledger.add(account, d + adjust, rng.uniform(800.0, 1200.0));
    };

    emit_block(2000.0 * rng.normal());  // shared opening history bucket
    std::size_t trades_written = 20;
    for (std::size_t t = 0; t < periods; ++t) {
      const double z_eff = skill[rec_idx] + cfg.skill_noise * rng.normal();
      const double window_target = cfg.pnl_scale * std::sinh(1.2 * z_eff);
      double realised = 0.0;
      for (std::size_t b = 0; b < 4; ++b) {
        const double noise = rng.normal() * (std::fabs(window_target) / 15.0 + 800.0);
        const double sum = window_target / 5.0 + noise;
        emit_block(sum);
        realised += sum;
      }
      emit_block(window_target - realised);  // last block closes the window exactly
      trades_written += 100;

      TraderRecord rec;
      rec.account_id = account;
      rec.period = static_cast<int>(t + 1);
      rec.continuous = features[rec_idx];
      rec.categorical = {age, static_cast<int>(rng.uniform_index(cfg.n_markets)), 0};
      const double pr = rec.continuous[6];  // ProfitRate20 drives the segment bucket
      rec.categorical[2] = pr > 0.6 ? 0 : (pr > 0.4 ? 1 : 2);
      out.records.push_back(std::move(rec));
      out.skill.push_back(skill[rec_idx]);
      ++rec_idx;

      if (t + 1 < periods) {
        emit_block(2000.0 * rng.normal());  // history bucket of the next record
        trades_written += 20;
      }
    }
    while (trades_written < cfg.trades_per_trader) {
      const std::size_t chunk = std::min<std::size_t>(20, cfg.trades_per_trader - trades_written);
      for (std::size_t k = 0; k < chunk; ++k) {
        out.ledger.add(account, 60.0 * rng.normal(), rng.uniform(800.0, 1200.0));
      }
      trades_written += chunk;
    }

    // profit fields read back from the realised ledger
    const std::vector<Trade>& ts = out.ledger.trades(account);
    for (std::size_t t = 0; t < periods; ++t) {
      const std::size_t record_at = out.records.size() - periods + t;
      TraderRecord& rec = out.records[record_at];
      const std::size_t issued = 20 + 120 * t;
      rec.future_return = compute_return(out.ledger, account, issued, 100);
      double w20 = 0.0, w100 = 0.0;
      for (std::size_t k = issued; k < issued + 20; ++k) w20 += ts[k].pnl;
      for (std::size_t k = issued; k < issued + 100; ++k) w100 += ts[k].pnl;
      rec.next_profit_20 = w20;
      rec.next_total_pl = w100;
    }
  }

  std::vector<ReturnEntry> entries;
  entries.reserve(n_records);
  for (const TraderRecord& r : out.records) {
    const std::size_t issued = 20 + 120 * (static_cast<std::size_t>(r.period) - 1);
    entries.push_back(ReturnEntry{r.account_id, issued, r.future_return});
  }
  const std::vector<int> labels = assign_labels(entries, cfg.alpha);
  for (std::size_t i = 0; i < n_records; ++i) out.records[i].label = labels[i];
  return out;
}

}  // namespace riskrank
