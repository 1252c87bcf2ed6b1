#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "riskrank/synth.hpp"

using namespace riskrank;

namespace {

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<double>(i);
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace

TEST(MomentMatchedBeta, RecoversTargetMoments) {
  const BetaParams p = moment_matched_beta(0.623, 0.297);
  ASSERT_TRUE(p.feasible);
  // analytic beta moments
  const double mean = p.a / (p.a + p.b);
  const double var = p.a * p.b / ((p.a + p.b) * (p.a + p.b) * (p.a + p.b + 1.0));
  EXPECT_NEAR(mean, 0.623, 1e-12);
  EXPECT_NEAR(std::sqrt(var), 0.297, 1e-12);
}

TEST(MomentMatchedBeta, InfeasibleMomentsFlagged) {
  EXPECT_FALSE(moment_matched_beta(0.5, 0.6).feasible);  // std^2 > m(1-m)
  EXPECT_FALSE(moment_matched_beta(0.0, 0.1).feasible);
}

TEST(SampleFeature, RiskyProfitRateMeanMatchesCalibration) {
  FeatureMoments m{"ProfitRate20", 0.497, 0.243, 0.623, 0.297, true};
  Rng rng(123);
  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) sum += sample_feature(m, /*risky=*/true, rng);
  EXPECT_NEAR(sum / n, 0.623, 0.01);
}

TEST(SampleFeature, NormalProfitRateMeanMatchesCalibration) {
  FeatureMoments m{"ProfitRate20", 0.497, 0.243, 0.623, 0.297, true};
  Rng rng(321);
  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) sum += sample_feature(m, /*risky=*/false, rng);
  EXPECT_NEAR(sum / n, 0.497, 0.01);
}

TEST(SampleFeature, InfeasibleFallsBackToClampedNormal) {
  FeatureMoments m{"wild", 0.5, 0.9, 0.5, 0.9, false};
  Rng rng(5);
  bool fell_back = false;
  const double v = sample_feature(m, false, rng, &fell_back);
  EXPECT_TRUE(fell_back);
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
}

TEST(GenerateSynthetic, DeterministicGivenSeed) {
  SynthConfig cfg;
  cfg.n_traders = 120;
  cfg.trades_per_trader = 140;
  cfg.seed = 7;
  SynthResult a = generate_synthetic(cfg);
  SynthResult b = generate_synthetic(cfg);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].account_id, b.records[i].account_id);
    EXPECT_EQ(a.records[i].label, b.records[i].label);
    for (std::size_t j = 0; j < a.records[i].continuous.size(); ++j) {
      EXPECT_EQ(a.records[i].continuous[j], b.records[i].continuous[j]);  // bit-identical
    }
    EXPECT_EQ(a.records[i].next_total_pl, b.records[i].next_total_pl);
    EXPECT_EQ(a.records[i].future_return, b.records[i].future_return);
  }
}

TEST(GenerateSynthetic, LabelsAreTopPercentByReturn) {
  SynthConfig cfg;
  cfg.n_traders = 300;
  cfg.trades_per_trader = 380;  // 3 records per trader
  cfg.seed = 11;
  SynthResult r = generate_synthetic(cfg);
  const std::size_t n = r.records.size();
  EXPECT_EQ(n, 300u * 3u);
  int positives = 0;
  for (const auto& rec : r.records) positives += rec.label;
  EXPECT_EQ(positives, static_cast<int>(std::ceil(0.01 * static_cast<double>(n))));
  // every positive outranks every negative on future_return
  double min_pos = 1e300, max_neg = -1e300;
  for (const auto& rec : r.records) {
    if (rec.label == 1) min_pos = std::min(min_pos, rec.future_return);
    else max_neg = std::max(max_neg, rec.future_return);
  }
  EXPECT_GE(min_pos, max_neg);
}

TEST(GenerateSynthetic, PlantedLinkGivesHighSkillProfitCorrelation) {
  SynthConfig cfg;
  cfg.n_traders = 400;
  cfg.trades_per_trader = 140;
  cfg.seed = 3;
  SynthResult r = generate_synthetic(cfg);
  std::vector<double> pl;
  pl.reserve(r.records.size());
  for (const auto& rec : r.records) pl.push_back(rec.next_total_pl);
  EXPECT_GT(spearman(r.skill, pl), 0.5);
}

TEST(GenerateSynthetic, LedgerConsistentWithRecords) {
  SynthConfig cfg;
  cfg.n_traders = 150;
  cfg.trades_per_trader = 140;
  cfg.seed = 19;
  SynthResult r = generate_synthetic(cfg);
  for (const auto& rec : r.records) {
    const std::size_t issued = 20 + 120 * (static_cast<std::size_t>(rec.period) - 1);
    const double ret = compute_return(r.ledger, rec.account_id, issued, 100);
    EXPECT_DOUBLE_EQ(ret, rec.future_return);
  }
  for (const auto& [account, trades] : r.ledger.accounts()) {
    EXPECT_EQ(trades.size(), cfg.trades_per_trader);
    for (const Trade& t : trades) EXPECT_GT(t.margin, 0.0);
  }
}

TEST(GenerateSynthetic, PreconditionsEnforced) {
  SynthConfig tiny;
  tiny.n_traders = 10;
  EXPECT_THROW(generate_synthetic(tiny), config_error);
  SynthConfig short_history;
  short_history.n_traders = 200;
  short_history.trades_per_trader = 120;
  EXPECT_THROW(generate_synthetic(short_history), config_error);
}
