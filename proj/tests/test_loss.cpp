#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "riskrank/finite_diff.hpp"
#include "riskrank/loss.hpp"

using namespace riskrank;

TEST(PnlGapMatrix, DirectEvaluation) {
  Tensor gap = build_pnl_gap({10.0, 3.0});
  // ln(1 + 7) evaluated independently
  EXPECT_NEAR(gap.at(0, 1), 2.0794415416798357, 1e-14);
  EXPECT_NEAR(gap.at(1, 0), 2.0794415416798357, 1e-14);
  EXPECT_DOUBLE_EQ(gap.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(gap.at(1, 1), 0.0);
}

TEST(PnlGapMatrix, TiedPairHasZeroWeight) {
  Tensor gap = build_pnl_gap({5.0, 5.0});
  EXPECT_DOUBLE_EQ(gap.at(0, 1), 0.0);
}

TEST(PnlGapMatrix, LogTamesExtremeRange) {
  Tensor gap = build_pnl_gap({460000.0, -1000000.0});
  EXPECT_NEAR(gap.at(0, 1), 14.193947678615791, 1e-12);
  EXPECT_TRUE(gap.all_finite());
}

TEST(PnlGapMatrix, UnsortedInputSortedWithPermutationTracking) {
  std::vector<std::size_t> perm;
  Tensor gap = build_pnl_gap({3.0, 10.0, -2.0}, &perm);
  EXPECT_EQ(perm, (std::vector<std::size_t>{1, 0, 2}));
  EXPECT_NEAR(gap.at(0, 1), std::log1p(7.0), 1e-14);
  EXPECT_NEAR(gap.at(0, 2), std::log1p(12.0), 1e-14);
  EXPECT_NEAR(gap.at(1, 2), std::log1p(5.0), 1e-14);
  // symmetry and non-negative entries once sorted
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(gap.at(i, j), gap.at(j, i));
      EXPECT_GE(gap.at(i, j), 0.0);
    }
}

TEST(ScoreGapMatrix, SigmoidValuesAndAntisymmetry) {
  Tensor gap = build_score_gap({2.0, 0.0});
  EXPECT_NEAR(gap.at(0, 1), 0.8807970779778824, 1e-14);
  EXPECT_NEAR(gap.at(1, 0), 0.1192029220221176, 1e-14);
  EXPECT_NEAR(gap.at(0, 1) + gap.at(1, 0), 1.0, 1e-14);
  EXPECT_DOUBLE_EQ(gap.at(0, 0), 0.0);
}

TEST(ScoreGapMatrix, EqualScoresGiveHalf) {
  Tensor gap = build_score_gap({1.0, 1.0, 1.0});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) EXPECT_DOUBLE_EQ(gap.at(i, j), 0.5);
    }
}

TEST(ScoreGapMatrix, OffDiagonalPairsSumToOne) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(6);
    for (double& v : s) v = rng.uniform(-10.0, 10.0);
    Tensor gap = build_score_gap(s);
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j) {
        EXPECT_NEAR(gap.at(i, j) + gap.at(j, i), 1.0, 1e-12);
      }
  }
}

TEST(GapMatrices, InvariantsHoldOnRandomGroup) {
  Rng rng(77);
  std::vector<double> scores(5), profits(5);
  for (double& v : scores) v = rng.uniform(-3.0, 3.0);
  for (double& v : profits) v = rng.uniform(-1e5, 1e5);
  GapMatrices m = build_gap_matrices(scores, profits);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(m.g_pnl.at(i, i), 0.0);
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_DOUBLE_EQ(m.g_pnl.at(i, j), m.g_pnl.at(j, i));
      EXPECT_GE(m.g_pnl.at(i, j), 0.0);
      EXPECT_EQ(m.target.at(i, j), i < j ? 1.0 : 0.0);
    }
  }
}

TEST(PaBceLoss, SinglePairHandEvaluation) {
  // n=2, p=[10,3], equal scores: loss = ln(8) * (-ln 0.5)
  GroupLossInput g;
  g.scores = {0.7, 0.7};
  g.profits = {10.0, 3.0};
  EXPECT_NEAR(pa_bce_loss_value({g}), 1.4413590417546043, 1e-12);
}

TEST(PaBceLoss, TiedProfitsGiveZeroLoss) {
  GroupLossInput g;
  g.scores = {5.0, -3.0, 1.0};
  g.profits = {4.0, 4.0, 4.0};
  EXPECT_DOUBLE_EQ(pa_bce_loss_value({g}), 0.0);
}

// Executable Proposition: the full-matrix loss equals exactly twice the
// upper-triangular loss, for random groups.
TEST(PaBceLoss, FullMatrixEqualsTwiceUpperTriangle) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(9);  // n in [2,10]
    GroupLossInput g;
    g.profits.resize(n);
    g.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      g.profits[i] = rng.uniform(-1e6, 5e5);
      g.scores[i] = rng.uniform(-5.0, 5.0);
    }
    std::sort(g.profits.begin(), g.profits.end(), std::greater<>());
    const double upper = pa_bce_loss_value({g});
    const double full = pa_bce_loss_full_matrix(g);
    EXPECT_NEAR(full, 2.0 * upper, 1e-9);
  }
}

TEST(PaBceLoss, GraphAndValueFormsAgree) {
  Rng rng(5);
  GroupLossInput gi;
  gi.profits = {900.0, 120.0, 7.0, -40.0, -1500.0};
  gi.scores.resize(5);
  for (double& s : gi.scores) s = rng.uniform(-2.0, 2.0);
  Graph g;
  Var scores = g.constant(Tensor::column_vector(gi.scores));
  const double node_value = g.value(pa_bce_loss_node(scores, gi.profits)).value();
  EXPECT_NEAR(node_value, pa_bce_loss_value({gi}), 1e-10);
}

TEST(PaBceLoss, GradientMatchesFiniteDifferences) {
  Rng rng(31);
  std::vector<double> profits = {5000.0, 800.0, 10.0, -250.0, -9000.0, -20000.0};
  Tensor s0({6, 1});
  for (std::size_t i = 0; i < 6; ++i) s0.at(i) = rng.uniform(-2.0, 2.0);
  Parameter scores("scores", s0);
  auto loss = [&]() {
    Graph g;
    return g.value(pa_bce_loss_node(g.param(scores), profits)).value();
  };
  {
    Graph g;
    g.backward(pa_bce_loss_node(g.param(scores), profits));
  }
  GradCheckReport rep = compare_gradients({&scores}, loss, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

// Raising the top-profit member's score must strictly decrease the loss.
TEST(PaBceLoss, MonotoneInTopMemberScore) {
  std::vector<double> profits = {100.0, 50.0, 10.0, -30.0};
  Parameter scores("scores", Tensor::column_vector({0.1, 0.4, -0.2, 0.3}));
  {
    Graph g;
    g.backward(pa_bce_loss_node(g.param(scores), profits));
  }
  EXPECT_LT(scores.grad.at(0), 0.0);
}

TEST(PnlGapMatrix, ScaleSensitivity) {
  std::vector<double> profits = {400.0, 90.0, -20.0};
  Tensor base = build_pnl_gap(profits);
  std::vector<double> scaled;
  for (double p : profits) scaled.push_back(3.0 * p);
  Tensor big = build_pnl_gap(scaled);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      EXPECT_GT(big.at(i, j), base.at(i, j));
    }
}

TEST(TopkSample, KeepsAllWhenSmall) {
  std::vector<TopKEntry> m = {{1, 5.0, 0}, {2, 9.0, 1}, {3, -1.0, 2}, {4, 2.0, 3}, {5, 0.0, 4}};
  auto kept = topk_sample(m, 10);
  EXPECT_EQ(kept.size(), 5u);
  EXPECT_EQ(kept[0].account_id, 2);  // profit-descending
  EXPECT_EQ(kept[4].account_id, 3);
}

TEST(TopkSample, TakesLargestProfits) {
  Rng rng(4);
  std::vector<TopKEntry> m;
  for (int i = 0; i < 100; ++i) m.push_back({i, rng.uniform(-1e4, 1e4), static_cast<std::size_t>(i)});
  auto kept = topk_sample(m, 20);
  ASSERT_EQ(kept.size(), 20u);
  double cutoff = kept.back().profit;
  std::size_t larger = 0;
  for (const auto& e : m) {
    if (e.profit > cutoff) ++larger;
  }
  EXPECT_LE(larger, 20u);
  for (std::size_t i = 1; i < kept.size(); ++i) EXPECT_GE(kept[i - 1].profit, kept[i].profit);
}

TEST(TopkSample, BoundaryTiesBrokenByAccountId) {
  std::vector<TopKEntry> m = {{9, 1.0, 0}, {2, 1.0, 1}, {5, 1.0, 2}, {1, 2.0, 3}};
  auto kept = topk_sample(m, 2);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].account_id, 1);
  EXPECT_EQ(kept[1].account_id, 2);  // lowest id among the tied
}

TEST(TopkSample, RejectsKBelowTwo) {
  std::vector<TopKEntry> m = {{1, 1.0, 0}, {2, 2.0, 1}};
  EXPECT_THROW(topk_sample(m, 1), config_error);
}

TEST(BaselineLosses, SingleItemValues) {
  // t=1, s=0: BCE = -ln 0.5
  EXPECT_NEAR(bce_loss_value({0.0}, {1}), 0.6931471805599453, 1e-14);
  // weight 2 doubles it
  EXPECT_NEAR(bce_loss_value({0.0}, {1}, 2.0), 1.3862943611198906, 1e-14);
  // uniform softmax over 4 with one positive: ln 4
  EXPECT_NEAR(logsoftmax_loss_value({1.0, 1.0, 1.0, 1.0}, {0, 1, 0, 0}), 1.3862943611198906, 1e-14);
}

TEST(BaselineLosses, LogSoftmaxWithoutPositiveContributesZero) {
  EXPECT_DOUBLE_EQ(logsoftmax_loss_value({0.3, -0.2}, {0, 0}), 0.0);
}

TEST(BaselineLosses, GraphFormsMatchValuesAndFiniteDifferences) {
  Rng rng(64);
  std::vector<int> labels = {0, 1, 0, 0, 1, 0};
  Tensor s0({6, 1});
  for (std::size_t i = 0; i < 6; ++i) s0.at(i) = rng.uniform(-2.0, 2.0);

  struct Case {
    const char* name;
    std::function<Var(Graph&, Parameter&)> build;
    std::function<double(const std::vector<double>&)> value;
  };
  std::vector<double> sv(s0.data());
  std::vector<Case> cases = {
      {"bce", [&](Graph& g, Parameter& p) { return bce_loss_node(g.param(p), labels); },
       [&](const std::vector<double>& s) { return bce_loss_value(s, labels); }},
      {"w-bce", [&](Graph& g, Parameter& p) { return bce_loss_node(g.param(p), labels, 2.0); },
       [&](const std::vector<double>& s) { return bce_loss_value(s, labels, 2.0); }},
      {"logsoftmax", [&](Graph& g, Parameter& p) { return logsoftmax_loss_node(g.param(p), labels); },
       [&](const std::vector<double>& s) { return logsoftmax_loss_value(s, labels); }},
  };
  for (auto& c : cases) {
    Parameter p("s", s0);
    {
      Graph g;
      Var loss = c.build(g, p);
      EXPECT_NEAR(g.value(loss).value(), c.value(sv), 1e-10) << c.name;
      g.backward(loss);
    }
    auto loss_fn = [&]() {
      Graph g;
      return g.value(c.build(g, p)).value();
    };
    GradCheckReport rep = compare_gradients({&p}, loss_fn, 1e-5);
    EXPECT_LT(rep.max_rel_error, 1e-4) << c.name;
  }
}

// Executable Proposition: ordered pairwise labels are exactly balanced for
// distinct profits, every n in [2,50].
TEST(PairwiseLabelBalance, ExactBalanceForDistinctProfits) {
  Rng rng(911);
  for (std::size_t n = 2; n <= 50; ++n) {
    std::vector<double> profits(n);
    for (double& p : profits) p = rng.uniform(-1e6, 1e6);
    PairwiseBalance b = pairwise_label_balance(profits);
    EXPECT_EQ(b.positives, n * (n - 1) / 2);
    EXPECT_EQ(b.negatives, n * (n - 1) / 2);
  }
}

TEST(PairwiseLabelBalance, SmallCase) {
  PairwiseBalance b = pairwise_label_balance({3.0, 1.0, 2.0});
  EXPECT_EQ(b.positives, 3u);
  EXPECT_EQ(b.negatives, 3u);
}

TEST(PairwiseLabelBalance, DuplicateProfitsRejectedNamingIndices) {
  try {
    pairwise_label_balance({1.0, 2.0, 1.0});
    FAIL() << "expected data_error";
  } catch (const data_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("0"), std::string::npos);
    EXPECT_NE(msg.find("2"), std::string::npos);
  }
}

TEST(LossKind, ParseRoundTrip) {
  EXPECT_EQ(parse_loss_kind("pa-bce"), LossKind::kPaBce);
  EXPECT_EQ(parse_loss_kind("bce"), LossKind::kBce);
  EXPECT_EQ(parse_loss_kind("w-bce"), LossKind::kWeightedBce);
  EXPECT_EQ(parse_loss_kind("logsoftmax"), LossKind::kLogSoftmax);
  EXPECT_THROW(parse_loss_kind("hinge"), config_error);
  EXPECT_EQ(loss_kind_name(LossKind::kPaBce), "pa-bce");
}
