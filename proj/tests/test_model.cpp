#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "riskrank/finite_diff.hpp"
#include "riskrank/model.hpp"

using namespace riskrank;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.rank() == 2 ? t.at(i, j) : t.at(j);
  return m;
}

std::vector<double> to_vec(const Tensor& t) { return t.data(); }

Mat matmul_ref(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat layer_norm_ref(const Mat& x, const std::vector<double>& g, const std::vector<double>& b) {
  Mat out = x;
  const double eps = 1e-5;
  for (auto& row : out) {
    double mean = 0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = g[j] * (row[j] - mean) / std::sqrt(var + eps) + b[j];
    }
  }
  return out;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Direct evaluation of one pre-norm encoder block, plain loops throughout.
Mat encoder_block_ref(Model& model, const std::string& base, Mat x, std::size_t n_heads) {
  const Mat wq = to_mat(model.p(base + "wq").value);
  const Mat wk = to_mat(model.p(base + "wk").value);
  const Mat wv = to_mat(model.p(base + "wv").value);
  const Mat wo = to_mat(model.p(base + "wo").value);
  const std::size_t d = wq.size(), dh = d / n_heads;

  Mat h = layer_norm_ref(x, to_vec(model.p(base + "ln1_g").value), to_vec(model.p(base + "ln1_b").value));
  Mat q = matmul_ref(h, wq), k = matmul_ref(h, wk), v = matmul_ref(h, wv);
  Mat mixed(x.size(), std::vector<double>(d, 0.0));
  for (std::size_t head = 0; head < n_heads; ++head) {
    const std::size_t off = head * dh;
    for (std::size_t i = 0; i < x.size(); ++i) {
      // softmax(q_i . k_j / sqrt(dh)) over j
      std::vector<double> logits(x.size());
      double mx = -1e300;
      for (std::size_t j = 0; j < x.size(); ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][off + c] * k[j][off + c];
        logits[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, logits[j]);
      }
      double den = 0;
      for (double& l : logits) {
        l = std::exp(l - mx);
        den += l;
      }
      for (std::size_t j = 0; j < x.size(); ++j) {
        for (std::size_t c = 0; c < dh; ++c) mixed[i][off + c] += logits[j] / den * v[j][off + c];
      }
    }
  }
  Mat attn_out = matmul_ref(mixed, wo);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] += attn_out[i][j];

  Mat f = layer_norm_ref(x, to_vec(model.p(base + "ln2_g").value), to_vec(model.p(base + "ln2_b").value));
  Mat ff = matmul_ref(f, to_mat(model.p(base + "ff1_w").value));
  const std::vector<double> b1 = to_vec(model.p(base + "ff1_b").value);
  for (auto& row : ff)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = gelu_ref(row[j] + b1[j]);
  Mat ff2 = matmul_ref(ff, to_mat(model.p(base + "ff2_w").value));
  const std::vector<double> b2 = to_vec(model.p(base + "ff2_b").value);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] += ff2[i][j] + b2[j];
  return x;
}

Mat encoder_stack_ref(Model& model, const std::string& prefix, std::size_t layers, Mat x) {
  for (std::size_t l = 0; l < layers; ++l) {
    x = encoder_block_ref(model, prefix + std::to_string(l) + ".", x, model.config().n_heads);
  }
  return layer_norm_ref(x, to_vec(model.p(prefix + "norm_g").value), to_vec(model.p(prefix + "norm_b").value));
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_k = 8;
  cfg.n_heads = 2;
  cfg.feedforward = 16;
  cfg.n_self_layers = 1;
  cfg.n_cross_layers = 1;
  cfg.n_continuous = 2;
  cfg.vocab_sizes = {3};
  return cfg;
}

TraderRecord make_record(double f1, double f2, int cat, std::int64_t account = 1) {
  TraderRecord r;
  r.account_id = account;
  r.continuous = {f1, f2};
  r.categorical = {cat};
  return r;
}

void zero_all(Model& m) {
  for (Parameter* p : m.parameters()) {
    std::fill(p->value.data().begin(), p->value.data().end(), 0.0);
  }
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig cfg = small_config();
  cfg.n_heads = 3;  // 8 % 3 != 0
  EXPECT_THROW(cfg.validate(), config_error);
  cfg = small_config();
  cfg.dropout = 1.0;
  EXPECT_THROW(cfg.validate(), config_error);
  cfg = small_config();
  cfg.n_continuous = 0;
  cfg.vocab_sizes.clear();
  EXPECT_THROW(cfg.validate(), config_error);
}

TEST(Model, ParameterCountMatchesClosedForm) {
  for (ModelConfig cfg : {small_config(), ModelConfig{}}) {
    if (cfg.n_continuous == 0) {
      cfg.n_continuous = 14;
      cfg.vocab_sizes = {5, 10, 3};
    }
    Model m(cfg, 1);
    EXPECT_EQ(m.total_parameter_values(), parameter_count(cfg));
  }
}

TEST(EmbedFeatures, ZeroContinuousInputGivesBias) {
  Model m(small_config(), 3);
  // make the bias visible
  for (std::size_t i = 0; i < 8; ++i) m.p("num_b_0").value.at(i) = 0.25 * static_cast<double>(i);
  Graph g;
  const Tensor& e = g.value(embed_features(g, m, make_record(0.0, 0.7, 1)));
  ASSERT_EQ(e.rows(), 4u);  // CLS + 2 continuous + 1 categorical
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_DOUBLE_EQ(e.at(1, j), m.p("num_b_0").value.at(j));
  }
}

TEST(EmbedFeatures, CategoricalRowSelectsLookupEntry) {
  Model m(small_config(), 4);
  Graph g;
  const int v = 2;
  const Tensor& e = g.value(embed_features(g, m, make_record(0.1, 0.2, v)));
  const Tensor& table = m.p("cat_w_0").value;
  const Tensor& bias = m.p("cat_b_0").value;
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_DOUBLE_EQ(e.at(3, j), table.at(static_cast<std::size_t>(v), j) + bias.at(j));
  }
}

TEST(EmbedFeatures, LinearInEachContinuousFeature) {
  Model m(small_config(), 5);
  const double delta = 0.37;
  Graph g;
  const Tensor& a = g.value(embed_features(g, m, make_record(0.2, 0.5, 0)));
  const Tensor& b = g.value(embed_features(g, m, make_record(0.2 + delta, 0.5, 0)));
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      if (i == 1) {
        EXPECT_NEAR(b.at(i, j) - a.at(i, j), delta * m.p("num_w_0").value.at(j), 1e-12);
      } else {
        EXPECT_DOUBLE_EQ(a.at(i, j), b.at(i, j));
      }
    }
  }
}

TEST(EmbedFeatures, OutOfVocabularyRejected) {
  Model m(small_config(), 5);
  Graph g;
  EXPECT_THROW(embed_features(g, m, make_record(0.1, 0.1, 3)), data_error);
}

TEST(SelfTraderEncode, MatchesBruteForceReference) {
  ModelConfig cfg = small_config();
  cfg.n_self_layers = 2;
  Model m(cfg, 11);
  TraderRecord rec = make_record(0.3, 0.8, 1);
  Graph g;
  Var tokens = embed_features(g, m, rec);
  const Tensor& cls = g.value(self_trader_encode(g, m, tokens));
  const Mat ref = encoder_stack_ref(m, "self", cfg.n_self_layers, to_mat(g.value(tokens)));
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_NEAR(cls.at(0, j), ref[0][j], 1e-12);
  }
}

// Single head, identity projections, zero feedforward: the block reduces to
// x + softmax(LN(x) LN(x)^T / sqrt(d)) LN(x), evaluated directly.
TEST(SelfTraderEncode, IdentityProjectionReference) {
  ModelConfig cfg = small_config();
  cfg.n_heads = 1;
  Model m(cfg, 2);
  zero_all(m);
  for (std::size_t i = 0; i < 8; ++i) {
    m.p("self0.wq").value.at(i, i) = 1.0;
    m.p("self0.wk").value.at(i, i) = 1.0;
    m.p("self0.wv").value.at(i, i) = 1.0;
    m.p("self0.wo").value.at(i, i) = 1.0;
    m.p("self0.ln1_g").value.at(i) = 1.0;
    m.p("self0.ln2_g").value.at(i) = 1.0;
    m.p("selfnorm_g").value.at(i) = 1.0;
  }
  Tensor tokens({3, 8});
  Rng rng(6);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens.at(i) = rng.uniform(-1.0, 1.0);

  Graph g;
  const Tensor& cls = g.value(self_trader_encode(g, m, g.constant(tokens)));
  const Mat ref = encoder_stack_ref(m, "self", 1, to_mat(tokens));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(cls.at(0, j), ref[0][j], 1e-12);
}

TEST(SelfTraderEncode, CLSInvariantUnderFeatureTokenPermutation) {
  Model m(small_config(), 21);
  Rng rng(9);
  Tensor tokens({5, 8});
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens.at(i) = rng.uniform(-1.0, 1.0);
  Tensor permuted({5, 8});
  const std::size_t perm[5] = {0, 3, 1, 4, 2};  // CLS row stays put
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) permuted.at(i, j) = tokens.at(perm[i], j);

  Graph g1, g2;
  const Tensor& a = g1.value(self_trader_encode(g1, m, g1.constant(tokens)));
  const Tensor& b = g2.value(self_trader_encode(g2, m, g2.constant(permuted)));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(a.at(0, j), b.at(0, j), 1e-12);
}

TEST(SelfTraderEncode, AllZeroParametersPropagateZero) {
  Model m(small_config(), 1);
  zero_all(m);
  Graph g;
  const Tensor& cls = g.value(trader_summary(g, m, make_record(0.4, 0.9, 2)));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_DOUBLE_EQ(cls.at(0, j), 0.0);
}

TEST(CrossTraderEncode, SingletonGroupMatchesReference) {
  Model m(small_config(), 31);
  Rng rng(3);
  Tensor cls({1, 8});
  for (std::size_t i = 0; i < 8; ++i) cls.at(i) = rng.uniform(-1.0, 1.0);
  Graph g;
  const Tensor& out = g.value(cross_trader_encode(g, m, g.constant(cls)));
  const Mat ref = encoder_stack_ref(m, "cross", 1, to_mat(cls));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.at(0, j), ref[0][j], 1e-12);
}

TEST(CrossTraderEncode, ToyGroupMatchesBruteForce) {
  ModelConfig cfg = small_config();
  cfg.n_cross_layers = 2;
  Model m(cfg, 41);
  Rng rng(12);
  Tensor cls({3, 8});
  for (std::size_t i = 0; i < cls.size(); ++i) cls.at(i) = rng.uniform(-1.0, 1.0);
  Graph g;
  const Tensor& out = g.value(cross_trader_encode(g, m, g.constant(cls)));
  const Mat ref = encoder_stack_ref(m, "cross", 2, to_mat(cls));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.at(i, j), ref[i][j], 1e-12);
}

TEST(CrossTraderEncode, PermutationEquivariance) {
  Model m(small_config(), 51);
  Rng rng(14);
  Tensor cls({4, 8});
  for (std::size_t i = 0; i < cls.size(); ++i) cls.at(i) = rng.uniform(-1.0, 1.0);
  const std::size_t perm[4] = {2, 0, 3, 1};
  Tensor shuffled({4, 8});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) shuffled.at(i, j) = cls.at(perm[i], j);

  Graph g1, g2;
  const Tensor& a = g1.value(cross_trader_encode(g1, m, g1.constant(cls)));
  const Tensor& b = g2.value(cross_trader_encode(g2, m, g2.constant(shuffled)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(b.at(i, j), a.at(perm[i], j), 1e-12);
}

TEST(ScoreGroup, DuplicateTradersGetIdenticalScores) {
  Model m(small_config(), 61);
  TraderRecord r = make_record(0.6, 0.1, 0, 7);
  std::vector<const TraderRecord*> group = {&r, &r, &r};
  std::vector<double> scores = score_group(m, group);
  EXPECT_DOUBLE_EQ(scores[0], scores[1]);
  EXPECT_DOUBLE_EQ(scores[1], scores[2]);
}

TEST(ScoreGroup, ZeroHeadGivesZeroScores) {
  Model m(small_config(), 71);
  std::fill(m.p("head_w").value.data().begin(), m.p("head_w").value.data().end(), 0.0);
  m.p("head_b").value.at(0) = 0.0;
  TraderRecord a = make_record(0.2, 0.9, 1, 1), b = make_record(0.8, 0.3, 2, 2);
  std::vector<double> scores = score_group(m, {&a, &b});
  EXPECT_DOUBLE_EQ(scores[0], 0.0);
  EXPECT_DOUBLE_EQ(scores[1], 0.0);
}

TEST(ScoreGroup, ForwardDeterministic) {
  Model m(small_config(), 81);
  TraderRecord a = make_record(0.2, 0.9, 1, 1), b = make_record(0.8, 0.3, 2, 2);
  std::vector<double> s1 = score_group(m, {&a, &b});
  std::vector<double> s2 = score_group(m, {&a, &b});
  EXPECT_EQ(s1, s2);
}

TEST(ScoreGroup, GradientOfScoreMatchesFiniteDifferences) {
  Model m(small_config(), 91);
  std::vector<TraderRecord> recs = {make_record(0.1, 0.9, 0, 1), make_record(0.5, 0.4, 1, 2),
                                    make_record(0.8, 0.2, 2, 3)};
  std::vector<const TraderRecord*> group = {&recs[0], &recs[1], &recs[2]};
  auto params = m.parameters();
  auto loss_fn = [&]() {
    Graph g;
    return g.value(sum(score_group_node(g, m, group))).value();
  };
  {
    Graph g;
    g.backward(sum(score_group_node(g, m, group)));
  }
  GradCheckReport rep = compare_gradients(params, loss_fn, 1e-5);
  EXPECT_LT(rep.max_rel_error, 1e-4) << "worst: " << rep.worst_parameter;
}

TEST(Dropout, ActiveOnlyWithContext) {
  Model m(small_config(), 95);
  TraderRecord a = make_record(0.3, 0.7, 1, 1);
  Rng rng(1);
  DropoutContext ctx{&rng, 0.5};
  Graph g1, g2;
  const Tensor& with = g1.value(trader_summary(g1, m, a, ctx));
  const Tensor& base = g2.value(trader_summary(g2, m, a));
  bool any_diff = false;
  for (std::size_t j = 0; j < 8; ++j) any_diff |= with.at(0, j) != base.at(0, j);
  EXPECT_TRUE(any_diff);
}

class Checkpoint : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / "riskrank_ckpt_test";
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(Checkpoint, RoundTripPreservesScoresBitIdentically) {
  Model m(small_config(), 101);
  const std::string path = (dir_ / "model.ckpt").string();
  save_checkpoint(m, path);
  Model loaded = load_checkpoint(path, small_config());
  TraderRecord a = make_record(0.25, 0.75, 1, 1), b = make_record(0.9, 0.05, 0, 2);
  std::vector<const TraderRecord*> group = {&a, &b};
  EXPECT_EQ(score_group(m, group), score_group(loaded, group));
}

TEST_F(Checkpoint, TruncatedFileRejected) {
  Model m(small_config(), 103);
  const std::string path = (dir_ / "model.ckpt").string();
  save_checkpoint(m, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  EXPECT_THROW(load_checkpoint(path, small_config()), data_error);
}

TEST_F(Checkpoint, BadMagicRejected) {
  const std::string path = (dir_ / "junk.ckpt").string();
  std::ofstream(path) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(path, small_config()), data_error);
}

TEST_F(Checkpoint, ShapeMismatchNamesParameter) {
  Model m(small_config(), 107);
  const std::string path = (dir_ / "model.ckpt").string();
  save_checkpoint(m, path);
  ModelConfig other = small_config();
  other.d_k = 4;
  other.feedforward = 8;
  try {
    load_checkpoint(path, other);
    FAIL() << "expected data_error";
  } catch (const data_error& e) {
    EXPECT_NE(std::string(e.what()).find("cls"), std::string::npos) << e.what();
  }
}
