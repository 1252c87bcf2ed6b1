#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "riskrank/autograd.hpp"
#include "riskrank/common.hpp"
#include "riskrank/data.hpp"
#include "riskrank/tensor.hpp"

namespace riskrank {

enum class Activation { kGelu, kRelu };

struct ModelConfig {
  std::size_t d_k = 64;
  std::size_t n_heads = 2;
  std::size_t feedforward = 128;
  std::size_t n_self_layers = 2;
  std::size_t n_cross_layers = 4;
  std::size_t n_continuous = 0;
  std::vector<int> vocab_sizes;
  double dropout = 0.0;
  Activation activation = Activation::kGelu;

  void validate() const {
    if (d_k == 0 || n_heads == 0 || d_k % n_heads != 0) {
      throw config_error("model config: d_k must be a positive multiple of n_heads");
    }
    if (n_self_layers == 0 || n_cross_layers == 0) {
      throw config_error("model config: need at least one self and one cross layer");
    }
    if (n_continuous + vocab_sizes.size() == 0) throw config_error("model config: no features");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("model config: dropout must be in [0,1)");
  }

  std::size_t feature_tokens() const { return n_continuous + vocab_sizes.size(); }
  std::size_t head_dim() const { return d_k / n_heads; }

  static ModelConfig from_schema(const FeatureSchema& schema) {
    ModelConfig cfg;
    cfg.n_continuous = schema.continuous_names.size();
    cfg.vocab_sizes = schema.vocab_sizes;
    return cfg;
  }
};

// Closed-form parameter count; regression-tested against the live model.
inline std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_k, f = cfg.feedforward;
  std::size_t total = d;                      // CLS vector
  total += cfg.n_continuous * 2 * d;          // per-feature weight + bias
  for (int s : cfg.vocab_sizes) total += (static_cast<std::size_t>(s) + 1) * d;
  const std::size_t per_layer = 4 * d * d     // Q,K,V,O projections
                                + 2 * d       // pre-attention norm
                                + 2 * d       // pre-feedforward norm
                                + d * f + f   // ff in
                                + f * d + d;  // ff out
  total += (cfg.n_self_layers + cfg.n_cross_layers) * per_layer;
  total += 2 * d + 2 * d;  // final norms of both stacks
  total += d + 1;          // scoring head
  return total;
}

// Parameter store plus forward passes. Parameters are created once in the
// constructor; pointers into the store stay valid for the model's lifetime.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(derive_seed(seed, 0x90de1));
    const std::size_t d = config_.d_k, f = config_.feedforward;

    auto uniform_init = [&](std::vector<std::size_t> shape, std::size_t fan_in) {
      Tensor t(std::move(shape));
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-bound, bound);
      return t;
    };

    Tensor cls({1, d});
    for (std::size_t i = 0; i < d; ++i) cls.at(i) = 0.02 * rng.normal();
    add_param("cls", std::move(cls));

    for (std::size_t j = 0; j < config_.n_continuous; ++j) {
      add_param("num_w_" + std::to_string(j), uniform_init({1, d}, 1));
      add_param("num_b_" + std::to_string(j), Tensor({1, d}));
    }
    for (std::size_t j = 0; j < config_.vocab_sizes.size(); ++j) {
      const std::size_t vocab = static_cast<std::size_t>(config_.vocab_sizes[j]);
      add_param("cat_w_" + std::to_string(j), uniform_init({vocab, d}, 1));
      add_param("cat_b_" + std::to_string(j), Tensor({1, d}));
    }

    auto add_encoder = [&](const std::string& prefix, std::size_t layers) {
      for (std::size_t l = 0; l < layers; ++l) {
        const std::string base = prefix + std::to_string(l) + ".";
        add_param(base + "ln1_g", Tensor::ones({d}));
        add_param(base + "ln1_b", Tensor({d}));
        add_param(base + "wq", uniform_init({d, d}, d));
        add_param(base + "wk", uniform_init({d, d}, d));
        add_param(base + "wv", uniform_init({d, d}, d));
        add_param(base + "wo", uniform_init({d, d}, d));
        add_param(base + "ln2_g", Tensor::ones({d}));
        add_param(base + "ln2_b", Tensor({d}));
        add_param(base + "ff1_w", uniform_init({d, f}, d));
        add_param(base + "ff1_b", Tensor({f}));
        add_param(base + "ff2_w", uniform_init({f, d}, f));
        add_param(base + "ff2_b", Tensor({d}));
      }
      add_param(prefix + "norm_g", Tensor::ones({d}));
      add_param(prefix + "norm_b", Tensor({d}));
    };
    add_encoder("self", config_.n_self_layers);
    add_encoder("cross", config_.n_cross_layers);

    add_param("head_w", uniform_init({d, 1}, d));
    add_param("head_b", Tensor({1}));
  }

  const ModelConfig& config() const { return config_; }

  Parameter& p(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw numeric_error("unknown parameter " + name);
    return params_[it->second];
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (Parameter& p : params_) out.push_back(&p);
    return out;
  }

  // Everything upstream of cross-trader attention: embeddings, CLS and the
  // self encoder. This is the set retained from classification pretraining.
  std::vector<Parameter*> pretraining_parameters() {
    std::vector<Parameter*> out;
    for (Parameter& p : params_) {
      if (p.name.rfind("cross", 0) == 0 || p.name.rfind("head_", 0) == 0) continue;
      out.push_back(&p);
    }
    return out;
  }

  std::size_t total_parameter_values() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) n += p.value.size();
    return n;
  }

  bool all_finite() const {
    for (const Parameter& p : params_) {
      if (!p.value.all_finite()) return false;
    }
    return true;
  }

  std::vector<Parameter>& raw_parameters() { return params_; }
  const std::vector<Parameter>& raw_parameters() const { return params_; }

 private:
  void add_param(std::string name, Tensor value) {
    index_[name] = params_.size();
    params_.emplace_back(std::move(name), std::move(value));
  }

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Optional stochastic regularisation; active only while training.
struct DropoutContext {
  Rng* rng = nullptr;
  double rate = 0.0;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

namespace detail {

inline Var maybe_dropout(Var x, const DropoutContext& ctx) {
  if (!ctx.active()) return x;
  Graph& g = *x.graph;
  const Tensor& v = g.value(x);
  Tensor mask(v.shape());
  const double keep = 1.0 - ctx.rate;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask.at(i) = ctx.rng->uniform() < keep ? 1.0 / keep : 0.0;
  }
  return mul(x, g.constant(std::move(mask)));
}

inline Var activation_node(Var x, Activation act) {
  return act == Activation::kGelu ? gelu(x) : relu(x);
}

// Pre-norm multi-head attention + feedforward with residuals. Attention
// scores are scaled by 1/sqrt(d_k / n_heads).
inline Var encoder_block(Graph& g, Model& model, const std::string& base, Var x,
                         const DropoutContext& dropout) {
  const ModelConfig& cfg = model.config();
  Var h = layer_norm(x, g.param(model.p(base + "ln1_g")), g.param(model.p(base + "ln1_b")));
  Var q = matmul(h, g.param(model.p(base + "wq")));
  Var k = matmul(h, g.param(model.p(base + "wk")));
  Var v = matmul(h, g.param(model.p(base + "wv")));
  const std::size_t dh = cfg.head_dim();
  std::vector<Var> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t head = 0; head < cfg.n_heads; ++head) {
    Var qh = slice_cols(q, head * dh, dh);
    Var kh = slice_cols(k, head * dh, dh);
    Var vh = slice_cols(v, head * dh, dh);
    Var att = softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))));
    heads.push_back(matmul(att, vh));
  }
  Var mixed = matmul(cfg.n_heads == 1 ? heads[0] : concat_cols(heads), g.param(model.p(base + "wo")));
  x = add(x, maybe_dropout(mixed, dropout));

  Var f = layer_norm(x, g.param(model.p(base + "ln2_g")), g.param(model.p(base + "ln2_b")));
  Var ff = add_rowvec(matmul(f, g.param(model.p(base + "ff1_w"))), g.param(model.p(base + "ff1_b")));
  ff = activation_node(ff, cfg.activation);
  ff = add_rowvec(matmul(ff, g.param(model.p(base + "ff2_w"))), g.param(model.p(base + "ff2_b")));
  return add(x, maybe_dropout(ff, dropout));
}

inline Var encoder_stack(Graph& g, Model& model, const std::string& prefix, std::size_t layers, Var x,
                         const DropoutContext& dropout) {
  for (std::size_t l = 0; l < layers; ++l) {
    x = encoder_block(g, model, prefix + std::to_string(l) + ".", x, dropout);
  }
  return layer_norm(x, g.param(model.p(prefix + "norm_g")), g.param(model.p(prefix + "norm_b")));
}

}  // namespace detail

// Token matrix for one trader: row 0 is the learnable CLS vector, row j+1
// embeds feature j (linear map for continuous, table lookup for categorical).
inline Var embed_features(Graph& g, Model& model, const TraderRecord& record) {
  const ModelConfig& cfg = model.config();
  if (record.continuous.size() != cfg.n_continuous || record.categorical.size() != cfg.vocab_sizes.size()) {
    throw data_error("embed_features: record does not match model config");
  }
  std::vector<Var> rows;
  rows.reserve(cfg.feature_tokens() + 1);
  rows.push_back(g.param(model.p("cls")));
  for (std::size_t j = 0; j < cfg.n_continuous; ++j) {
    Var w = g.param(model.p("num_w_" + std::to_string(j)));
    Var b = g.param(model.p("num_b_" + std::to_string(j)));
    rows.push_back(add(scale(w, record.continuous[j]), b));
  }
  for (std::size_t j = 0; j < cfg.vocab_sizes.size(); ++j) {
    const int value = record.categorical[j];
    if (value < 0 || value >= cfg.vocab_sizes[j]) {
      throw data_error("embed_features: categorical value " + std::to_string(value) +
                       " outside vocabulary of size " + std::to_string(cfg.vocab_sizes[j]));
    }
    Var table = g.param(model.p("cat_w_" + std::to_string(j)));
    Var b = g.param(model.p("cat_b_" + std::to_string(j)));
    rows.push_back(add(row(table, static_cast<std::size_t>(value)), b));
  }
  return stack_rows(rows);
}

// Runs the self-trader encoder over one trader's tokens and returns the CLS
// position of the final layer, a 1 x d_k summary of the trader.
inline Var self_trader_encode(Graph& g, Model& model, Var tokens, const DropoutContext& dropout = {}) {
  Var encoded = detail::encoder_stack(g, model, "self", model.config().n_self_layers, tokens, dropout);
  return row(encoded, 0);
}

// Attention across the group's trader summaries; rows stay aligned with the
// input traders.
inline Var cross_trader_encode(Graph& g, Model& model, Var cls_matrix, const DropoutContext& dropout = {}) {
  if (g.value(cls_matrix).rows() == 0) throw data_error("cross_trader_encode: empty group");
  return detail::encoder_stack(g, model, "cross", model.config().n_cross_layers, cls_matrix, dropout);
}

inline Var trader_summary(Graph& g, Model& model, const TraderRecord& record,
                          const DropoutContext& dropout = {}) {
  return self_trader_encode(g, model, embed_features(g, model, record), dropout);
}

// Full scoring pipeline for a group: embed, self-encode each trader,
// cross-encode the group, then the scalar head. Returns an n x 1 column.
inline Var score_group_node(Graph& g, Model& model, const std::vector<const TraderRecord*>& members,
                            const DropoutContext& dropout = {}) {
  if (members.empty()) throw data_error("score_group: empty group");
  std::vector<Var> summaries;
  summaries.reserve(members.size());
  for (const TraderRecord* r : members) summaries.push_back(trader_summary(g, model, *r, dropout));
  Var group = cross_trader_encode(g, model, stack_rows(summaries), dropout);
  Var scores = matmul(group, g.param(model.p("head_w")));
  return add_rowvec(scores, g.param(model.p("head_b")));
}

inline std::vector<double> score_group(Model& model, const std::vector<const TraderRecord*>& members) {
  Graph g;
  const Tensor& s = g.value(score_group_node(g, model, members));
  return s.data();
}

// --- checkpoint format ----------------------------------------------------
// magic "PRNK", version u32, count-prefixed list of
// (name length u32, name bytes, rank u32, dims u64..., values f64 LE).

inline constexpr char kCheckpointMagic[4] = {'P', 'R', 'N', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

inline bool read_u32(std::ifstream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return true;
}

inline bool read_u64(std::ifstream& in, std::uint64_t& v) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return true;
}

inline bool read_f64(std::ifstream& in, double& v) {
  std::uint64_t bits;
  if (!read_u64(in, bits)) return false;
  std::memcpy(&v, &bits, 8);
  return true;
}

}  // namespace detail

inline void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u64(out, model.raw_parameters().size());
  for (const Parameter& p : model.raw_parameters()) {
    detail::write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) detail::write_u64(out, d);
    for (double v : p.value.data()) detail::write_f64(out, v);
  }
  if (!out) throw data_error("checkpoint write failed for " + path);
}

// Rebuilds a model from the given config and fills it from the checkpoint.
// Unknown versions, unknown parameters, shape mismatches or truncation are
// all rejected before any value is returned.
inline Model load_checkpoint(const std::string& path, const ModelConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw data_error("not a checkpoint file: " + path);
  }
  std::uint32_t version = 0;
  if (!detail::read_u32(in, version)) throw data_error("truncated checkpoint " + path);
  if (version != kCheckpointVersion) {
    throw data_error("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint64_t count = 0;
  if (!detail::read_u64(in, count)) throw data_error("truncated checkpoint " + path);

  Model model(config, /*seed=*/0);
  if (count != model.raw_parameters().size()) {
    throw data_error("checkpoint holds " + std::to_string(count) + " parameters, config expects " +
                     std::to_string(model.raw_parameters().size()));
  }
  std::size_t filled = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    if (!detail::read_u32(in, name_len)) throw data_error("truncated checkpoint " + path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw data_error("truncated checkpoint " + path);
    std::uint32_t rank = 0;
    if (!detail::read_u32(in, rank)) throw data_error("truncated checkpoint " + path);
    std::vector<std::size_t> dims(rank);
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::uint64_t dim = 0;
      if (!detail::read_u64(in, dim)) throw data_error("truncated checkpoint " + path);
      dims[d] = static_cast<std::size_t>(dim);
      total *= dims[d];
    }
    Parameter* target = nullptr;
    try {
      target = &model.p(name);
    } catch (const numeric_error&) {
      throw data_error("checkpoint parameter '" + name + "' is not part of this config");
    }
    if (target->value.shape() != dims) {
      std::string file_shape = "[";
      for (std::size_t d = 0; d < dims.size(); ++d) {
        if (d) file_shape += 'x';
        file_shape += std::to_string(dims[d]);
      }
      file_shape += ']';
      throw data_error("checkpoint shape mismatch for parameter '" + name + "': file has " + file_shape +
                       ", config expects " + target->value.shape_string());
    }
    for (std::size_t v = 0; v < total; ++v) {
      double value = 0.0;
      if (!detail::read_f64(in, value)) throw data_error("truncated checkpoint " + path);
      target->value.at(v) = value;
    }
    ++filled;
  }
  if (filled != model.raw_parameters().size()) throw data_error("checkpoint incomplete: " + path);
  return model;
}

}  // namespace riskrank
