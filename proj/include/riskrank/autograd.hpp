#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "riskrank/common.hpp"
#include "riskrank/tensor.hpp"

namespace riskrank {

// Named trainable tensor. Gradients accumulate additively across backward
// passes until zero_grad() is called.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}

  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), 0.0); }
};

class Graph;

// Lightweight handle into a graph's node arena.
struct Var {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

// Reverse-mode tape. One graph is recorded per forward pass; backward walks
// the arena in reverse creation order, which fixes the summation order and
// keeps runs bit-identical.
class Graph {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&, const Node&)> backprop;  // empty for leaves
    Parameter* param = nullptr;
  };

  Var constant(Tensor t) { return push(std::move(t)); }

  Var param(Parameter& p) {
    Var v = push(p.value);
    nodes_[static_cast<std::size_t>(v.id)].param = &p;
    return v;
  }

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const { return node(v).grad; }

  Var push(Tensor value, std::function<void(Graph&, const Node&)> backprop = {}) {
    if (checked_mode()) value.ensure_finite("graph op output");
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(backprop), nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Var v) {
    require_same_graph(v);
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var v) const {
    require_same_graph(v);
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  Tensor& grad_of(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Tensor& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  // Seeds d(loss)/d(loss) = 1 and propagates. Parameter gradients are
  // accumulated, not overwritten.
  void backward(Var loss) {
    const Node& top = node(loss);
    if (!top.value.is_scalar() && top.value.size() != 1) {
      throw numeric_error("backward: loss must be scalar, got shape " + top.value.shape_string());
    }
    for (Node& n : nodes_) {
      n.grad = Tensor::zeros_like(n.value);
    }
    nodes_[static_cast<std::size_t>(loss.id)].grad.at(0) = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (checked_mode()) n.grad.ensure_finite("gradient of node " + std::to_string(id));
      if (n.backprop) n.backprop(*this, n);
    }
    for (Node& n : nodes_) {
      if (n.param != nullptr) {
        Tensor& g = n.param->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g.at(i) += n.grad.at(i);
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  void require_same_graph(Var v) const {
    if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw numeric_error("var does not belong to this graph");
    }
  }

  std::deque<Node> nodes_;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw numeric_error(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

inline Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw numeric_error("operands recorded on different graphs");
  return *a.graph;
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  detail::require_same_shape(ta, tb, "add");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += tb.at(i);
  const int ia = a.id, ib = b.id;
  return g.push(std::move(out), [ia, ib](Graph& gr, const Graph::Node& n) {
    Tensor& ga = gr.grad_of(ia);
    Tensor& gb = gr.grad_of(ib);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ga.at(i) += n.grad.at(i);
      gb.at(i) += n.grad.at(i);
    }
  });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  detail::require_same_shape(ta, tb, "sub");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) -= tb.at(i);
  const int ia = a.id, ib = b.id;
  return g.push(std::move(out), [ia, ib](Graph& gr, const Graph::Node& n) {
    Tensor& ga = gr.grad_of(ia);
    Tensor& gb = gr.grad_of(ib);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ga.at(i) += n.grad.at(i);
      gb.at(i) -= n.grad.at(i);
    }
  });
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  detail::require_same_shape(ta, tb, "mul");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= tb.at(i);
  const int ia = a.id, ib = b.id;
  return g.push(std::move(out), [ia, ib](Graph& gr, const Graph::Node& n) {
    const Tensor& va = gr.value_of(ia);
    const Tensor& vb = gr.value_of(ib);
    Tensor& ga = gr.grad_of(ia);
    Tensor& gb = gr.grad_of(ib);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ga.at(i) += n.grad.at(i) * vb.at(i);
      gb.at(i) += n.grad.at(i) * va.at(i);
    }
  });
}

inline Var scale(Var a, double k) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= k;
  const int ia = a.id;
  return g.push(std::move(out), [ia, k](Graph& gr, const Graph::Node& n) {
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga.at(i) += n.grad.at(i) * k;
  });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var add_rowvec(Var m, Var v) {
  Graph& g = detail::graph_of(m, v);
  const Tensor& tm = g.value(m);
  const Tensor& tv = g.value(v);
  if (tm.rank() != 2 || tv.size() != tm.cols()) {
    throw numeric_error("add_rowvec: expected [r x c] + [c], got " + tm.shape_string() + " + " + tv.shape_string());
  }
  Tensor out = tm;
  const std::size_t r = tm.rows(), c = tm.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) += tv.at(j);
  const int im = m.id, iv = v.id;
  return g.push(std::move(out), [im, iv, r, c](Graph& gr, const Graph::Node& n) {
    Tensor& gm = gr.grad_of(im);
    Tensor& gv = gr.grad_of(iv);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        gm.at(i, j) += n.grad.at(i, j);
        gv.at(j) += n.grad.at(i, j);
      }
  });
}

inline Var matmul(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    throw numeric_error("matmul: incompatible shapes " + ta.shape_string() + " x " + tb.shape_string());
  }
  const std::size_t r = ta.rows(), k = ta.cols(), c = tb.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta.at(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) += av * tb.at(p, j);
    }
  const int ia = a.id, ib = b.id;
  return g.push(std::move(out), [ia, ib, r, k, c](Graph& gr, const Graph::Node& n) {
    const Tensor& va = gr.value_of(ia);
    const Tensor& vb = gr.value_of(ib);
    Tensor& ga = gr.grad_of(ia);
    Tensor& gb = gr.grad_of(ib);
    // dA = dC * B^T ; dB = A^T * dC
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double go = n.grad.at(i, j);
        if (go == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          ga.at(i, p) += go * vb.at(p, j);
          gb.at(p, j) += go * va.at(i, p);
        }
      }
  });
}

inline Var transpose(Var a) {
  Graph& g = *a.graph;
  const Tensor& ta = g.value(a);
  if (ta.rank() != 2) throw numeric_error("transpose: expected rank-2 tensor");
  const std::size_t r = ta.rows(), c = ta.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = ta.at(i, j);
  const int ia = a.id;
  return g.push(std::move(out), [ia, r, c](Graph& gr, const Graph::Node& n) {
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += n.grad.at(j, i);
  });
}

namespace detail {

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// softplus(x) = log(1 + e^x), evaluated without overflow on either tail
inline double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

}  // namespace detail

inline Var sigmoid(Var a) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = detail::stable_sigmoid(out.at(i));
  const int ia = a.id;
  const int iout = static_cast<int>(g.node_count());
  return g.push(std::move(out), [ia, iout](Graph& gr, const Graph::Node& n) {
    const Tensor& y = gr.value_of(iout);
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double s = y.at(i);
      ga.at(i) += n.grad.at(i) * s * (1.0 - s);
    }
  });
}

inline Var softplus(Var a) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = detail::stable_softplus(out.at(i));
  const int ia = a.id;
  return g.push(std::move(out), [ia](Graph& gr, const Graph::Node& n) {
    const Tensor& x = gr.value_of(ia);
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      ga.at(i) += n.grad.at(i) * detail::stable_sigmoid(x.at(i));
    }
  });
}

inline Var relu(Var a) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = out.at(i) > 0.0 ? out.at(i) : 0.0;
  const int ia = a.id;
  return g.push(std::move(out), [ia](Graph& gr, const Graph::Node& n) {
    const Tensor& x = gr.value_of(ia);
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (x.at(i) > 0.0) ga.at(i) += n.grad.at(i);
    }
  });
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
inline Var gelu(Var a) {
  Graph& g = *a.graph;
  Tensor out = g.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out.at(i);
    out.at(i) = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  }
  const int ia = a.id;
  return g.push(std::move(out), [ia](Graph& gr, const Graph::Node& n) {
    const Tensor& x = gr.value_of(ia);
    Tensor& ga = gr.grad_of(ia);
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double v = x.at(i);
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      ga.at(i) += n.grad.at(i) * (cdf + v * pdf);
    }
  });
}

inline Var sum(Var a) {
  Graph& g = *a.graph;
  const Tensor& ta = g.value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta.at(i);
  const int ia = a.id;
  return g.push(Tensor::scalar(s), [ia](Graph& gr, const Graph::Node& n) {
    Tensor& ga = gr.grad_of(ia);
    const double go = n.grad.at(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga.at(i) += go;
  });
}

inline Var row(Var a, std::size_t r) {
  Graph& g = *a.graph;
  const Tensor& ta = g.value(a);
  if (ta.rank() != 2 || r >= ta.rows()) {
    throw numeric_error("row: index " + std::to_string(r) + " out of range for " + ta.shape_string());
  }
  const std::size_t c = ta.cols();
  Tensor out({1, c});
  for (std::size_t j = 0; j < c; ++j) out.at(0, j) = ta.at(r, j);
  const int ia = a.id;
  return g.push(std::move(out), [ia, r, c](Graph& gr, const Graph::Node& n) {
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t j = 0; j < c; ++j) ga.at(r, j) += n.grad.at(0, j);
  });
}

inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw numeric_error("stack_rows: empty input");
  Graph& g = *rows[0].graph;
  const std::size_t c = g.value(rows[0]).size();
  Tensor out({rows.size(), c});
  std::vector<int> ids(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& t = g.value(rows[i]);
    if (t.size() != c) throw numeric_error("stack_rows: inconsistent row widths");
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = t.at(j);
    ids[i] = rows[i].id;
  }
  return g.push(std::move(out), [ids, c](Graph& gr, const Graph::Node& n) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Tensor& gi = gr.grad_of(ids[i]);
      for (std::size_t j = 0; j < c; ++j) gi.at(j) += n.grad.at(i, j);
    }
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t width) {
  Graph& g = *a.graph;
  const Tensor& ta = g.value(a);
  if (ta.rank() != 2 || start + width > ta.cols()) {
    throw numeric_error("slice_cols: range out of bounds for " + ta.shape_string());
  }
  const std::size_t r = ta.rows();
  Tensor out({r, width});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < width; ++j) out.at(i, j) = ta.at(i, start + j);
  const int ia = a.id;
  return g.push(std::move(out), [ia, start, width, r](Graph& gr, const Graph::Node& n) {
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < width; ++j) ga.at(i, start + j) += n.grad.at(i, j);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw numeric_error("concat_cols: empty input");
  Graph& g = *parts[0].graph;
  const std::size_t r = g.value(parts[0]).rows();
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& t = g.value(p);
    if (t.rank() != 2 || t.rows() != r) throw numeric_error("concat_cols: inconsistent row counts");
    total += t.cols();
  }
  Tensor out({r, total});
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& t = g.value(p);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, off + j) = t.at(i, j);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += t.cols();
  }
  return g.push(std::move(out), [ids, offsets, r](Graph& gr, const Graph::Node& n) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& gk = gr.grad_of(ids[k]);
      const std::size_t w = gk.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) gk.at(i, j) += n.grad.at(i, offsets[k] + j);
    }
  });
}

// Row-wise softmax with max-shift stabilisation.
inline Var softmax_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& ta = g.value(a);
  if (ta.rank() != 2) throw numeric_error("softmax_rows: expected rank-2 tensor");
  const std::size_t r = ta.rows(), c = ta.cols();
  if (c == 0) throw numeric_error("softmax_rows: empty rows");
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mx = ta.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, ta.at(i, j));
    double den = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = std::exp(ta.at(i, j) - mx);
      den += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= den;
  }
  const int ia = a.id;
  const int iout = static_cast<int>(g.node_count());
  return g.push(std::move(out), [ia, iout, r, c](Graph& gr, const Graph::Node& n) {
    const Tensor& y = gr.value_of(iout);
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += n.grad.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < c; ++j) {
        ga.at(i, j) += y.at(i, j) * (n.grad.at(i, j) - dot);
      }
    }
  });
}

// log(sum(exp(x))) over all entries, max-shifted.
inline Var logsumexp(Var a) {
  Graph& g = *a.graph;
  const Tensor& ta = g.value(a);
  double mx = ta.at(0);
  for (std::size_t i = 1; i < ta.size(); ++i) mx = std::max(mx, ta.at(i));
  double den = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) den += std::exp(ta.at(i) - mx);
  const double lse = mx + std::log(den);
  const int ia = a.id;
  return g.push(Tensor::scalar(lse), [ia, lse](Graph& gr, const Graph::Node& n) {
    const Tensor& x = gr.value_of(ia);
    Tensor& ga = gr.grad_of(ia);
    const double go = n.grad.at(0);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga.at(i) += go * std::exp(x.at(i) - lse);
    }
  });
}

// Row-wise layer normalisation with learnable gain/offset vectors.
inline Var layer_norm(Var a, Var gain, Var offset, double eps = 1e-5) {
  Graph& g = detail::graph_of(a, gain);
  const Tensor& ta = g.value(a);
  const Tensor& tg = g.value(gain);
  const Tensor& tb = g.value(offset);
  if (ta.rank() != 2 || tg.size() != ta.cols() || tb.size() != ta.cols()) {
    throw numeric_error("layer_norm: shape mismatch");
  }
  const std::size_t r = ta.rows(), c = ta.cols();
  Tensor out({r, c});
  Tensor xhat({r, c});
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += ta.at(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = ta.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat.at(i, j) = (ta.at(i, j) - mean) * inv_std[i];
      out.at(i, j) = tg.at(j) * xhat.at(i, j) + tb.at(j);
    }
  }
  const int ia = a.id, ig = gain.id, ib = offset.id;
  return g.push(std::move(out), [ia, ig, ib, r, c, xhat, inv_std](Graph& gr, const Graph::Node& n) {
    const Tensor& tg = gr.value_of(ig);
    Tensor& ga = gr.grad_of(ia);
    Tensor& gg = gr.grad_of(ig);
    Tensor& gb = gr.grad_of(ib);
    for (std::size_t i = 0; i < r; ++i) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double go = n.grad.at(i, j);
        gg.at(j) += go * xhat.at(i, j);
        gb.at(j) += go;
        const double dxhat = go * tg.at(j);
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat.at(i, j);
      }
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) {
        const double dxhat = n.grad.at(i, j) * tg.at(j);
        ga.at(i, j) += inv_std[i] * (dxhat - inv_c * sum_dxhat - xhat.at(i, j) * inv_c * sum_dxhat_xhat);
      }
    }
  });
}

}  // namespace riskrank
