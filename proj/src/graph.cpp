#include "ul/graph.hpp"

#include <cmath>

#include "ul/kernels.hpp"

namespace ul {

namespace {

constexpr double kLnEps = 1e-5;  // layer_norm variance floor
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double ez = std::exp(z);
  return ez / (1.0 + ez);
}

// Stable softmax of row[0..n) into out[0..n).
inline void softmax_row(const double* row, double* out, int n) {
  double m = row[0];
  for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(row[j] - m);
    s += out[j];
  }
  double inv = 1.0 / s;
  for (int j = 0; j < n; ++j) out[j] *= inv;
}

inline double log_sum_exp(const double* row, int n) {
  double m = row[0];
  for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
  double s = 0.0;
  for (int j = 0; j < n; ++j) s += std::exp(row[j] - m);
  return m + std::log(s);
}

}  // namespace

Graph::NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Graph::NodeId Graph::check_id(NodeId id) const {
  UL_CHECK(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(), "contract",
           "graph node id out of range");
  return id;
}

const Tensor& Graph::v(NodeId id) const {
  const Node& n = nodes_[check_id(id)];
  return n.view ? *n.view : n.val;
}

const Tensor& Graph::value(NodeId id) const { return v(id); }

Tensor& Graph::grad(NodeId id) {
  if (grads_[id].numel() == 0) grads_[id] = Tensor::zeros(v(id).shape);
  return grads_[id];
}

Graph::NodeId Graph::constant(Tensor t) {
  require_finite(t, "Graph::constant");
  Node n;
  n.op = Op::constant;
  n.val = std::move(t);
  return push(n);
}

Graph::NodeId Graph::param(const ParamSet& ps, const std::string& name) {
  if (bound_ == nullptr) bound_ = &ps;
  UL_CHECK(bound_ == &ps, "contract", "graph bound to a different ParamSet");
  Node n;
  n.op = Op::param;
  n.view = &ps.at(name);
  n.pname = name;
  return push(n);
}

Graph::NodeId Graph::linear(NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = v(x);
  const Tensor& wv = v(w);
  int m = xv.rows(), in = xv.cols();
  int out = wv.rows();
  UL_CHECK(wv.ndim() == 2 && wv.cols() == in, "contract",
           "linear: weight shape " + shape_str(wv.shape) + " vs input " +
               shape_str(xv.shape));
  Node n;
  n.op = Op::linear;
  n.in = {x, w, b};
  n.val = Tensor::zeros({m, out});
  kernels::matmul_nt(xv.data.data(), wv.data.data(), n.val.data.data(), m, in, out);
  if (b >= 0) {
    const Tensor& bv = v(b);
    UL_CHECK(static_cast<int>(bv.numel()) == out, "contract", "linear: bias size");
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < out; ++j) n.val.at(i, j) += bv.data[j];
  }
  return push(n);
}

Graph::NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& av = v(a);
  const Tensor& bv = v(b);
  UL_CHECK(av.ndim() == 2 && bv.ndim() == 2 && av.cols() == bv.rows(), "contract",
           "matmul: " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  Node n;
  n.op = Op::matmul;
  n.in = {a, b, -1};
  n.val = Tensor::zeros({av.rows(), bv.cols()});
  kernels::matmul(av.data.data(), bv.data.data(), n.val.data.data(), av.rows(),
                  av.cols(), bv.cols());
  return push(n);
}

Graph::NodeId Graph::matmul_nt(NodeId a, NodeId b) {
  const Tensor& av = v(a);
  const Tensor& bv = v(b);
  UL_CHECK(av.ndim() == 2 && bv.ndim() == 2 && av.cols() == bv.cols(), "contract",
           "matmul_nt: " + shape_str(av.shape) + " x " + shape_str(bv.shape) + "^T");
  Node n;
  n.op = Op::matmul_nt;
  n.in = {a, b, -1};
  n.val = Tensor::zeros({av.rows(), bv.rows()});
  kernels::matmul_nt(av.data.data(), bv.data.data(), n.val.data.data(), av.rows(),
                     av.cols(), bv.rows());
  return push(n);
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& av = v(a);
  const Tensor& bv = v(b);
  UL_CHECK(av.same_shape(bv), "contract",
           "add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Node n;
  n.op = Op::add;
  n.in = {a, b, -1};
  n.val = av;
  for (std::size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] += bv.data[i];
  return push(n);
}

Graph::NodeId Graph::add_n(const std::vector<NodeId>& xs) {
  UL_CHECK(!xs.empty(), "contract", "add_n: empty input list");
  Node n;
  n.op = Op::add_n;
  n.in_list = xs;
  n.val = v(xs[0]);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const Tensor& t = v(xs[k]);
    UL_CHECK(t.same_shape(n.val), "contract", "add_n: shape mismatch");
    for (std::size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] += t.data[i];
  }
  return push(n);
}

Graph::NodeId Graph::scale(NodeId a, double s) {
  UL_CHECK(std::isfinite(s), "contract", "scale: non-finite factor");
  Node n;
  n.op = Op::scale;
  n.in = {a, -1, -1};
  n.darg = s;
  n.val = v(a);
  for (double& x : n.val.data) x *= s;
  return push(n);
}

Graph::NodeId Graph::slice_cols(NodeId x, int c0, int c1) {
  const Tensor& xv = v(x);
  UL_CHECK(xv.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= xv.cols(), "contract",
           "slice_cols: bad range");
  int m = xv.rows(), w = c1 - c0;
  Node n;
  n.op = Op::slice_cols;
  n.in = {x, -1, -1};
  n.iargs = {c0, c1};
  n.val = Tensor::zeros({m, w});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) n.val.at(i, j) = xv.at(i, c0 + j);
  return push(n);
}

Graph::NodeId Graph::concat_cols(const std::vector<NodeId>& xs) {
  UL_CHECK(!xs.empty(), "contract", "concat_cols: empty input list");
  int m = v(xs[0]).rows(), total = 0;
  for (NodeId id : xs) {
    const Tensor& t = v(id);
    UL_CHECK(t.ndim() == 2 && t.rows() == m, "contract", "concat_cols: row mismatch");
    total += t.cols();
  }
  Node n;
  n.op = Op::concat_cols;
  n.in_list = xs;
  n.val = Tensor::zeros({m, total});
  int off = 0;
  for (NodeId id : xs) {
    const Tensor& t = v(id);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < t.cols(); ++j) n.val.at(i, off + j) = t.at(i, j);
    off += t.cols();
  }
  return push(n);
}

Graph::NodeId Graph::concat_rows(NodeId a, NodeId b) {
  const Tensor& av = v(a);
  const Tensor& bv = v(b);
  UL_CHECK(av.ndim() == 2 && bv.ndim() == 2 && av.cols() == bv.cols(), "contract",
           "concat_rows: column mismatch");
  Node n;
  n.op = Op::concat_rows;
  n.in = {a, b, -1};
  n.val = Tensor::zeros({av.rows() + bv.rows(), av.cols()});
  std::copy(av.data.begin(), av.data.end(), n.val.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), n.val.data.begin() + av.data.size());
  return push(n);
}

Graph::NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  const Tensor& xv = v(x);
  const Tensor& gv = v(gain);
  const Tensor& bv = v(bias);
  int m = xv.rows(), c = xv.cols();
  UL_CHECK(static_cast<int>(gv.numel()) == c && static_cast<int>(bv.numel()) == c,
           "contract", "layer_norm: gain/bias size");
  Node n;
  n.op = Op::layer_norm;
  n.in = {x, gain, bias};
  n.val = Tensor::zeros({m, c});
  n.aux = Tensor::zeros({m, 2});  // per-row mean, inv std
  for (int i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += xv.at(i, j);
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      double d = xv.at(i, j) - mu;
      var += d * d;
    }
    var /= c;
    double inv = 1.0 / std::sqrt(var + kLnEps);
    n.aux.at(i, 0) = mu;
    n.aux.at(i, 1) = inv;
    for (int j = 0; j < c; ++j)
      n.val.at(i, j) = (xv.at(i, j) - mu) * inv * gv.data[j] + bv.data[j];
  }
  return push(n);
}

Graph::NodeId Graph::gelu(NodeId x) {
  Node n;
  n.op = Op::gelu;
  n.in = {x, -1, -1};
  n.val = v(x);
  for (double& t : n.val.data) t = 0.5 * t * (1.0 + std::erf(t * kInvSqrt2));
  return push(n);
}

Graph::NodeId Graph::softplus(NodeId x) {
  Node n;
  n.op = Op::softplus;
  n.in = {x, -1, -1};
  n.val = v(x);
  for (double& t : n.val.data)
    t = std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
  return push(n);
}

Graph::NodeId Graph::sum_all(NodeId x) {
  Node n;
  n.op = Op::sum_all;
  n.in = {x, -1, -1};
  double s = 0.0;
  for (double t : v(x).data) s += t;
  n.val = Tensor::scalar(s);
  return push(n);
}

Graph::NodeId Graph::softmax_rows(NodeId x) {
  const Tensor& xv = v(x);
  require_finite(xv, "softmax");
  UL_CHECK(xv.numel() > 0, "contract", "softmax: empty input");
  int m = xv.rows(), c = xv.cols();
  Node n;
  n.op = Op::softmax_rows;
  n.in = {x, -1, -1};
  n.val = Tensor::zeros({m, c});
  if (xv.ndim() == 1) n.val.shape = {c};
  for (int i = 0; i < m; ++i)
    softmax_row(&xv.data[static_cast<std::size_t>(i) * c],
                &n.val.data[static_cast<std::size_t>(i) * c], c);
  return push(n);
}

Graph::NodeId Graph::softmax_causal(NodeId x) {
  const Tensor& xv = v(x);
  require_finite(xv, "softmax");
  UL_CHECK(xv.ndim() == 2 && xv.rows() == xv.cols(), "contract",
           "softmax_causal: square matrix required");
  int t = xv.rows();
  Node n;
  n.op = Op::softmax_causal;
  n.in = {x, -1, -1};
  n.val = Tensor::zeros({t, t});
  for (int i = 0; i < t; ++i)
    softmax_row(&xv.data[static_cast<std::size_t>(i) * t],
                &n.val.data[static_cast<std::size_t>(i) * t], i + 1);
  return push(n);
}

Graph::NodeId Graph::embedding_rows(NodeId table, std::vector<int> ids) {
  const Tensor& tv = v(table);
  UL_CHECK(tv.ndim() == 2, "contract", "embedding_rows: table must be 2-D");
  int c = tv.cols();
  Node n;
  n.op = Op::embedding_rows;
  n.in = {table, -1, -1};
  n.val = Tensor::zeros({static_cast<int>(ids.size()), c});
  for (std::size_t j = 0; j < ids.size(); ++j) {
    UL_CHECK(ids[j] >= 0 && ids[j] < tv.rows(), "contract",
             "embedding_rows: id out of range");
    for (int k = 0; k < c; ++k)
      n.val.at(static_cast<int>(j), k) = tv.at(ids[j], k);
  }
  n.iargs = std::move(ids);
  return push(n);
}

Graph::NodeId Graph::logprob_sum(NodeId logits, std::vector<int> targets,
                                 int first_row) {
  const Tensor& lv = v(logits);
  require_finite(lv, "logprob_sum");
  int rows = lv.rows(), c = lv.cols();
  int nt = static_cast<int>(targets.size());
  UL_CHECK(nt > 0, "contract", "logprob_sum: empty target span");
  UL_CHECK(first_row >= 0 && first_row + nt <= rows, "contract",
           "logprob_sum: target span out of range");
  Node n;
  n.op = Op::logprob_sum;
  n.in = {logits, -1, -1};
  n.aux = Tensor::zeros({nt, c});  // per-target softmax rows
  double s = 0.0;
  for (int j = 0; j < nt; ++j) {
    UL_CHECK(targets[j] >= 0 && targets[j] < c, "contract",
             "logprob_sum: target id out of range");
    const double* row = &lv.data[static_cast<std::size_t>(first_row + j) * c];
    softmax_row(row, &n.aux.data[static_cast<std::size_t>(j) * c], c);
    s += row[targets[j]] - log_sum_exp(row, c);
  }
  n.val = Tensor::scalar(s);
  n.iargs = std::move(targets);
  n.iargs.push_back(first_row);
  return push(n);
}

Graph::NodeId Graph::cross_entropy(NodeId logits, std::vector<int> targets,
                                   int first_row) {
  double inv = -1.0 / static_cast<double>(targets.size());
  return scale(logprob_sum(logits, std::move(targets), first_row), inv);
}

Graph::NodeId Graph::kl_mean(NodeId logits, Tensor ref_probs, int first_row) {
  const Tensor& lv = v(logits);
  require_finite(lv, "kl_mean");
  require_finite(ref_probs, "kl_mean");
  UL_CHECK(ref_probs.ndim() == 2 && ref_probs.cols() == lv.cols(), "contract",
           "kl_mean: ref shape mismatch");
  int nr = ref_probs.rows(), c = lv.cols();
  UL_CHECK(nr > 0, "contract", "kl_mean: empty reference");
  UL_CHECK(first_row >= 0 && first_row + nr <= lv.rows(), "contract",
           "kl_mean: row span out of range");
  for (double q : ref_probs.data)
    UL_CHECK(q > 0.0, "contract", "kl_mean: reference probabilities must be positive");
  Node n;
  n.op = Op::kl_mean;
  n.in = {logits, -1, -1};
  n.aux = Tensor::zeros({nr, c});  // current softmax rows
  double total = 0.0;
  for (int i = 0; i < nr; ++i) {
    double* p = &n.aux.data[static_cast<std::size_t>(i) * c];
    softmax_row(&lv.data[static_cast<std::size_t>(first_row + i) * c], p, c);
    double kl = 0.0;
    for (int j = 0; j < c; ++j)
      kl += p[j] * (std::log(p[j]) - std::log(ref_probs.at(i, j)));
    total += kl;
  }
  n.val = Tensor::scalar(total / nr);
  n.iargs = {first_row};
  // keep the reference distribution on the tape for the backward pass
  Node holder;
  holder.op = Op::constant;
  holder.val = std::move(ref_probs);
  n.in[1] = push(holder);
  return push(n);
}

GradSet Graph::backward(NodeId loss, const ParamSet& ps) {
  UL_CHECK(!nodes_.empty(), "contract", "backward: empty graph");
  check_id(loss);
  UL_CHECK(v(loss).is_scalar(), "contract", "backward: loss must be scalar");
  UL_CHECK(bound_ == nullptr || bound_ == &ps, "contract",
           "backward: ParamSet differs from the one recorded");

  grads_.assign(nodes_.size(), Tensor());
  grad(loss).data[0] = 1.0;

  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (grads_[id].numel() == 0) continue;  // node does not influence loss
    const Tensor& g = grads_[id];
    switch (n.op) {
      case Op::constant:
      case Op::param:
        break;
      case Op::linear: {
        const Tensor& xv = v(n.in[0]);
        const Tensor& wv = v(n.in[1]);
        int m = xv.rows(), in = xv.cols(), out = wv.rows();
        Tensor& gx = grad(n.in[0]);
        Tensor tmp = Tensor::zeros({m, in});
        kernels::matmul(g.data.data(), wv.data.data(), tmp.data.data(), m, out, in);
        for (std::size_t i = 0; i < tmp.data.size(); ++i) gx.data[i] += tmp.data[i];
        Tensor& gw = grad(n.in[1]);
        Tensor tw = Tensor::zeros({out, in});
        kernels::matmul_tn(g.data.data(), xv.data.data(), tw.data.data(), m, out, in);
        for (std::size_t i = 0; i < tw.data.size(); ++i) gw.data[i] += tw.data[i];
        if (n.in[2] >= 0) {
          Tensor& gb = grad(n.in[2]);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < out; ++j) gb.data[j] += g.at(i, j);
        }
        break;
      }
      case Op::matmul: {
        const Tensor& av = v(n.in[0]);
        const Tensor& bv = v(n.in[1]);
        int m = av.rows(), k = av.cols(), c = bv.cols();
        Tensor& ga = grad(n.in[0]);
        Tensor ta = Tensor::zeros({m, k});
        kernels::matmul_nt(g.data.data(), bv.data.data(), ta.data.data(), m, c, k);
        for (std::size_t i = 0; i < ta.data.size(); ++i) ga.data[i] += ta.data[i];
        Tensor& gb = grad(n.in[1]);
        Tensor tb = Tensor::zeros({k, c});
        kernels::matmul_tn(av.data.data(), g.data.data(), tb.data.data(), m, k, c);
        for (std::size_t i = 0; i < tb.data.size(); ++i) gb.data[i] += tb.data[i];
        break;
      }
      case Op::matmul_nt: {
        const Tensor& av = v(n.in[0]);
        const Tensor& bv = v(n.in[1]);
        int m = av.rows(), k = av.cols(), r = bv.rows();
        Tensor& ga = grad(n.in[0]);
        Tensor ta = Tensor::zeros({m, k});
        kernels::matmul(g.data.data(), bv.data.data(), ta.data.data(), m, r, k);
        for (std::size_t i = 0; i < ta.data.size(); ++i) ga.data[i] += ta.data[i];
        Tensor& gb = grad(n.in[1]);
        Tensor tb = Tensor::zeros({r, k});
        kernels::matmul_tn(g.data.data(), av.data.data(), tb.data.data(), m, r, k);
        for (std::size_t i = 0; i < tb.data.size(); ++i) gb.data[i] += tb.data[i];
        break;
      }
      case Op::add: {
        Tensor& ga = grad(n.in[0]);
        Tensor& gb = grad(n.in[1]);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          ga.data[i] += g.data[i];
          gb.data[i] += g.data[i];
        }
        break;
      }
      case Op::add_n: {
        for (NodeId src : n.in_list) {
          Tensor& gs = grad(src);
          for (std::size_t i = 0; i < g.data.size(); ++i) gs.data[i] += g.data[i];
        }
        break;
      }
      case Op::scale: {
        Tensor& ga = grad(n.in[0]);
        for (std::size_t i = 0; i < g.data.size(); ++i)
          ga.data[i] += n.darg * g.data[i];
        break;
      }
      case Op::slice_cols: {
        Tensor& gx = grad(n.in[0]);
        int c0 = n.iargs[0];
        int m = g.rows(), w = g.cols();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j) gx.at(i, c0 + j) += g.at(i, j);
        break;
      }
      case Op::concat_cols: {
        int off = 0;
        int m = g.rows();
        for (NodeId src : n.in_list) {
          Tensor& gs = grad(src);
          int w = v(src).cols();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) gs.at(i, j) += g.at(i, off + j);
          off += w;
        }
        break;
      }
      case Op::concat_rows: {
        Tensor& ga = grad(n.in[0]);
        Tensor& gb = grad(n.in[1]);
        std::size_t na = ga.data.size();
        for (std::size_t i = 0; i < na; ++i) ga.data[i] += g.data[i];
        for (std::size_t i = 0; i < gb.data.size(); ++i)
          gb.data[i] += g.data[na + i];
        break;
      }
      case Op::layer_norm: {
        const Tensor& xv = v(n.in[0]);
        const Tensor& gv = v(n.in[1]);
        int m = xv.rows(), c = xv.cols();
        Tensor& gx = grad(n.in[0]);
        Tensor& gg = grad(n.in[1]);
        Tensor& gb = grad(n.in[2]);
        for (int i = 0; i < m; ++i) {
          double mu = n.aux.at(i, 0), inv = n.aux.at(i, 1);
          double s1 = 0.0, s2 = 0.0;
          for (int j = 0; j < c; ++j) {
            double xhat = (xv.at(i, j) - mu) * inv;
            double dxhat = g.at(i, j) * gv.data[j];
            s1 += dxhat;
            s2 += dxhat * xhat;
            gg.data[j] += g.at(i, j) * xhat;
            gb.data[j] += g.at(i, j);
          }
          for (int j = 0; j < c; ++j) {
            double xhat = (xv.at(i, j) - mu) * inv;
            double dxhat = g.at(i, j) * gv.data[j];
            gx.at(i, j) += inv * (dxhat - s1 / c - xhat * s2 / c);
          }
        }
        break;
      }
      case Op::gelu: {
        const Tensor& xv = v(n.in[0]);
        Tensor& gx = grad(n.in[0]);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          double x = xv.data[i];
          double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
          double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
          gx.data[i] += g.data[i] * (cdf + x * pdf);
        }
        break;
      }
      case Op::softplus: {
        const Tensor& xv = v(n.in[0]);
        Tensor& gx = grad(n.in[0]);
        for (std::size_t i = 0; i < g.data.size(); ++i)
          gx.data[i] += g.data[i] * sigmoid(xv.data[i]);
        break;
      }
      case Op::sum_all: {
        Tensor& gx = grad(n.in[0]);
        for (double& t : gx.data) t += g.data[0];
        break;
      }
      case Op::softmax_rows: {
        Tensor& gx = grad(n.in[0]);
        int m = n.val.rows(), c = n.val.cols();
        for (int i = 0; i < m; ++i) {
          const double* y = &n.val.data[static_cast<std::size_t>(i) * c];
          const double* gy = &g.data[static_cast<std::size_t>(i) * c];
          double dot = 0.0;
          for (int j = 0; j < c; ++j) dot += gy[j] * y[j];
          double* gz = &gx.data[static_cast<std::size_t>(i) * c];
          for (int j = 0; j < c; ++j) gz[j] += y[j] * (gy[j] - dot);
        }
        break;
      }
      case Op::softmax_causal: {
        Tensor& gx = grad(n.in[0]);
        int t = n.val.rows();
        for (int i = 0; i < t; ++i) {
          const double* y = &n.val.data[static_cast<std::size_t>(i) * t];
          const double* gy = &g.data[static_cast<std::size_t>(i) * t];
          double dot = 0.0;
          for (int j = 0; j <= i; ++j) dot += gy[j] * y[j];
          double* gz = &gx.data[static_cast<std::size_t>(i) * t];
          for (int j = 0; j <= i; ++j) gz[j] += y[j] * (gy[j] - dot);
        }
        break;
      }
      case Op::embedding_rows: {
        Tensor& gt = grad(n.in[0]);
        int c = n.val.cols();
        for (std::size_t j = 0; j < n.iargs.size(); ++j)
          for (int k = 0; k < c; ++k)
            gt.at(n.iargs[j], k) += g.at(static_cast<int>(j), k);
        break;
      }
      case Op::logprob_sum: {
        Tensor& gl = grad(n.in[0]);
        double gs = g.data[0];
        int nt = static_cast<int>(n.iargs.size()) - 1;
        int first_row = n.iargs[static_cast<std::size_t>(nt)];
        int c = n.aux.cols();
        for (int j = 0; j < nt; ++j) {
          const double* p = &n.aux.data[static_cast<std::size_t>(j) * c];
          double* gr = &gl.data[static_cast<std::size_t>(first_row + j) * c];
          int t = n.iargs[static_cast<std::size_t>(j)];
          for (int k = 0; k < c; ++k) gr[k] -= gs * p[k];
          gr[t] += gs;
        }
        break;
      }
      case Op::kl_mean: {
        Tensor& gl = grad(n.in[0]);
        const Tensor& q = v(n.in[1]);
        double gs = g.data[0];
        int nr = n.aux.rows(), c = n.aux.cols();
        int first_row = n.iargs[0];
        for (int i = 0; i < nr; ++i) {
          const double* p = &n.aux.data[static_cast<std::size_t>(i) * c];
          double kl = 0.0;
          for (int j = 0; j < c; ++j)
            kl += p[j] * (std::log(p[j]) - std::log(q.at(i, j)));
          double* gr = &gl.data[static_cast<std::size_t>(first_row + i) * c];
          for (int j = 0; j < c; ++j) {
            double cj = std::log(p[j]) - std::log(q.at(i, j));
            gr[j] += gs / nr * p[j] * (cj - kl);
          }
        }
        break;
      }
    }
  }

  GradSet out(ps);
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op != Op::param || grads_[id].numel() == 0) continue;
    Tensor& dst = out.at(n.pname);
    const Tensor& src = grads_[id];
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
  }
  grads_.clear();
  return out;
}

double finite_diff_grad(const std::function<double(const ParamSet&)>& f,
                        const ParamSet& params, const std::string& name,
                        std::size_t coord, double h) {
  UL_CHECK(h > 0.0, "contract", "finite_diff_grad: step must be positive");
  ParamSet p = params;
  Tensor& t = p.at(name);
  UL_CHECK(coord < t.numel(), "contract", "finite_diff_grad: coordinate out of range");
  double orig = t.data[coord];
  t.data[coord] = orig + h;
  double fp = f(p);
  t.data[coord] = orig - h;
  double fm = f(p);
  t.data[coord] = orig;
  return (fp - fm) / (2.0 * h);
}

}  // namespace ul
