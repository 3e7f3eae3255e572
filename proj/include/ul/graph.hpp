#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "ul/param.hpp"
#include "ul/tensor.hpp"

namespace ul {

// Tape-based reverse-mode autodiff. Ops evaluate eagerly as they are
// recorded; backward walks the tape in reverse creation order, so gradient
// accumulation order is fixed and runs are bit-reproducible.
//
// Param leaves hold non-owning views into the bound ParamSet, which must
// outlive the graph. One graph per (model, sample) forward pass.
class Graph {
 public:
  using NodeId = int;

  NodeId constant(Tensor v);
  NodeId param(const ParamSet& ps, const std::string& name);

  // y = x * W^T (+ b broadcast over rows). W is (out x in), b is (out).
  NodeId linear(NodeId x, NodeId w, NodeId b = -1);
  NodeId matmul(NodeId a, NodeId b);     // (m x k)(k x n)
  NodeId matmul_nt(NodeId a, NodeId b);  // (m x k)(n x k)^T
  NodeId add(NodeId a, NodeId b);
  NodeId add_n(const std::vector<NodeId>& xs);
  NodeId scale(NodeId a, double s);
  NodeId slice_cols(NodeId x, int c0, int c1);
  NodeId concat_cols(const std::vector<NodeId>& xs);
  NodeId concat_rows(NodeId a, NodeId b);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);  // rowwise, eps 1e-5
  NodeId gelu(NodeId x);  // exact erf form
  NodeId softplus(NodeId x);
  NodeId sum_all(NodeId x);  // scalar sum of all elements

  // Rowwise stable softmax. Rejects non-finite input.
  NodeId softmax_rows(NodeId x);
  // Square score matrix; row i is a softmax over columns 0..i, the rest
  // of the row is exactly zero.
  NodeId softmax_causal(NodeId x);

  NodeId embedding_rows(NodeId table, std::vector<int> ids);

  // sum_j log softmax(logits[first_row + j])[targets[j]]; scalar.
  NodeId logprob_sum(NodeId logits, std::vector<int> targets, int first_row);
  // Mean negative log-probability over the targeted rows; scalar.
  NodeId cross_entropy(NodeId logits, std::vector<int> targets, int first_row);
  // Mean over ref_probs rows j of KL(softmax(logits[first_row+j]) || ref_probs[j]).
  // ref_probs rows must be strictly positive distributions; no gradient
  // flows into them.
  NodeId kl_mean(NodeId logits, Tensor ref_probs, int first_row);

  const Tensor& value(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  // Reverse pass from a scalar loss. Returns gradients aligned with ps;
  // parameters absent from the recorded graph get exact zeros.
  GradSet backward(NodeId loss, const ParamSet& ps);

 private:
  enum class Op {
    constant, param, linear, matmul, matmul_nt, add, add_n, scale,
    slice_cols, concat_cols, concat_rows, layer_norm, gelu, softplus,
    sum_all, softmax_rows, softmax_causal, embedding_rows, logprob_sum,
    kl_mean
  };

  struct Node {
    Op op;
    std::array<NodeId, 3> in{-1, -1, -1};
    std::vector<NodeId> in_list;
    const Tensor* view = nullptr;
    Tensor val;
    Tensor aux;        // op-specific saved forward state
    std::vector<int> iargs;
    double darg = 0.0;
    std::string pname;
  };

  NodeId push(Node n);
  const Tensor& v(NodeId id) const;
  Tensor& grad(NodeId id);
  NodeId check_id(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  const ParamSet* bound_ = nullptr;
};

// Central-difference derivative of f at params[name][coord] with step h.
// Used as the independent oracle for backward().
double finite_diff_grad(const std::function<double(const ParamSet&)>& f,
                        const ParamSet& params, const std::string& name,
                        std::size_t coord, double h);

}  // namespace ul
