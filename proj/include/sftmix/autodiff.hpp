#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sftmix/dense_array.hpp"

namespace sftmix::ad {

class Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the computation graph: a value, the parents it was computed
// from, and the local-gradient rule (identified by `op`, realized by
// `backward_fn`). Node ids increase in creation order, which is a topological
// order of the DAG; the backward pass walks ids downward, so accumulation
// order is fixed and runs are reproducible.
class Node {
 public:
  std::uint64_t id = 0;
  std::string op;  // local-gradient rule identifier
  DenseArray value;
  DenseArray grad;  // allocated lazily; same shape as value
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  DenseArray& grad_buffer();  // materializes zeros on first use
};

// Value-semantic handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const DenseArray& value() const;
  // Gradient accumulated by the last backward(); zeros if untouched.
  const DenseArray& grad() const;
  void clear_grad();
  // In-place value mutation for optimizer updates on leaves.
  DenseArray& mutable_value();

  std::uint64_t id() const;
  const std::string& op() const;
  bool requires_grad() const;
  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

Var leaf(DenseArray value, bool requires_grad = true);
Var constant(DenseArray value);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// ca*a + cb*b, elementwise, same shapes.
Var lincomb(const Var& a, const Var& b, double ca, double cb);
// Row-wise convex mix of two [N x d] arrays: out_r = lam[r]*a_r + (1-lam[r])*b_r.
Var mix_rows(const Var& a, const Var& b, const std::vector<double>& lam);
Var matmul(const Var& a, const Var& b);
// Row gather from an embedding table [V x d]; backward scatter-adds.
Var embedding_rows(const Var& table, const std::vector<int>& ids);
Var gather_rows(const Var& x, const std::vector<std::size_t>& rows);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var gelu(const Var& x);
// Softmax over the last axis with max-subtraction.
Var softmax(const Var& logits);
// Multi-head causal self-attention over a [B*L x d] layout. Position i of row
// b attends to positions j <= i with j < valid_len[b]; padding is never a key.
Var causal_attention(const Var& q, const Var& k, const Var& v, int n_heads,
                     const std::vector<int>& valid_len, int batch, int seq_len);

// H(target, softmax(logits)) for a single distribution; log-softmax fused.
// target must be entrywise >= 0, sum to 1 within 1e-9, and match length.
Var cross_entropy_soft(const DenseArray& target, const Var& logits);

// Weighted token NLL over logits rows: sum_r w[r] * (-log softmax(row_r)[tok[r]]) / divisor.
Var nll_rows(const Var& logits, const std::vector<int>& tok,
             const std::vector<double>& row_weight, double divisor);

// Soft-pair cross-entropy over logits rows with targets
// lam[r]*onehot(tok_a[r]) + (1-lam[r])*onehot(tok_b[r]), divided by divisor.
Var soft_pair_nll_rows(const Var& logits, const std::vector<int>& tok_a,
                       const std::vector<int>& tok_b, const std::vector<double>& lam,
                       double divisor);

Var sum(const Var& a);
Var mean(const Var& a);

// Reverse-mode sweep from a scalar root. Gradients accumulate (sum over all
// paths) into every reachable node that requires grad; call clear_grad() on
// leaves between independent sweeps.
void backward(const Var& root);

// Non-graph softmax of a contiguous slice; shared by ops and oracles.
void softmax_slice(const double* x, double* out, std::size_t n);
double log_sum_exp(const double* x, std::size_t n);

}  // namespace sftmix::ad
