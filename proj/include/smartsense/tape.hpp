#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "smartsense/common.hpp"

namespace smartsense {

// Reverse-mode differentiation over dense matrices. Operations append nodes
// to the tape; backward() walks the tape in reverse and accumulates gradients
// into every node created with leaf(). Vectors are column matrices.
//
// Batched inputs are stacked along rows. The block_* operations treat a
// (N*k) x c matrix as N independent k x c blocks, which is how per-instance
// attention is expressed without per-instance graphs.
class Tape {
 public:
  struct Var {
    std::int32_t id = -1;
  };

  Var constant(Matrix value);
  Var leaf(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  // Zero matrix of the node's shape if the node was never reached.
  Matrix grad(Var v) const;

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  // m with bias^T added to every row; bias is cols x 1.
  Var add_row_broadcast(Var m, Var bias);
  Var scale(Var a, double s);
  Var transpose(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var softplus(Var a);
  // Row dots of two equally shaped matrices; result is n x 1.
  Var rowwise_dot(Var a, Var b);
  Var softmax_rows(Var a);
  Var layer_norm(Var a, Var gain, Var bias, double eps);
  // Multiplies by a fixed mask (dropout); mask is not differentiated.
  Var mask(Var a, Matrix mask);
  Var slice_cols(Var a, Index start, Index count);
  Var concat_cols(const std::vector<Var>& parts);
  // Row-interleaves p equally shaped matrices: output row i*p + j is row i of
  // part j. Turns per-event embedding rows into stacked k x d blocks.
  Var interleave_rows(const std::vector<Var>& parts);
  // Collects rows of a table; backward scatter-adds into the table.
  Var gather_rows(Var table, std::vector<Index> rows);
  // Vertically repeats a block `times` times; backward sums the copies.
  Var tile_rows(Var a, Index times);
  // Repeats each row `times` consecutive times; backward sums each group.
  Var repeat_rows(Var a, Index times);
  // (N*k) x 1 column reshaped into N x k, block per row.
  Var fold_rows(Var a, Index k);
  // Per-block product: A is (N*rows_a) x ca, B is (N*rows_b) x cb with
  // ca == rows_b; result is (N*rows_a) x cb with Z_i = A_i * B_i.
  Var block_matmul(Var a, Var b, Index rows_a, Index rows_b);
  // Per-block product with the second factor transposed and a fixed scale:
  // Z_i = A_i * B_i^T * s. A is (N*rows_a) x c, B is (N*rows_b) x c.
  Var block_matmul_nt(Var a, Var b, Index rows_a, Index rows_b, double s);
  Var sum(Var a);
  // Mean over rows of logsumexp(row) - row[target]; result is 1 x 1.
  Var cross_entropy_mean(Var logits, std::vector<Index> targets);

  // Seeds d(out)/d(out) = 1 and propagates to every reachable node.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until first accumulation
    std::function<void(Tape&)> back;
    bool needs_grad = false;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&)> back);
  bool wants(Var v) const { return nodes_[v.id].needs_grad; }
  // Gradient accumulator, allocating zeros on first touch.
  Matrix& grad_ref(Var v);
  bool has_grad(Var v) const { return nodes_[v.id].grad.size() > 0; }

  std::vector<Node> nodes_;
};

}  // namespace smartsense
