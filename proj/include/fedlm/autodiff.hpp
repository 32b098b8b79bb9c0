#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "fedlm/tensor.hpp"

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape records every op in evaluation order. backward() walks the records
// in exact reverse order and accumulates adjoints into parents that require
// gradients. A tape is single-use and owned by one unit of work.
namespace fedlm::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op output. `fn` is kept only when some parent needs a
  // gradient. Non-finite outputs raise NumericError naming `op`.
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents,
             BackwardFn fn);
  Var record(const char* op, Tensor value, std::span<const Var> parents,
             BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Adjoint of `id`, allocated as zeros on first use.
  Tensor& grad_mut(std::size_t id);
  // Adjoint after backward(); a zero tensor if nothing flowed into it.
  Tensor grad(Var v) const;
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// --- ops -------------------------------------------------------------------
// Matrices are rank-2 tensors; rank-1 tensors act as a single row where a
// vector argument is documented.

Var matmul(Var a, Var b);     // [m,k] x [k,n]
Var matmul_bt(Var a, Var b);  // [m,k] x [n,k]^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);          // elementwise
Var add_row(Var a, Var bias);   // [m,n] + [n] broadcast over rows
Var scale(Var a, double c);
Var one_minus(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var gelu(Var a);  // tanh approximation
Var sum(Var a);   // scalar
Var gather_rows(Var table, std::span<const int> ids);  // [V,d] -> [n,d]
Var slice_cols(Var a, std::size_t start, std::size_t width);
Var concat_cols(Var a, Var b);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var layer_norm(Var x, Var gain, Var bias, double eps);

// Multi-head causal self-attention. q, k, v are [batch*seq, d] with rows
// ordered batch-major; d must be divisible by heads.
Var causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq,
                     std::size_t heads);

// Mean over weighted rows of -log softmax(logits)[target]. Rows with weight 0
// are skipped; weights must be 0 or 1. Throws IndexError on a target outside
// [0, V) for a counted row.
Var cross_entropy(Var logits, std::span<const int> targets,
                  std::span<const std::uint8_t> mask);
Var softmax_cross_entropy(Var logits, std::span<const int> targets);

// Forward-only helper used by evaluation: sum of nats over counted rows.
double cross_entropy_sum(const Tensor& logits, std::span<const int> targets,
                         std::span<const std::uint8_t> mask);

}  // namespace fedlm::ad
