#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "softgrasp/matrix.hpp"

namespace softgrasp::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff over dense row-major matrices.
///
/// Values are recorded in creation order; backward() visits them in reverse.
/// With recording disabled the tape only computes values (inference).
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Leaf owning a copy of `value`.
  Var leaf(Matrix value, bool requires_grad = true);
  /// Leaf referring to an external matrix that must outlive the tape.
  Var param(const Matrix& value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  const Matrix& value(Var v) const;
  /// Gradient of the last backward() target w.r.t. leaf `v`. Intermediate
  /// gradients are consumed during backward() and not kept.
  /// Throws Error{"not_on_tape"} for unknown vars or vars without gradients.
  const Matrix& grad(Var v) const;
  bool has_grad(Var v) const;
  double scalar(Var v) const;

  /// Seeds d(target)/d(target) = 1 for a 1x1 target and propagates.
  void backward(Var target);

  // Operations. Shapes are checked; mismatches throw Error{"shape_mismatch"}.
  Var matmul(Var a, Var b);
  /// x * w + b with b a 1 x out row broadcast over rows.
  Var linear(Var x, Var w, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var x, double s);
  Var relu(Var x);
  /// Row-wise layer norm followed by per-column gain and bias (1 x d rows).
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_rows(Var x, int begin, int count);
  Var slice_cols(Var x, int begin, int count);
  /// out[k] = x[index[k]]
  Var gather_rows(Var x, const std::vector<int>& index);
  /// out[index[k]] += x[k] over k ascending; out has `rows` rows.
  Var scatter_add_rows(Var x, const std::vector<int>& index, int rows);
  /// Per column: y = x * scale + shift.
  Var affine_cols(Var x, const RowVector& scale, const RowVector& shift);
  /// n x 1 column of sqrt(|row|^2 + eps).
  Var row_norm(Var x, double eps = 0.0);
  Var sum(Var x);
  Var mean(Var x);
  /// mean((pred - target)^2) over all entries.
  Var mse(Var pred, const Matrix& target);
  /// (1/beta) log sum exp(beta x) over all entries.
  Var smooth_max(Var x, double beta);

 private:
  // grad_out belongs to the node being visited and may be moved from.
  using Backward = std::function<void(Tape&, int self, Matrix& grad_out)>;

  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    bool grad_ready = false;
    Backward backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  const Matrix& val(int id) const;
  bool needs(Var v) const;
  Var push(Matrix value, bool requires_grad, Backward fn);
  void accumulate(Var v, const Matrix& g);
  void accumulate(Var v, Matrix&& g);
  // Adds l * r into the gradient of v without a product temporary.
  template <class L, class R>
  void accumulate_product(Var v, const L& l, const R& r);
  // Gradient buffer of v, zero-initialised on first use.
  Matrix& grad_slot(Var v);

  bool record_;
  std::deque<Node> nodes_;  // deque keeps references stable on growth
};

}  // namespace softgrasp::nn
