#include "softgrasp/tape.hpp"

#include <cmath>
#include <string>

#include "softgrasp/error.hpp"

namespace softgrasp::nn {

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

[[noreturn]] void fail(const std::string& op, const std::string& detail) {
  throw Error("shape_mismatch", op + ": " + detail);
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= size()) throw Error("not_on_tape", "variable " + std::to_string(v.id) + " is not on this tape");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || v.id >= size()) throw Error("not_on_tape", "variable " + std::to_string(v.id) + " is not on this tape");
  return nodes_[v.id];
}

const Matrix& Tape::val(int id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

const Matrix& Tape::value(Var v) const {
  node(v);
  return val(v.id);
}

bool Tape::needs(Var v) const { return record_ && node(v).requires_grad; }

bool Tape::has_grad(Var v) const { return node(v).grad_ready; }

const Matrix& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.grad_ready) throw Error("not_on_tape", "variable " + std::to_string(v.id) + " has no gradient");
  return n.grad;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (!(m.rows() == 1 && m.cols() == 1)) fail("scalar", "expected 1x1, got " + shape(m));
  return m(0, 0);
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && record_;
  nodes_.push_back(std::move(n));
  return Var{size() - 1};
}

Var Tape::param(const Matrix& value, bool requires_grad) {
  Node n;
  n.external = &value;
  n.requires_grad = requires_grad && record_;
  nodes_.push_back(std::move(n));
  return Var{size() - 1};
}

Var Tape::push(Matrix value, bool requires_grad, Backward fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && record_;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{size() - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!n.grad_ready) {
    n.grad = g;
    n.grad_ready = true;
  } else {
    n.grad += g;
  }
}

void Tape::accumulate(Var v, Matrix&& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!n.grad_ready) {
    n.grad = std::move(g);
    n.grad_ready = true;
  } else {
    n.grad += g;
  }
}

template <class L, class R>
void Tape::accumulate_product(Var v, const L& l, const R& r) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!n.grad_ready) {
    n.grad.resize(l.rows(), r.cols());
    n.grad.noalias() = l * r;
    n.grad_ready = true;
  } else {
    n.grad.noalias() += l * r;
  }
}

Matrix& Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (!n.grad_ready) {
    n.grad.setZero(val(v.id).rows(), val(v.id).cols());
    n.grad_ready = true;
  }
  return n.grad;
}

void Tape::backward(Var target) {
  if (!record_) throw Error("not_on_tape", "backward on a tape that does not record");
  const Matrix& t = value(target);
  if (!(t.rows() == 1 && t.cols() == 1)) fail("backward", "target must be 1x1, got " + shape(t));
  for (auto& n : nodes_) {
    n.grad_ready = false;
    n.grad.resize(0, 0);
  }
  Node& root = nodes_[target.id];
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  root.grad_ready = true;
  for (int id = target.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad_ready && n.backward) {
      n.backward(*this, id, n.grad);
      n.grad = Matrix();
      n.grad_ready = false;
    }
  }
}

// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (!(A.cols() == B.rows())) fail("matmul", shape(A) + " * " + shape(B));
  return push(A * B, needs(a) || needs(b), [a, b](Tape& t, int, Matrix& g) {
    if (t.needs(a)) t.accumulate_product(a, g, t.val(b.id).transpose());
    if (t.needs(b)) t.accumulate_product(b, t.val(a.id).transpose(), g);
  });
}

Var Tape::linear(Var x, Var w, Var b) {
  const Matrix& X = value(x);
  const Matrix& W = value(w);
  const Matrix& B = value(b);
  if (!(X.cols() == W.rows())) fail("linear", shape(X) + " * " + shape(W));
  if (!(B.rows() == 1 && B.cols() == W.cols())) fail("linear", "bias " + shape(B) + " for weight " + shape(W));
  Matrix y(X.rows(), W.cols());
  y.noalias() = X * W;
  y.rowwise() += B.row(0);
  return push(std::move(y), needs(x) || needs(w) || needs(b), [x, w, b](Tape& t, int, Matrix& g) {
    if (t.needs(w)) t.accumulate_product(w, t.val(x.id).transpose(), g);
    if (t.needs(b)) t.accumulate(b, Matrix(g.colwise().sum()));
    if (t.needs(x)) t.accumulate_product(x, g, t.val(w.id).transpose());
  });
}

Var Tape::add(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (!(A.rows() == B.rows() && A.cols() == B.cols())) fail("add", shape(A) + " + " + shape(B));
  return push(A + B, needs(a) || needs(b), [a, b](Tape& t, int, Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, std::move(g));
  });
}

Var Tape::sub(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (!(A.rows() == B.rows() && A.cols() == B.cols())) fail("sub", shape(A) + " - " + shape(B));
  return push(A - B, needs(a) || needs(b), [a, b](Tape& t, int, Matrix& g) {
    t.accumulate(a, g);
    if (!t.needs(b)) return;
    g *= -1.0;
    t.accumulate(b, std::move(g));
  });
}

Var Tape::scale(Var x, double s) {
  return push(value(x) * s, needs(x), [x, s](Tape& t, int, Matrix& g) {
    g *= s;
    t.accumulate(x, std::move(g));
  });
}

Var Tape::relu(Var x) {
  return push(value(x).cwiseMax(0.0), needs(x), [x](Tape& t, int self, Matrix& g) {
    const Matrix& y = t.val(self);
    g.array() *= (y.array() > 0.0).cast<double>();
    t.accumulate(x, std::move(g));
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& X = value(x);
  const Matrix& G = value(gain);
  const Matrix& B = value(bias);
  if (!(G.rows() == 1 && G.cols() == X.cols() && B.rows() == 1 && B.cols() == X.cols())) fail("layer_norm",
          "gain " + shape(G) + ", bias " + shape(B) + " for input " + shape(X));
  const auto d = static_cast<double>(X.cols());
  Matrix xhat(X.rows(), X.cols());
  Eigen::VectorXd inv_std(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double mu = X.row(i).sum() / d;
    const auto centered = (X.row(i).array() - mu).eval();
    const double var = centered.square().sum() / d;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i);
  }
  Matrix y = xhat;
  y.array().rowwise() *= G.row(0).array();
  y.rowwise() += B.row(0);
  const bool req = needs(x) || needs(gain) || needs(bias);
  return push(std::move(y), req,
              [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), d](Tape& t, int, Matrix& g) {
                if (t.needs(gain)) t.accumulate(gain, Matrix((g.array() * xhat.array()).colwise().sum().matrix()));
                if (t.needs(bias)) t.accumulate(bias, Matrix(g.colwise().sum()));
                if (!t.needs(x)) return;
                g.array().rowwise() *= t.val(gain.id).row(0).array();  // now d/dxhat
                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                  const double m1 = g.row(i).sum() / d;
                  const double m2 = g.row(i).dot(xhat.row(i)) / d;
                  g.row(i) = inv_std(i) * (g.row(i).array() - m1 - xhat.row(i).array() * m2);
                }
                t.accumulate(x, std::move(g));
              });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (!(!parts.empty())) fail("concat_cols", "no inputs");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool req = false;
  for (Var p : parts) {
    if (!(value(p).rows() == rows)) fail("concat_cols", "row counts differ");
    cols += value(p).cols();
    req = req || needs(p);
  }
  Matrix y(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    y.middleCols(c, value(p).cols()) = value(p);
    c += value(p).cols();
  }
  return push(std::move(y), req, [parts](Tape& t, int, Matrix& g) {
    Eigen::Index c = 0;
    for (Var p : parts) {
      const Eigen::Index w = t.val(p.id).cols();
      if (t.needs(p)) t.accumulate(p, Matrix(g.middleCols(c, w)));
      c += w;
    }
  });
}

Var Tape::slice_rows(Var x, int begin, int count) {
  const Matrix& X = value(x);
  if (!(begin >= 0 && count >= 0 && begin + count <= X.rows())) fail("slice_rows",
          "rows [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " + shape(X));
  return push(X.middleRows(begin, count), needs(x), [x, begin, count](Tape& t, int, Matrix& g) {
    if (t.needs(x)) t.grad_slot(x).middleRows(begin, count) += g;
  });
}

Var Tape::slice_cols(Var x, int begin, int count) {
  const Matrix& X = value(x);
  if (!(begin >= 0 && count >= 0 && begin + count <= X.cols())) fail("slice_cols",
          "cols [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " + shape(X));
  return push(X.middleCols(begin, count), needs(x), [x, begin, count](Tape& t, int, Matrix& g) {
    if (t.needs(x)) t.grad_slot(x).middleCols(begin, count) += g;
  });
}

Var Tape::gather_rows(Var x, const std::vector<int>& index) {
  const Matrix& X = value(x);
  Matrix y(static_cast<Eigen::Index>(index.size()), X.cols());
  for (size_t k = 0; k < index.size(); ++k) {
    if (!(index[k] >= 0 && index[k] < X.rows())) fail("gather_rows", "index " + std::to_string(index[k]) + " of " + shape(X));
    y.row(static_cast<Eigen::Index>(k)) = X.row(index[k]);
  }
  return push(std::move(y), needs(x), [x, index](Tape& t, int, Matrix& g) {
    if (!t.needs(x)) return;
    Matrix& dx = t.grad_slot(x);
    for (size_t k = 0; k < index.size(); ++k) dx.row(index[k]) += g.row(static_cast<Eigen::Index>(k));
  });
}

Var Tape::scatter_add_rows(Var x, const std::vector<int>& index, int rows) {
  const Matrix& X = value(x);
  if (!(static_cast<Eigen::Index>(index.size()) == X.rows())) fail("scatter_add_rows",
          std::to_string(index.size()) + " indices for " + shape(X));
  Matrix y = Matrix::Zero(rows, X.cols());
  for (size_t k = 0; k < index.size(); ++k) {
    if (!(index[k] >= 0 && index[k] < rows)) fail("scatter_add_rows", "index " + std::to_string(index[k]) + " out of range");
    y.row(index[k]) += X.row(static_cast<Eigen::Index>(k));
  }
  return push(std::move(y), needs(x), [x, index](Tape& t, int, Matrix& g) {
    Matrix dx(static_cast<Eigen::Index>(index.size()), g.cols());
    for (size_t k = 0; k < index.size(); ++k) dx.row(static_cast<Eigen::Index>(k)) = g.row(index[k]);
    t.accumulate(x, std::move(dx));
  });
}

Var Tape::affine_cols(Var x, const RowVector& scale, const RowVector& shift) {
  const Matrix& X = value(x);
  if (!(scale.size() == X.cols() && shift.size() == X.cols())) fail("affine_cols",
          std::to_string(scale.size()) + " channels for " + shape(X));
  Matrix y = X;
  y.array().rowwise() *= scale.array();
  y.rowwise() += shift;
  return push(std::move(y), needs(x), [x, scale](Tape& t, int, Matrix& g) {
    g.array().rowwise() *= scale.array();
    t.accumulate(x, std::move(g));
  });
}

Var Tape::row_norm(Var x, double eps) {
  const Matrix& X = value(x);
  Matrix y = (X.rowwise().squaredNorm().array() + eps).sqrt().matrix();
  return push(std::move(y), needs(x), [x](Tape& t, int self, Matrix& g) {
    const Matrix& X = t.val(x.id);
    const Matrix& y = t.val(self);
    Matrix dx(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      dx.row(i) = y(i, 0) > 0.0 ? (X.row(i) * (g(i, 0) / y(i, 0))).eval() : RowVector::Zero(X.cols()).eval();
    t.accumulate(x, std::move(dx));
  });
}

Var Tape::sum(Var x) {
  Matrix y(1, 1);
  y(0, 0) = value(x).sum();
  return push(std::move(y), needs(x), [x](Tape& t, int, Matrix& g) {
    t.accumulate(x, Matrix(Matrix::Constant(t.val(x.id).rows(), t.val(x.id).cols(), g(0, 0))));
  });
}

Var Tape::mean(Var x) {
  const Matrix& X = value(x);
  if (!(X.size() > 0)) fail("mean", "empty input");
  const auto n = static_cast<double>(X.size());
  Matrix y(1, 1);
  y(0, 0) = X.sum() / n;
  return push(std::move(y), needs(x), [x, n](Tape& t, int, Matrix& g) {
    t.accumulate(x, Matrix(Matrix::Constant(t.val(x.id).rows(), t.val(x.id).cols(), g(0, 0) / n)));
  });
}

Var Tape::mse(Var pred, const Matrix& target) {
  const Matrix& P = value(pred);
  if (!(P.rows() == target.rows() && P.cols() == target.cols())) fail("mse", shape(P) + " vs target " + shape(target));
  if (!(P.size() > 0)) fail("mse", "empty input");
  const auto n = static_cast<double>(P.size());
  Matrix y(1, 1);
  y(0, 0) = (P - target).squaredNorm() / n;
  return push(std::move(y), needs(pred), [pred, target, n](Tape& t, int, Matrix& g) {
    t.accumulate(pred, Matrix((t.val(pred.id) - target) * (2.0 * g(0, 0) / n)));
  });
}

Var Tape::smooth_max(Var x, double beta) {
  const Matrix& X = value(x);
  if (!(X.size() > 0)) fail("smooth_max", "empty input");
  if (!(beta > 0.0)) throw Error("invalid_argument", "smooth_max beta must be positive");
  const double m = X.maxCoeff();
  Matrix w = (beta * (X.array() - m)).exp().matrix();
  const double z = w.sum();
  w /= z;  // softmax weights
  Matrix y(1, 1);
  y(0, 0) = m + std::log(z) / beta;
  return push(std::move(y), needs(x),
              [x, w = std::move(w)](Tape& t, int, Matrix& g) { t.accumulate(x, Matrix(w * g(0, 0))); });
}

}  // namespace softgrasp::nn
