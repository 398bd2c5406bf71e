// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include "tai/gradcore.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "tai/error.hpp"

namespace tai::grad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor& t) { return MapC(t.data().data(), t.rows(), t.cols()); }
Map view(Tensor& t) { return Map(t.data().data(), t.rows(), t.cols()); }

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, std::string_view why) {
  throw ValidationError(std::string(op) + ": " + std::string(why) + " (got " + shape_str(a) + ")");
}

Tape* tape_of(std::initializer_list<const Var*> vars) {
  Tape* tape = nullptr;
  for (const Var* v : vars) {
    if (v->tape() == nullptr) continue;
    if (tape != nullptr && tape != v->tape())
      throw std::logic_error("inputs recorded on different tapes");
    tape = v->tape();
  }
  return tape;
}

Var finish(std::string_view op, Tensor value, std::initializer_list<const Var*> inputs,
           BackwardFn backward) {
  Tape* tape = tape_of(inputs);
  if (tape == nullptr) return Var(std::move(value));
  return tape->record(op, std::move(value), inputs, std::move(backward));
}

Tensor like(const Tensor& t) { return Tensor(t.shape()); }

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

void require_matrix(std::string_view op, const Tensor& t) {
  if (t.rank() > 2) shape_error(op, t.shape(), "expected rank <= 2");
}

void check_segments(std::string_view op, std::span<const Segment> segs, std::size_t rows) {
  for (const Segment& s : segs) {
    if (s.length == 0 || s.offset + s.length > rows)
      throw ValidationError(std::string(op) + ": segment [" + std::to_string(s.offset) + ", +" +
                            std::to_string(s.length) + ") out of range for " +
                            std::to_string(rows) + " rows");
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  data_.assign(n, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (n != data_.size())
    throw ValidationError("tensor: shape " + shape_str(shape_) + " needs " + std::to_string(n) +
                          " values, got " + std::to_string(data_.size()));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : t.data_) x = dist(rng);
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  if (shape_.size() == 2) return shape_[0];
  throw ValidationError("tensor: rank " + std::to_string(shape_.size()) + " has no matrix view");
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ValidationError("item: tensor " + shape_str(shape_) + " is not scalar");
  return data_[0];
}

std::vector<double> Tensor::row(std::size_t r) const {
  std::size_t c = cols();
  return {data_.begin() + static_cast<std::ptrdiff_t>(r * c),
          data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
}

// ---- Tape ---------------------------------------------------------------

Var Tape::append(Node node) {
  Var out(node.value);
  out.tape_ = this;
  out.node_ = static_cast<std::ptrdiff_t>(nodes_.size());
  nodes_.push_back(std::move(node));
  return out;
}

Var Tape::leaf(std::shared_ptr<const Tensor> value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  return append(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<const Var*> inputs,
                 BackwardFn backward) {
  Node n;
  n.op = op;
  n.value = std::make_shared<const Tensor>(std::move(value));
  for (const Var* v : inputs)
    if (v->tape() == this) n.inputs.push_back(v->node());
  n.backward = std::move(backward);
  return append(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.op = op;
  n.value = std::make_shared<const Tensor>(std::move(value));
  for (const Var& v : inputs)
    if (v.tape() == this) n.inputs.push_back(v.node());
  n.backward = std::move(backward);
  return append(std::move(n));
}

Tensor* Tape::grad_buffer(const Var& v) {
  if (v.tape() != this) return nullptr;
  Node& n = nodes_.at(static_cast<std::size_t>(v.node()));
  if (!n.grad) n.grad = Tensor(n.value->shape());
  return &*n.grad;
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) throw ValidationError("backward: root is not on this tape");
  if (root.value().size() != 1)
    throw ValidationError("backward: root must be scalar, got " + shape_str(root.shape()));
  for (Node& n : nodes_) {
    n.grad.reset();
    n.visits = 0;
  }
  auto top = static_cast<std::size_t>(root.node());
  nodes_[top].grad = Tensor(root.shape(), {1.0});
  for (std::size_t i = top + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad) continue;
    ++n.visits;
    if (n.backward) n.backward(*n.grad, *this);
  }
}

std::optional<Tensor> Tape::grad(const Var& v) const {
  if (v.tape() != this) return std::nullopt;
  const Node& n = nodes_.at(static_cast<std::size_t>(v.node()));
  if (n.grad) return *n.grad;
  return Tensor(n.value->shape());
}

// ---- ops ----------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("matmul", A);
  require_matrix("matmul", B);
  if (A.cols() != B.rows()) shape_error("matmul", A.shape(), B.shape());
  Tensor out(matrix_shape(A.rows(), B.cols()));
  view(out).noalias() = view(A) * view(B);
  return finish("matmul", std::move(out), {&a, &b}, [a, b](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_buffer(a)) view(*ga).noalias() += view(g) * view(b.value()).transpose();
    if (Tensor* gb = tape.grad_buffer(b)) view(*gb).noalias() += view(a.value()).transpose() * view(g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("matmul_nt", A);
  require_matrix("matmul_nt", B);
  if (A.cols() != B.cols()) shape_error("matmul_nt", A.shape(), B.shape());
  Tensor out(matrix_shape(A.rows(), B.rows()));
  view(out).noalias() = view(A) * view(B).transpose();
  return finish("matmul_nt", std::move(out), {&a, &b}, [a, b](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_buffer(a)) view(*ga).noalias() += view(g) * view(b.value());
    if (Tensor* gb = tape.grad_buffer(b)) view(*gb).noalias() += view(g).transpose() * view(a.value());
  });
}

Var transpose(const Var& a) {
  const Tensor& A = a.value();
  require_matrix("transpose", A);
  Tensor out(matrix_shape(A.cols(), A.rows()));
  view(out) = view(A).transpose();
  return finish("transpose", std::move(out), {&a}, [a](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_buffer(a)) view(*ga) += view(g).transpose();
  });
}

namespace {

template <typename F>
Tensor zip(std::string_view op, const Tensor& a, const Tensor& b, F f) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
  Tensor out = like(a);
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

void add_into(Tensor* dst, const Tensor& src, double s = 1.0) {
  if (dst == nullptr) return;
  auto d = dst->data();
  auto v = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * v[i];
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tensor out = zip("add", a.value(), b.value(), [](double x, double y) { return x + y; });
  return finish("add", std::move(out), {&a, &b}, [a, b](const Tensor& g, Tape& tape) {
    add_into(tape.grad_buffer(a), g);
    add_into(tape.grad_buffer(b), g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tensor out = zip("sub", a.value(), b.value(), [](double x, double y) { return x - y; });
  return finish("sub", std::move(out), {&a, &b}, [a, b](const Tensor& g, Tape& tape) {
    add_into(tape.grad_buffer(a), g);
    add_into(tape.grad_buffer(b), g, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  Tensor out = zip("mul", a.value(), b.value(), [](double x, double y) { return x * y; });
  return finish("mul", std::move(out), {&a, &b}, [a, b](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_buffer(a)) {
      auto d = ga->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.data()[i] * b.value().data()[i];
    }
    if (Tensor* gb = tape.grad_buffer(b)) {
      auto d = gb->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.data()[i] * a.value().data()[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = like(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = s * a.value().data()[i];
  return finish("scale", std::move(out), {&a},
                [a, s](const Tensor& g, Tape& tape) { add_into(tape.grad_buffer(a), g, s); });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = like(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.value().data()[i] + s;
  return finish("add_scalar", std::move(out), {&a},
                [a](const Tensor& g, Tape& tape) { add_into(tape.grad_buffer(a), g); });
}

Var add_row(const Var& a, const Var& row) {
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  require_matrix("add_row", A);
  if (R.rows() != 1 || R.cols() != A.cols()) shape_error("add_row", A.shape(), R.shape());
  Tensor out = A;
  view(out).rowwise() += view(R).row(0);
  return finish("add_row", std::move(out), {&a, &row}, [a, row](const Tensor& g, Tape& tape) {
    add_into(tape.grad_buffer(a), g);
    if (Tensor* gr = tape.grad_buffer(row)) view(*gr).row(0) += view(g).colwise().sum();
  });
}

Var mul_row(const Var& a, const Var& row) {
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  require_matrix("mul_row", A);
  if (R.rows() != 1 || R.cols() != A.cols()) shape_error("mul_row", A.shape(), R.shape());
  Tensor out = A;
  view(out).array().rowwise() *= view(R).row(0).array();
  return finish("mul_row", std::move(out), {&a, &row}, [a, row](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_buffer(a))
      view(*ga).array() += view(g).array().rowwise() * view(row.value()).row(0).array();
    if (Tensor* gr = tape.grad_buffer(row))
      view(*gr).row(0).array() += (view(g).array() * view(a.value()).array()).colwise().sum();
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  require_matrix("linear", X);
  require_matrix("linear", W);
  if (X.cols() != W.rows()) shape_error("linear", X.shape(), W.shape());
  if (B.rows() != 1 || B.cols() != W.cols()) shape_error("linear", W.shape(), B.shape());
  Tensor out(matrix_shape(X.rows(), W.cols()));
  view(out).noalias() = view(X) * view(W);
  view(out).rowwise() += view(B).row(0);
  return finish("linear", std::move(out), {&x, &w, &b}, [x, w, b](const Tensor& g, Tape& tape) {
    if (Tensor* gx = tape.grad_buffer(x)) view(*gx).noalias() += view(g) * view(w.value()).transpose();
    if (Tensor* gw = tape.grad_buffer(w)) view(*gw).noalias() += view(x.value()).transpose() * view(g);
    if (Tensor* gb = tape.grad_buffer(b)) view(*gb).row(0) += view(g).colwise().sum();
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return finish("sum", Tensor::scalar(s), {&a}, [a](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_buffer(a))
      for (double& v : ga->data()) v += g.item();
  });
}

Var mean(const Var& a, int axis) {
  const Tensor& A = a.value();
  require_matrix("mean", A);
  if (axis != 0 && axis != 1) throw ValidationError("mean: axis must be 0 or 1");
  Tensor out = axis == 0 ? Tensor(matrix_shape(1, A.cols())) : Tensor(matrix_shape(A.rows(), 1));
  if (axis == 0)
    view(out) = view(A).colwise().mean();
  else
    view(out) = view(A).rowwise().mean();
  return finish("mean", std::move(out), {&a}, [a, axis](const Tensor& g, Tape& tape) {
    Tensor* ga = tape.grad_buffer(a);
    if (ga == nullptr) return;
    const std::size_t r = a.value().rows();
    const std::size_t c = a.value().cols();
    if (axis == 0)
      view(*ga).rowwise() += view(g).row(0) / static_cast<double>(r);
    else
      view(*ga).colwise() += view(g).col(0) / static_cast<double>(c);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_matrix("concat_rows", p.value());
    if (p.value().cols() != cols) shape_error("concat_rows", parts[0].shape(), p.shape());
    rows += p.value().rows();
  }
  Tensor out(matrix_shape(rows, cols));
  std::size_t at = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at));
    at += p.value().size();
  }
  Tape* tape = nullptr;
  for (const Var& p : parts) {
    if (p.tape() == nullptr) continue;
    if (tape != nullptr && tape != p.tape()) throw std::logic_error("inputs recorded on different tapes");
    tape = p.tape();
  }
  if (tape == nullptr) return Var(std::move(out));
  std::vector<Var> kept(parts.begin(), parts.end());
  return tape->record("concat_rows", std::move(out), parts, [kept](const Tensor& g, Tape& t) {
    std::size_t at = 0;
    for (const Var& p : kept) {
      const std::size_t n = p.value().size();
      if (Tensor* gp = t.grad_buffer(p)) {
        auto d = gp->data();
        for (std::size_t i = 0; i < n; ++i) d[i] += g.data()[at + i];
      }
      at += n;
    }
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& A = a.value();
  require_matrix("slice_rows", A);
  if (begin + count > A.rows() || count == 0)
    shape_error("slice_rows", A.shape(),
                "rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") out of range");
  const std::size_t c = A.cols();
  Tensor out(matrix_shape(count, c),
             std::vector<double>(A.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                                 A.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c)));
  return finish("slice_rows", std::move(out), {&a}, [a, begin, c](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_buffer(a)) {
      auto d = ga->data();
      for (std::size_t i = 0; i < g.size(); ++i) d[begin * c + i] += g.data()[i];
    }
  });
}

Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  const Tensor& T = table.value();
  require_matrix("gather_rows", T);
  const std::size_t c = T.cols();
  Tensor out(matrix_shape(ids.size(), c));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= T.rows())
      shape_error("gather_rows", T.shape(), "row id " + std::to_string(ids[r]) + " out of range");
    std::copy_n(T.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * c), c,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return finish("gather_rows", std::move(out), {&table}, [table, idx, c](const Tensor& g, Tape& tape) {
    if (Tensor* gt = tape.grad_buffer(table)) {
      auto d = gt->data();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) d[idx[r] * c + j] += g.data()[r * c + j];
    }
  });
}

Var gather(const Var& a, std::span<const std::size_t> flat_ids) {
  const Tensor& A = a.value();
  Tensor out(matrix_shape(1, flat_ids.size()));
  for (std::size_t i = 0; i < flat_ids.size(); ++i) {
    if (flat_ids[i] >= A.size())
      shape_error("gather", A.shape(), "flat id " + std::to_string(flat_ids[i]) + " out of range");
    out.data()[i] = A.data()[flat_ids[i]];
  }
  std::vector<std::size_t> idx(flat_ids.begin(), flat_ids.end());
  return finish("gather", std::move(out), {&a}, [a, idx](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_buffer(a))
      for (std::size_t i = 0; i < idx.size(); ++i) ga->data()[idx[i]] += g.data()[i];
  });
}

Var layer_norm(const Var& x, double eps) {
  const Tensor& X = x.value();
  require_matrix("layer_norm", X);
  const std::size_t r = X.rows();
  const std::size_t c = X.cols();
  Tensor out = like(X);
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += X(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (X(i, j) - mu) * (X(i, j) - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = (X(i, j) - mu) * inv_std[i];
  }
  auto y = std::make_shared<const Tensor>(out);
  return finish("layer_norm", std::move(out), {&x}, [x, y, inv_std, r, c](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < r; ++i) {
      double mg = 0.0;
      double mgy = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        mg += g(i, j);
        mgy += g(i, j) * (*y)(i, j);
      }
      mg /= static_cast<double>(c);
      mgy /= static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) (*gx)(i, j) += inv_std[i] * (g(i, j) - mg - (*y)(i, j) * mgy);
    }
  });
}

Var gelu(const Var& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  Tensor out = like(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = x.value().data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(k * (v + a * v * v * v)));
  }
  return finish("gelu", std::move(out), {&x}, [x](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double v = x.value().data()[i];
      double t = std::tanh(k * (v + a * v * v * v));
      double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * a * v * v);
      gx->data()[i] += g.data()[i] * d;
    }
  });
}

Var relu(const Var& x) {
  Tensor out = like(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(0.0, x.value().data()[i]);
  return finish("relu", std::move(out), {&x}, [x](const Tensor& g, Tape& tape) {
    if (Tensor* gx = tape.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x.value().data()[i] > 0.0) gx->data()[i] += g.data()[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out = like(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-x.value().data()[i]));
  auto y = std::make_shared<const Tensor>(out);
  return finish("sigmoid", std::move(out), {&x}, [x, y](const Tensor& g, Tape& tape) {
    if (Tensor* gx = tape.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) {
        double s = y->data()[i];
        gx->data()[i] += g.data()[i] * s * (1.0 - s);
      }
  });
}

Var log(const Var& x) {
  Tensor out = like(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = x.value().data()[i];
    if (!(v > 0.0)) throw ValidationError("log: non-positive input " + std::to_string(v));
    out.data()[i] = std::log(v);
  }
  return finish("log", std::move(out), {&x}, [x](const Tensor& g, Tape& tape) {
    if (Tensor* gx = tape.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx->data()[i] += g.data()[i] / x.value().data()[i];
  });
}

Var clamp(const Var& x, double lo, double hi) {
  if (lo > hi) throw ValidationError("clamp: lo > hi");
  Tensor out = like(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::clamp(x.value().data()[i], lo, hi);
  return finish("clamp", std::move(out), {&x}, [x, lo, hi](const Tensor& g, Tape& tape) {
    if (Tensor* gx = tape.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) {
        double v = x.value().data()[i];
        if (v > lo && v < hi) gx->data()[i] += g.data()[i];
      }
  });
}

Var pow(const Var& x, double e) {
  Tensor out = like(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = x.value().data()[i];
    if (v < 0.0) throw ValidationError("pow: negative base " + std::to_string(v));
    out.data()[i] = std::pow(v, e);
  }
  return finish("pow", std::move(out), {&x}, [x, e](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_buffer(x);
    if (gx == nullptr || e == 0.0) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double v = x.value().data()[i];
      // The derivative at 0 is taken as its right limit, clipped to 0 when it diverges.
      double d = v > 0.0 ? e * std::pow(v, e - 1.0) : (e == 1.0 ? 1.0 : 0.0);
      gx->data()[i] += g.data()[i] * d;
    }
  });
}

Var l2_normalize(const Var& x) {
  const Tensor& X = x.value();
  require_matrix("l2_normalize", X);
  const std::size_t r = X.rows();
  const std::size_t c = X.cols();
  Tensor out = like(X);
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += X(i, j) * X(i, j);
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw ValidationError("l2_normalize: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < c; ++j) out(i, j) = X(i, j) / norms[i];
  }
  auto y = std::make_shared<const Tensor>(out);
  return finish("l2_normalize", std::move(out), {&x}, [x, y, norms, r, c](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * (*y)(i, j);
      for (std::size_t j = 0; j < c; ++j) (*gx)(i, j) += (g(i, j) - (*y)(i, j) * dot) / norms[i];
    }
  });
}

namespace {

void softmax_row(const double* in, double* out, std::size_t n, double tau) {
  double mx = in[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp((in[j] - mx) / tau);
    z += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= z;
}

}  // namespace

Var softmax(const Var& x, double tau) {
  if (!(tau > 0.0)) throw ValidationError("softmax: temperature must be > 0, got " + std::to_string(tau));
  const Tensor& X = x.value();
  require_matrix("softmax", X);
  const std::size_t r = X.rows();
  const std::size_t c = X.cols();
  Tensor out = like(X);
  for (std::size_t i = 0; i < r; ++i) softmax_row(&X.data()[i * c], &out.data()[i * c], c, tau);
  auto y = std::make_shared<const Tensor>(out);
  return finish("softmax", std::move(out), {&x}, [x, y, tau, r, c](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * (*y)(i, j);
      for (std::size_t j = 0; j < c; ++j) (*gx)(i, j) += (*y)(i, j) * (g(i, j) - dot) / tau;
    }
  });
}

Var log_softmax(const Var& x) {
  const Tensor& X = x.value();
  require_matrix("log_softmax", X);
  const std::size_t r = X.rows();
  const std::size_t c = X.cols();
  Tensor out = like(X);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = X(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, X(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(X(i, j) - mx);
    double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = X(i, j) - lse;
  }
  auto y = std::make_shared<const Tensor>(out);
  return finish("log_softmax", std::move(out), {&x}, [x, y, r, c](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g(i, j);
      for (std::size_t j = 0; j < c; ++j) (*gx)(i, j) += g(i, j) - std::exp((*y)(i, j)) * gs;
    }
  });
}

Var cosine_similarity(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.size() != B.size() || (A.rank() == 2 && A.rows() != 1) || (B.rank() == 2 && B.rows() != 1))
    shape_error("cosine_similarity", A.shape(), B.shape());
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    na += A.data()[i] * A.data()[i];
    nb += B.data()[i] * B.data()[i];
    dot += A.data()[i] * B.data()[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine_similarity: zero-norm input");
  const double cs = dot / (na * nb);
  return finish("cosine_similarity", Tensor::scalar(cs), {&a, &b},
                [a, b, na, nb, cs](const Tensor& g, Tape& tape) {
                  const double s = g.item();
                  const auto& av = a.value().data();
                  const auto& bv = b.value().data();
                  if (Tensor* ga = tape.grad_buffer(a))
                    for (std::size_t i = 0; i < av.size(); ++i)
                      ga->data()[i] += s * (bv[i] / (na * nb) - cs * av[i] / (na * na));
                  if (Tensor* gb = tape.grad_buffer(b))
                    for (std::size_t i = 0; i < bv.size(); ++i)
                      gb->data()[i] += s * (av[i] / (na * nb) - cs * bv[i] / (nb * nb));
                });
}

Var segment_attention(const Var& q, const Var& k, const Var& v, std::span<const Segment> q_segments,
                      std::span<const Segment> k_segments, std::size_t heads) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_matrix("segment_attention", Q);
  if (K.shape() != V.shape() || Q.cols() != K.cols()) shape_error("segment_attention", Q.shape(), K.shape());
  if (q_segments.size() != k_segments.size())
    throw ValidationError("segment_attention: query and key segment counts differ");
  if (heads == 0 || Q.cols() % heads != 0)
    shape_error("segment_attention", Q.shape(), std::to_string(heads) + " heads do not divide width");
  check_segments("segment_attention", q_segments, Q.rows());
  check_segments("segment_attention", k_segments, K.rows());

  const std::size_t dh = Q.cols() / heads;
  const std::size_t w = Q.cols();
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto ns = q_segments.size();
  // Attention weights for every (segment, head), laid out contiguously.
  std::vector<std::size_t> base(ns + 1, 0);
  for (std::size_t s = 0; s < ns; ++s) base[s + 1] = base[s] + heads * q_segments[s].length * k_segments[s].length;
  auto probs = std::make_shared<std::vector<double>>(base[ns]);
  Tensor out(matrix_shape(Q.rows(), w));
  const double* qd = Q.data().data();
  const double* kd = K.data().data();
  const double* vd = V.data().data();
  double* od = out.data().data();
  for (std::size_t s = 0; s < ns; ++s) {
    const auto qs = q_segments[s];
    const auto ks = k_segments[s];
    for (std::size_t h = 0; h < heads; ++h) {
      double* A = probs->data() + base[s] + h * qs.length * ks.length;
      const std::size_t col = h * dh;
      for (std::size_t i = 0; i < qs.length; ++i) {
        const double* qi = qd + (qs.offset + i) * w + col;
        double* ai = A + i * ks.length;
        for (std::size_t j = 0; j < ks.length; ++j) {
          const double* kj = kd + (ks.offset + j) * w + col;
          double acc = 0.0;
          for (std::size_t d = 0; d < dh; ++d) acc += qi[d] * kj[d];
          ai[j] = inv * acc;
        }
        softmax_row(ai, ai, ks.length, 1.0);
        double* oi = od + (qs.offset + i) * w + col;
        for (std::size_t j = 0; j < ks.length; ++j) {
          const double* vj = vd + (ks.offset + j) * w + col;
          for (std::size_t d = 0; d < dh; ++d) oi[d] += ai[j] * vj[d];
        }
      }
    }
  }
  std::vector<Segment> qsegs(q_segments.begin(), q_segments.end());
  std::vector<Segment> ksegs(k_segments.begin(), k_segments.end());
  return finish("segment_attention", std::move(out), {&q, &k, &v},
                [q, k, v, qsegs, ksegs, heads, dh, w, inv, probs, base](const Tensor& g, Tape& tape) {
                  Tensor* gq = tape.grad_buffer(q);
                  Tensor* gk = tape.grad_buffer(k);
                  Tensor* gv = tape.grad_buffer(v);
                  const double* qd = q.value().data().data();
                  const double* kd = k.value().data().data();
                  const double* vd = v.value().data().data();
                  const double* gd = g.data().data();
                  std::vector<double> dS;
                  for (std::size_t s = 0; s < qsegs.size(); ++s) {
                    const auto qs = qsegs[s];
                    const auto ks = ksegs[s];
                    dS.resize(qs.length * ks.length);
                    for (std::size_t h = 0; h < heads; ++h) {
                      const double* A = probs->data() + base[s] + h * qs.length * ks.length;
                      const std::size_t col = h * dh;
                      for (std::size_t i = 0; i < qs.length; ++i) {
                        const double* gi = gd + (qs.offset + i) * w + col;
                        const double* ai = A + i * ks.length;
                        if (gv)
                          for (std::size_t j = 0; j < ks.length; ++j) {
                            double* gvj = gv->data().data() + (ks.offset + j) * w + col;
                            for (std::size_t d = 0; d < dh; ++d) gvj[d] += ai[j] * gi[d];
                          }
                        if (!gq && !gk) continue;
                        double* si = dS.data() + i * ks.length;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < ks.length; ++j) {
                          const double* vj = vd + (ks.offset + j) * w + col;
                          double acc = 0.0;
                          for (std::size_t d = 0; d < dh; ++d) acc += gi[d] * vj[d];
                          si[j] = acc;
                          dot += acc * ai[j];
                        }
                        for (std::size_t j = 0; j < ks.length; ++j) si[j] = inv * ai[j] * (si[j] - dot);
                      }
                      if (!gq && !gk) continue;
                      for (std::size_t i = 0; i < qs.length; ++i) {
                        const double* si = dS.data() + i * ks.length;
                        const double* qi = qd + (qs.offset + i) * w + col;
                        double* gqi = gq ? gq->data().data() + (qs.offset + i) * w + col : nullptr;
                        for (std::size_t j = 0; j < ks.length; ++j) {
                          const double* kj = kd + (ks.offset + j) * w + col;
                          if (gqi)
                            for (std::size_t d = 0; d < dh; ++d) gqi[d] += si[j] * kj[d];
                          if (gk) {
                            double* gkj = gk->data().data() + (ks.offset + j) * w + col;
                            for (std::size_t d = 0; d < dh; ++d) gkj[d] += si[j] * qi[d];
                          }
                        }
                      }
                    }
                  }
                });
}

Var segment_mean(const Var& x, std::span<const Segment> segments) {
  const Tensor& X = x.value();
  require_matrix("segment_mean", X);
  check_segments("segment_mean", segments, X.rows());
  Tensor out(matrix_shape(segments.size(), X.cols()));
  for (std::size_t s = 0; s < segments.size(); ++s)
    view(out).row(s) = view(X).middleRows(segments[s].offset, segments[s].length).colwise().mean();
  std::vector<Segment> segs(segments.begin(), segments.end());
  return finish("segment_mean", std::move(out), {&x}, [x, segs](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t s = 0; s < segs.size(); ++s)
      view(*gx).middleRows(segs[s].offset, segs[s].length).rowwise() +=
          view(g).row(s) / static_cast<double>(segs[s].length);
  });
}

Var segment_softmax_pool(const Var& x, std::span<const Segment> segments, double tau) {
  if (!(tau > 0.0)) throw ValidationError("segment_softmax_pool: temperature must be > 0, got " + std::to_string(tau));
  const Tensor& X = x.value();
  require_matrix("segment_softmax_pool", X);
  check_segments("segment_softmax_pool", segments, X.rows());
  const std::size_t c = X.cols();
  Tensor out(matrix_shape(segments.size(), c));
  auto weights = std::make_shared<Tensor>(X.shape());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto seg = segments[s];
    for (std::size_t col = 0; col < c; ++col) {
      double mx = X(seg.offset, col);
      for (std::size_t j = 1; j < seg.length; ++j) mx = std::max(mx, X(seg.offset + j, col));
      double z = 0.0;
      for (std::size_t j = 0; j < seg.length; ++j) {
        double w = std::exp((X(seg.offset + j, col) - mx) / tau);
        (*weights)(seg.offset + j, col) = w;
        z += w;
      }
      double acc = 0.0;
      for (std::size_t j = 0; j < seg.length; ++j) {
        double& w = (*weights)(seg.offset + j, col);
        w /= z;
        acc += w * X(seg.offset + j, col);
      }
      out(s, col) = acc;
    }
  }
  auto y = std::make_shared<const Tensor>(out);
  std::vector<Segment> segs(segments.begin(), segments.end());
  return finish("segment_softmax_pool", std::move(out), {&x},
                [x, segs, tau, weights, y, c](const Tensor& g, Tape& tape) {
                  Tensor* gx = tape.grad_buffer(x);
                  if (gx == nullptr) return;
                  const Tensor& X = x.value();
                  for (std::size_t s = 0; s < segs.size(); ++s)
                    for (std::size_t col = 0; col < c; ++col)
                      for (std::size_t j = 0; j < segs[s].length; ++j) {
                        const std::size_t r = segs[s].offset + j;
                        const double w = (*weights)(r, col);
                        (*gx)(r, col) += g(s, col) * w * (1.0 + (X(r, col) - (*y)(s, col)) / tau);
                      }
                });
}

// ---- plain helpers ------------------------------------------------------

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ValidationError("cosine_similarity: length mismatch " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
    dot += a[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine_similarity: zero-norm input");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<double> softmax_with_temperature(std::span<const double> logits, double tau) {
  if (!(tau > 0.0)) throw ValidationError("softmax: temperature must be > 0, got " + std::to_string(tau));
  if (logits.empty()) return {};
  for (double v : logits)
    if (!std::isfinite(v)) throw ValidationError("softmax: non-finite logit");
  std::vector<double> out(logits.size());
  softmax_row(logits.data(), out.data(), logits.size(), tau);
  return out;
}

// ---- optimiser ----------------------------------------------------------

double cosine_lr(const OptimState& state, std::size_t t) {
  if (state.total_steps == 0) throw ValidationError("cosine_lr: total_steps must be positive");
  if (t > state.total_steps)
    throw ValidationError("cosine_lr: step " + std::to_string(t) + " beyond total " +
                          std::to_string(state.total_steps));
  if (t == state.total_steps) return 0.0;
  const double frac = static_cast<double>(t) / static_cast<double>(state.total_steps);
  return state.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state) {
  if (params.size() != grads.size())
    throw ValidationError("sgd_step: " + std::to_string(params.size()) + " params but " +
                          std::to_string(grads.size()) + " grads");
  const double lr = cosine_lr(state, state.current_step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) shape_error("sgd_step", params[i]->shape(), grads[i].shape());
    auto p = params[i]->data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
  }
  ++state.current_step;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size())
    throw ValidationError("adam_step: " + std::to_string(params.size()) + " params but " +
                          std::to_string(grads.size()) + " grads");
  if (state.m.empty()) {
    for (const Tensor& g : grads) {
      state.m.emplace_back(g.shape());
      state.v.emplace_back(g.shape());
    }
  }
  if (state.m.size() != params.size()) throw ValidationError("adam_step: parameter set changed between steps");
  const double lr = cosine_lr(state.schedule, state.schedule.current_step);
  const double t = static_cast<double>(state.schedule.current_step + 1);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) shape_error("adam_step", params[i]->shape(), grads[i].shape());
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
  ++state.schedule.current_step;
}

}  // namespace tai::grad
