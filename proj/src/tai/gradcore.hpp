// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with a per-step tape for reverse-mode
// differentiation, plus plain SGD with a cosine-annealed learning rate.
//
// Every op accepts Vars. A Var is either a constant (no tape) or a node on a
// Tape; an op records itself only when at least one input is on a tape, so
// inference through frozen weights never touches a tape at all.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tai::grad {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::string shape_str(const Shape& shape);

/// Tensor storage starts on a 64-byte boundary. Vectorised reductions split
/// their work by address, so without this the rounding of a sum would depend
/// on where the heap placed the buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor randn(Shape shape, Rng& rng, double stddev);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Rank 0 and 1 tensors are viewed as a single row. Rank > 2 is rejected by
  // the ops; nothing in the encoders needs it.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  double item() const;
  std::vector<double> row(std::size_t r) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  Storage data_;
};

class Tape;

/// Graph handle. Holds its forward value by shared pointer so constants (frozen
/// weights) are never copied when threaded through an op.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value) : value_(std::make_shared<const Tensor>(std::move(value))) {}
  explicit Var(std::shared_ptr<const Tensor> value) : value_(std::move(value)) {}

  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  /// -1 for constants.
  std::ptrdiff_t node() const { return node_; }
  bool defined() const { return value_ != nullptr; }

 private:
  friend class Tape;
  std::shared_ptr<const Tensor> value_;
  Tape* tape_ = nullptr;
  std::ptrdiff_t node_ = -1;
};

/// Receives the upstream gradient of a node; accumulates into its inputs via
/// Tape::grad_buffer.
using BackwardFn = std::function<void(const Tensor& grad_out, Tape& tape)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(std::shared_ptr<const Tensor> value);
  Var leaf(Tensor value) { return leaf(std::make_shared<const Tensor>(std::move(value))); }

  /// Appends an op node. Inputs that are constants are ignored for ordering.
  Var record(std::string_view op, Tensor value, std::initializer_list<const Var*> inputs,
             BackwardFn backward);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  /// Gradient accumulator for an input, zero-initialised on first use.
  /// Returns nullptr for constants so callers can skip work.
  Tensor* grad_buffer(const Var& v);

  /// Reverse sweep from a scalar root. Each node is visited at most once.
  void backward(const Var& root);

  /// Gradient of a leaf after backward(). Leaves the sweep never reached get
  /// zeros; constants have no gradient at all.
  std::optional<Tensor> grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  std::span<const std::ptrdiff_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t visits(std::size_t id) const { return nodes_.at(id).visits; }

 private:
  struct Node {
    std::string_view op;
    std::vector<std::ptrdiff_t> inputs;
    std::shared_ptr<const Tensor> value;
    BackwardFn backward;
    std::optional<Tensor> grad;
    std::size_t visits = 0;
  };
  Var append(Node node);

  std::vector<Node> nodes_;
};

struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// ---- core op set --------------------------------------------------------

Var matmul(const Var& a, const Var& b);
/// a · bᵀ
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// Broadcasts a 1×n row over every row of a.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);
/// x·w + b with b broadcast over rows.
Var linear(const Var& x, const Var& w, const Var& b);
Var sum(const Var& a);
/// axis 0 reduces rows (result 1×cols), axis 1 reduces columns (rows×1).
Var mean(const Var& a, int axis);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
/// Embedding lookup: result row r is table row ids[r].
Var gather_rows(const Var& table, std::span<const std::size_t> ids);
/// Flat element gather into a 1×n row.
Var gather(const Var& a, std::span<const std::size_t> flat_ids);
/// Row-wise normalisation without affine terms.
Var layer_norm(const Var& x, double eps = 1e-5);
/// tanh approximation.
Var gelu(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var log(const Var& x);
/// Gradient is zero where the input was clamped.
Var clamp(const Var& x, double lo, double hi);
/// Elementwise x^e for x >= 0.
Var pow(const Var& x, double e);
/// Row-wise unit L2 norm. Zero rows are an error.
Var l2_normalize(const Var& x);
/// Row-wise softmax(x / tau).
Var softmax(const Var& x, double tau);
Var log_softmax(const Var& x);
/// Both inputs are vectors (any rank with a single row) of equal length.
Var cosine_similarity(const Var& a, const Var& b);

/// Multi-head scaled dot-product attention, independently per segment pair:
/// rows of q in q_segments[s] attend to rows of k/v in k_segments[s].
Var segment_attention(const Var& q, const Var& k, const Var& v, std::span<const Segment> q_segments,
                      std::span<const Segment> k_segments, std::size_t heads);
/// Mean of each segment's rows; result has one row per segment.
Var segment_mean(const Var& x, std::span<const Segment> segments);
/// For every segment and column c: sum_j softmax_j(x_jc / tau) * x_jc.
Var segment_softmax_pool(const Var& x, std::span<const Segment> segments, double tau);

// ---- plain helpers ------------------------------------------------------

double cosine_similarity(std::span<const double> a, std::span<const double> b);
std::vector<double> softmax_with_temperature(std::span<const double> logits, double tau);

// ---- optimiser ----------------------------------------------------------

struct OptimState {
  double base_lr = 1e-3;
  std::size_t total_steps = 1;
  std::size_t current_step = 0;
};

/// base_lr * 0.5 * (1 + cos(pi * t / total_steps)).
double cosine_lr(const OptimState& state, std::size_t t);

/// Plain SGD: param -= lr(current_step) * grad, then advances current_step.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state);

/// Adam on the same cosine schedule. Only the encoder pretraining uses it;
/// prompt tuning is plain SGD.
struct AdamState {
  OptimState schedule;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensor> m, v;
};

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace tai::grad
