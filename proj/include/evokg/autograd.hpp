#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "evokg/tensor.hpp"

namespace evokg {

using Rng = std::mt19937_64;

enum class Mode { kTrain, kEval };

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool grad_ready = false;
  bool requires_grad = false;
  std::function<void(Node&)> backward;

  Tensor& grad_slot();
};

// Shared handle to a value and, when it requires grad, its gradient slot.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  // A trainable leaf that outlives any tape. Gradients accumulate until zero_grad().
  static Var parameter(Tensor value);
  static Var constant(Tensor value);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->grad_ready; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_slot(); }
  void zero_grad() {
    node_->grad = Tensor();
    node_->grad_ready = false;
  }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Compressed sparse rows; used for degree-normalised aggregation and pooling.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }
  // Entries must be supplied grouped by row in ascending row order.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<std::tuple<std::size_t, std::size_t, double>> triplets);
};

// Records operations for one forward pass and replays them in reverse.
//
// A tape is single use: backward() may run once, after which the tape is cleared and any
// further recording or backward call throws. A kNoGrad tape records nothing and is meant for
// inference.
class Tape {
 public:
  enum class Grad { kRecord, kNoGrad };
  explicit Tape(Grad grad = Grad::kRecord) : record_(grad == Grad::kRecord) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  void backward(const Var& loss);

  // Linear algebra.
  Var matmul(const Var& a, const Var& b);
  Var matmul_nt(const Var& a, const Var& b);  // a * b^T
  Var spmm(std::shared_ptr<const SparseMatrix> s, const Var& x);
  // flat_output lays a batched result out as [B x K*L'] rather than [B x K x L'].
  Var conv1d(const Var& input, const Var& kernels, std::size_t padding, bool flat_output = false);

  // Elementwise.
  Var add(const Var& a, const Var& b);
  Var sub(const Var& a, const Var& b);
  Var mul(const Var& a, const Var& b);
  Var add_bias(const Var& x, const Var& bias);
  Var affine(const Var& x, double scale, double shift);
  Var sigmoid(const Var& x);
  Var tanh(const Var& x);
  Var relu(const Var& x);
  Var rrelu(const Var& x, double lower, double upper, Mode mode, Rng* rng);
  // Overwrites x in place when x is the only handle to a value that needs no gradient.
  Var rrelu(Var&& x, double lower, double upper, Mode mode, Rng* rng);
  Var dropout(const Var& x, double p, Mode mode, Rng* rng);

  // Structure.
  Var reshape(const Var& x, Shape shape);
  Var concat_cols(const Var& a, const Var& b);
  Var gather_rows(const Var& x, std::vector<std::size_t> index);
  Var mean_rows(const Var& x);
  Var row_sum(const Var& x);
  Var sum(const Var& x);
  // Rescales each row to unit L2 norm; rows with norm below zero_tol are passed through
  // unchanged and counted in *zero_rows.
  Var normalize_rows(const Var& x, double zero_tol = 1e-12, std::size_t* zero_rows = nullptr);
  // sum_q weight_q * sum_i BCE(p_qi, y_qi) / sum_q weight_q, probabilities clamped to [eps, 1-eps].
  Var binary_cross_entropy(const Var& probs, const Tensor& labels, std::span<const double> row_weights,
                           double eps);

 private:
  Var record(Tensor value, std::initializer_list<const Var*> inputs, std::function<void(Node&)> backward);
  void check_open() const;

  bool record_;
  bool consumed_ = false;
  std::vector<std::shared_ptr<Node>> nodes_;
};

// Everything a forward pass threads through: where to record, train/eval behaviour, the
// randomness source for train mode, and a counter for rows the normaliser had to skip.
struct Forward {
  Tape& tape;
  Mode mode = Mode::kEval;
  Rng* rng = nullptr;
  std::size_t* zero_norm_rows = nullptr;
};

}  // namespace evokg
