#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace planperf::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until requested

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols) : shape{rows, cols}, values(rows * cols, 0.0) {}

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
};

// Named, ordered parameters. The flat layout used by optimizers and gradient
// buffers concatenates tensors in insertion order.
class ParameterSet {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  std::size_t size() const { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::size_t offset(std::size_t i) const { return offsets_[i]; }
  std::size_t total_size() const { return total_; }

  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

// Single-use reverse-mode tape over row-major matrices. Build the forward
// graph with the op methods, then call backward() once on a 1x1 result.
class Tape {
 public:
  using Var = std::size_t;

  explicit Tape(const ParameterSet& params);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var param(std::size_t index);
  Var constant(std::size_t rows, std::size_t cols, std::vector<double> values);

  Var matmul(Var a, Var b);     // (n x k) (k x m)
  Var matmul_nt(Var a, Var b);  // a b^T
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1 x m row over a
  Var scale(Var a, double s);
  Var gelu(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var gather_rows(Var table, std::span<const int> rows);
  // out[i][j] = table[row][codes[i * cols + j]]
  Var gather_codes(Var table, std::size_t row, std::span<const int> codes, std::size_t rows, std::size_t cols);
  // Row-wise softmax over entries with mask != 0; masked entries are exactly 0.
  Var masked_softmax(Var scores, std::span<const std::uint8_t> mask);
  // Mean of squared errors over entries with mask != 0; 0 when none.
  Var mse(Var pred, std::span<const double> target, std::span<const std::uint8_t> mask);
  Var cross_entropy(Var logits, int label);
  Var add_scaled(Var a, Var b, double s);  // a + s * b

  std::size_t rows(Var v) const { return nodes_[v].rows; }
  std::size_t cols(Var v) const { return nodes_[v].cols; }
  std::span<const double> value(Var v) const;
  double scalar(Var v) const { return value(v)[0]; }

  void backward(Var root);
  // Adds this tape's parameter gradients into `flat` (ParameterSet layout).
  void accumulate_param_grads(std::span<double> flat) const;

 private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> own;
    const double* ext = nullptr;
    std::vector<double> grad;
    long param_index = -1;
    std::function<void(Tape&, Var)> backward;
  };

  Var push(std::size_t rows, std::size_t cols, std::vector<double> values,
           std::function<void(Tape&, Var)> backward);
  const double* data(Var v) const { return nodes_[v].ext ? nodes_[v].ext : nodes_[v].own.data(); }
  double* grad(Var v) { return nodes_[v].grad.data(); }

  const ParameterSet* params_;
  std::vector<Node> nodes_;
};

}  // namespace planperf::nn
