#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Vars are cheap handles
// (tape pointer + node index). Parameters live outside the tape; binding one
// with Tape::param copies its value in and Tape::backward adds the resulting
// gradient back into Parameter::grad.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mccl::ag {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Gradient after Tape::backward; a zero matrix when nothing flowed here.
  Matrix grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient of the output node; must accumulate into parents.
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var input(Matrix value);  // leaf that records its gradient
  /// Binds `p` once per tape; later calls return the same node.
  Var param(Parameter& p);

  /// Records a custom operation. `backward` is dropped when no parent needs a
  /// gradient.
  Var record(Matrix value, const std::vector<Var>& parents, Backward backward);

  /// Seeds d(root)/d(root) with ones and propagates to every reachable node.
  void backward(Var root);

  void accumulate(const Var& v, const Matrix& g);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until something accumulates into it
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
};

// ---- elementwise and structural ops ----------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var div(Var a, Var b);  // Hadamard
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(Var a, Var row);
/// a (n x m) * col (n x 1) broadcast over columns.
Var mul_col(Var a, Var col);

Var matmul(Var a, Var b);
/// a * b^T without materializing the transpose on the tape.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var sigmoid(Var a);

Var softmax_rows(Var a);
/// Per-row layer normalization followed by gain and bias rows (1 x m).
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
/// Euclidean norm of each row, as an n x 1 column.
Var row_norms(Var a);
/// x_i / (||x_i|| + eps) for every row.
Var normalize_rows(Var a, double eps);
Var row_sums(Var a);
Var mean_rows(Var a);  // 1 x m column-wise mean over rows
Var sum_all(Var a);
Var mean_all(Var a);

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);

/// Rearranges an (H*W) x D row-major patch grid into (H/f * W/f) x (f*f*D),
/// concatenating each f x f block of patches. Combined with a linear map this
/// is a strided convolution with kernel size equal to the stride.
Var space_to_depth(Var a, int height, int width, int factor);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace mccl::ag
