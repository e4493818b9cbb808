#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation of one forward pass. Vectors are 1 x n row
// matrices and scalars are 1 x 1. Parameters live outside the tape in a
// ParameterSet; backward() adds their gradients into Parameter::grad.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace wmcir {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool decay = true;  // subject to decoupled weight decay

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Owns named parameters with stable addresses.
class ParameterSet {
 public:
  Parameter& add(std::string name, Mat init, bool decay = true);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  double grad_norm() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Mat& out_grad)>;

  Var constant(Mat value);
  /// Differentiable input whose gradient is read back with grad().
  Var leaf(Mat value);
  /// A parameter enters the tape once; repeated calls return the same node.
  Var param(Parameter& p);

  const Mat& value(Var v) const { return nodes_[check(v)].value; }
  /// Gradient of the last backward() target with respect to v.
  Mat grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  /// Runs reverse accumulation from a 1 x 1 node.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Op-implementer interface.
  Var record(Mat value, std::initializer_list<Var> inputs, Backprop fn);
  Var record(Mat value, std::span<const Var> inputs, Backprop fn);
  void accumulate(Var v, const Mat& delta);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backprop backprop;
    Parameter* param = nullptr;
  };

  int check(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

namespace ad {

Var matmul(Var a, Var b);
/// a * w for a matrix held outside the tape; w must outlive the tape.
Var matmul(Var a, const Mat& w);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
/// Multiplies every entry of a by the 1 x 1 node s.
Var scalar_mul(Var s, Var a);
Var tanh(Var a);
Var gelu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var a);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const int> rows);
Var mean_rows(Var a);
Var transpose(Var a);
Var normalize_rows(Var a, double eps = 1e-12);
Var sum(Var a);
Var sum_squares(Var a);
/// mean_i( logsumexp_j z_ij - z_ii ) for a square logit matrix.
Var diag_cross_entropy(Var logits);

}  // namespace ad

/// Exact gelu and its derivative, shared with non-tape code.
double gelu(double x);
double gelu_grad(double x);

}  // namespace wmcir
