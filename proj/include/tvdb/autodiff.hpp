#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Feature maps are stored as [channels x (height*width)].

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace tvdb {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

namespace ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat&)>;

  Var leaf(Mat value, bool requires_grad = false);
  Var constant(Mat value) { return leaf(std::move(value), false); }

  // Registers the result of an op. `backward` is dropped when no input needs a gradient.
  Var push(Mat value, bool requires_grad, Backward backward);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool any_requires_grad(std::initializer_list<Var> vs) const;

  // Gradient accumulated by the last backward(); zero matrix if the node was not reached.
  Mat grad(Var v) const;

  void accumulate(Var v, const Mat& delta);

  // Seeds d(out)/d(out) = 1 for a 1x1 output.
  void backward(Var out);
  void backward(Var out, const Mat& seed);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_constant(Tape& t, Var a, const Mat& c);
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var silu(Tape& t, Var a);

// a: [R x C], bias: [R x 1]; bias added to every column.
Var add_row_bias(Tape& t, Var a, Var bias);
// a: [R x C], bias: [1 x C]; bias added to every row.
Var add_col_bias(Tape& t, Var a, Var bias);

// Row-wise softmax.
Var softmax_rows(Tape& t, Var a);
// Divides each row by its sum; throws NumericalError on a row with non-positive sum.
Var row_normalize(Tape& t, Var a);
// Scales column i by factors[i] (constant).
Var mul_cols(Tape& t, Var a, const Vec& factors);

Var concat_rows(Tape& t, Var a, Var b);

// Reductions producing 1x1.
Var sum_squares(Tape& t, Var a);
Var l2_norm(Tape& t, Var a);
Var mean_squared_error(Tape& t, Var a, const Mat& target);

// 3x3 convolution with zero padding 1 over a [C x H*W] map.
// weight: [Cout x C*9] laid out as (c, ky, kx); bias: [Cout x 1].
Var conv3x3(Tape& t, Var x, Var weight, Var bias, int height, int width, int stride);

// Nearest-neighbour 2x upsampling of a [C x H*W] map.
Var upsample2x(Tape& t, Var x, int height, int width);

// Group normalisation over a [C x P] map with per-channel affine gamma, beta: [C x 1].
Var group_norm(Tape& t, Var x, Var gamma, Var beta, int groups, double eps = 1e-5);

}  // namespace ad
}  // namespace tvdb
