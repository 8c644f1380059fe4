#include "tvdb/autodiff.hpp"

#include "tvdb/errors.hpp"

#include <cmath>
#include <string>

namespace tvdb::ad {

Var Tape::leaf(Mat value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Mat(), requires_grad, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Mat value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Mat(), requires_grad,
                        requires_grad ? std::move(backward) : nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::any_requires_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs) {
    if (nodes_[v.id].requires_grad) return true;
  }
  return false;
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Mat& delta) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = delta;
  } else {
    n.grad += delta;
  }
}

void Tape::backward(Var out) {
  backward(out, Mat::Ones(1, 1));
}

void Tape::backward(Var out, const Mat& seed) {
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[out.id].requires_grad) return;
  nodes_[out.id].grad = seed;
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    const Mat g = n.grad;
    n.backward(*this, g);
  }
}

Var add(Tape& t, Var a, Var b) {
  Mat v = t.value(a) + t.value(b);
  return t.push(std::move(v), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  Mat v = t.value(a) - t.value(b);
  return t.push(std::move(v), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

Var mul(Tape& t, Var a, Var b) {
  Mat v = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(v), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Mat& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

Var scale(Tape& t, Var a, double s) {
  Mat v = t.value(a) * s;
  return t.push(std::move(v), t.requires_grad(a),
                [a, s](Tape& tp, const Mat& g) { tp.accumulate(a, g * s); });
}

Var add_constant(Tape& t, Var a, const Mat& c) {
  Mat v = t.value(a) + c;
  return t.push(std::move(v), t.requires_grad(a),
                [a](Tape& tp, const Mat& g) { tp.accumulate(a, g); });
}

Var matmul(Tape& t, Var a, Var b) {
  Mat v = t.value(a) * t.value(b);
  return t.push(std::move(v), t.any_requires_grad({a, b}), [a, b](Tape& tp, const Mat& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

Var transpose(Tape& t, Var a) {
  Mat v = t.value(a).transpose();
  return t.push(std::move(v), t.requires_grad(a),
                [a](Tape& tp, const Mat& g) { tp.accumulate(a, g.transpose()); });
}

Var silu(Tape& t, Var a) {
  const Mat& x = t.value(a);
  Mat sig = (1.0 + (-x.array()).exp()).inverse().matrix();
  Mat v = x.cwiseProduct(sig);
  return t.push(std::move(v), t.requires_grad(a), [a, sig](Tape& tp, const Mat& g) {
    const Mat& x = tp.value(a);
    Mat d = (sig.array() * (1.0 + x.array() * (1.0 - sig.array()))).matrix();
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

Var add_row_bias(Tape& t, Var a, Var bias) {
  Mat v = t.value(a);
  v.colwise() += t.value(bias).col(0);
  return t.push(std::move(v), t.any_requires_grad({a, bias}), [a, bias](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(bias)) tp.accumulate(bias, g.rowwise().sum());
  });
}

Var add_col_bias(Tape& t, Var a, Var bias) {
  Mat v = t.value(a);
  v.rowwise() += t.value(bias).row(0);
  return t.push(std::move(v), t.any_requires_grad({a, bias}), [a, bias](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
  });
}

Var softmax_rows(Tape& t, Var a) {
  const Mat& x = t.value(a);
  Mat v(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    v.row(r) = (x.row(r).array() - m).exp().matrix();
    v.row(r) /= v.row(r).sum();
  }
  const int out = static_cast<int>(t.size());
  return t.push(std::move(v), t.requires_grad(a), [a, out](Tape& tp, const Mat& g) {
    const Mat& y = tp.value(Var{out});
    Vec dots = g.cwiseProduct(y).rowwise().sum();
    Mat d = g;
    d.colwise() -= dots;
    tp.accumulate(a, y.cwiseProduct(d));
  });
}

Var row_normalize(Tape& t, Var a) {
  const Mat& x = t.value(a);
  Vec sums = x.rowwise().sum();
  for (Eigen::Index r = 0; r < sums.size(); ++r) {
    if (!(sums[r] > 0.0)) {
      throw NumericalError("row_normalize: row " + std::to_string(r) + " has non-positive mass");
    }
  }
  Mat v = sums.cwiseInverse().asDiagonal() * x;
  return t.push(std::move(v), t.requires_grad(a), [a, sums](Tape& tp, const Mat& g) {
    const Mat& x = tp.value(a);
    Vec dots = g.cwiseProduct(x).rowwise().sum();
    Mat d = g;
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      d.row(r).array() = d.row(r).array() / sums[r] - dots[r] / (sums[r] * sums[r]);
    }
    tp.accumulate(a, d);
  });
}

Var mul_cols(Tape& t, Var a, const Vec& factors) {
  Mat v = t.value(a) * factors.asDiagonal();
  return t.push(std::move(v), t.requires_grad(a), [a, factors](Tape& tp, const Mat& g) {
    tp.accumulate(a, g * factors.asDiagonal());
  });
}

Var concat_rows(Tape& t, Var a, Var b) {
  const Mat& x = t.value(a);
  const Mat& y = t.value(b);
  Mat v(x.rows() + y.rows(), x.cols());
  v.topRows(x.rows()) = x;
  v.bottomRows(y.rows()) = y;
  const auto ra = x.rows();
  const auto rb = y.rows();
  return t.push(std::move(v), t.any_requires_grad({a, b}), [a, b, ra, rb](Tape& tp, const Mat& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g.topRows(ra));
    if (tp.requires_grad(b)) tp.accumulate(b, g.bottomRows(rb));
  });
}

Var sum_squares(Tape& t, Var a) {
  Mat v(1, 1);
  v(0, 0) = t.value(a).squaredNorm();
  return t.push(std::move(v), t.requires_grad(a), [a](Tape& tp, const Mat& g) {
    tp.accumulate(a, tp.value(a) * (2.0 * g(0, 0)));
  });
}

Var l2_norm(Tape& t, Var a) {
  Mat v(1, 1);
  const double n = t.value(a).norm();
  v(0, 0) = n;
  return t.push(std::move(v), t.requires_grad(a), [a, n](Tape& tp, const Mat& g) {
    if (n == 0.0) return;
    tp.accumulate(a, tp.value(a) * (g(0, 0) / n));
  });
}

Var mean_squared_error(Tape& t, Var a, const Mat& target) {
  Mat diff = t.value(a) - target;
  Mat v(1, 1);
  const double count = static_cast<double>(diff.size());
  v(0, 0) = diff.squaredNorm() / count;
  return t.push(std::move(v), t.requires_grad(a), [a, diff, count](Tape& tp, const Mat& g) {
    tp.accumulate(a, diff * (2.0 * g(0, 0) / count));
  });
}

namespace {

Mat im2col(const Mat& x, int height, int width, int stride) {
  const int channels = static_cast<int>(x.rows());
  const int oh = (height - 1) / stride + 1;
  const int ow = (width - 1) / stride + 1;
  Mat cols = Mat::Zero(channels * 9, oh * ow);
  for (int c = 0; c < channels; ++c) {
    const double* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(c * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= width) continue;
            dst[oy * ow + ox] = src[iy * width + ix];
          }
        }
      }
    }
  }
  return cols;
}

Mat col2im(const Mat& cols, int channels, int height, int width, int stride) {
  const int oh = (height - 1) / stride + 1;
  const int ow = (width - 1) / stride + 1;
  Mat x = Mat::Zero(channels, height * width);
  for (int c = 0; c < channels; ++c) {
    double* dst = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(c * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= width) continue;
            dst[iy * width + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
  return x;
}

}  // namespace

Var conv3x3(Tape& t, Var x, Var weight, Var bias, int height, int width, int stride) {
  const Mat& xv = t.value(x);
  const Mat& wv = t.value(weight);
  if (wv.cols() != xv.rows() * 9 || xv.cols() != static_cast<Eigen::Index>(height) * width) {
    throw ConfigError("conv3x3: shape mismatch");
  }
  Mat cols = im2col(xv, height, width, stride);
  Mat v = wv * cols;
  v.colwise() += t.value(bias).col(0);
  const bool need_cols = t.requires_grad(weight);
  if (!need_cols) cols.resize(0, 0);
  const int channels = static_cast<int>(xv.rows());
  return t.push(std::move(v), t.any_requires_grad({x, weight, bias}),
                [x, weight, bias, cols = std::move(cols), channels, height, width, stride](
                    Tape& tp, const Mat& g) {
                  if (tp.requires_grad(weight)) tp.accumulate(weight, g * cols.transpose());
                  if (tp.requires_grad(bias)) tp.accumulate(bias, g.rowwise().sum());
                  if (tp.requires_grad(x)) {
                    Mat dcols = tp.value(weight).transpose() * g;
                    tp.accumulate(x, col2im(dcols, channels, height, width, stride));
                  }
                });
}

Var upsample2x(Tape& t, Var x, int height, int width) {
  const Mat& xv = t.value(x);
  const int ow = width * 2;
  Mat v(xv.rows(), height * width * 4);
  for (Eigen::Index c = 0; c < xv.rows(); ++c) {
    for (int y = 0; y < height * 2; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        v(c, y * ow + xx) = xv(c, (y / 2) * width + xx / 2);
      }
    }
  }
  return t.push(std::move(v), t.requires_grad(x), [x, height, width](Tape& tp, const Mat& g) {
    const int ow = width * 2;
    Mat d = Mat::Zero(g.rows(), height * width);
    for (Eigen::Index c = 0; c < g.rows(); ++c) {
      for (int y = 0; y < height * 2; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          d(c, (y / 2) * width + xx / 2) += g(c, y * ow + xx);
        }
      }
    }
    tp.accumulate(x, d);
  });
}

Var group_norm(Tape& t, Var x, Var gamma, Var beta, int groups, double eps) {
  const Mat& xv = t.value(x);
  const auto channels = xv.rows();
  const auto positions = xv.cols();
  if (channels % groups != 0) throw ConfigError("group_norm: channels not divisible by groups");
  const auto per_group = channels / groups;
  const double count = static_cast<double>(per_group * positions);
  Mat xhat(channels, positions);
  Vec inv_std(groups);
  for (int gi = 0; gi < groups; ++gi) {
    auto block = xv.middleRows(gi * per_group, per_group);
    const double mean = block.sum() / count;
    const double var = (block.array() - mean).square().sum() / count;
    inv_std[gi] = 1.0 / std::sqrt(var + eps);
    xhat.middleRows(gi * per_group, per_group) = ((block.array() - mean) * inv_std[gi]).matrix();
  }
  const Mat& gv = t.value(gamma);
  const Mat& bv = t.value(beta);
  Mat v = gv.col(0).asDiagonal() * xhat;
  v.colwise() += bv.col(0);
  return t.push(std::move(v), t.any_requires_grad({x, gamma, beta}),
                [x, gamma, beta, xhat, inv_std, groups, per_group, count](Tape& tp, const Mat& g) {
                  if (tp.requires_grad(gamma)) {
                    tp.accumulate(gamma, g.cwiseProduct(xhat).rowwise().sum());
                  }
                  if (tp.requires_grad(beta)) tp.accumulate(beta, g.rowwise().sum());
                  if (!tp.requires_grad(x)) return;
                  Mat dxhat = tp.value(gamma).col(0).asDiagonal() * g;
                  Mat dx(g.rows(), g.cols());
                  for (int gi = 0; gi < groups; ++gi) {
                    auto dh = dxhat.middleRows(gi * per_group, per_group);
                    auto xh = xhat.middleRows(gi * per_group, per_group);
                    const double mean_d = dh.sum() / count;
                    const double mean_dx = dh.cwiseProduct(xh).sum() / count;
                    dx.middleRows(gi * per_group, per_group) =
                        ((dh.array() - mean_d - xh.array() * mean_dx) * inv_std[gi]).matrix();
                  }
                  tp.accumulate(x, dx);
                });
}

}  // namespace tvdb::ad
