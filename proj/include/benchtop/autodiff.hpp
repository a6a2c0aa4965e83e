#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "benchtop/common.hpp"

namespace benchtop {

/// Reverse-mode tape over dense double matrices. One tape per forward pass;
/// nodes are identified by index. Parameters enter as leaves tagged with an
/// external slot so their gradients can be scattered back after backward().
class Tape {
 public:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void(Tape&)> back;  // empty for leaves
    int param_slot = -1;
  };

  int size() const { return int(nodes_.size()); }

  const Mat& val(int id) const { return nodes_[id].val; }
  const Mat& grad(int id) const { return nodes_[id].grad; }

  int leaf(Mat v) {
    nodes_.push_back(Node{std::move(v), Mat(), nullptr, -1});
    return size() - 1;
  }

  int param(Mat v, int slot) {
    nodes_.push_back(Node{std::move(v), Mat(), nullptr, slot});
    return size() - 1;
  }

  int matmul(int a, int b) {  // A * B
    return push(val(a) * val(b), [a, b](Tape& t) {
      t.acc(a, t.g() * t.val(b).transpose());
      t.acc(b, t.val(a).transpose() * t.g());
    });
  }

  int matmul_nt(int a, int b) {  // A * B^T
    return push(val(a) * val(b).transpose(), [a, b](Tape& t) {
      t.acc(a, t.g() * t.val(b));
      t.acc(b, t.g().transpose() * t.val(a));
    });
  }

  int add(int a, int b) {
    return push(val(a) + val(b), [a, b](Tape& t) {
      t.acc(a, t.g());
      t.acc(b, t.g());
    });
  }

  int sub(int a, int b) {
    return push(val(a) - val(b), [a, b](Tape& t) {
      t.acc(a, t.g());
      t.acc(b, -t.g());
    });
  }

  int add_scalar(int a, double s) {
    return push(val(a).array() + s, [a](Tape& t) { t.acc(a, t.g()); });
  }

  int mul_scalar(int a, double s) {
    return push(val(a) * s, [a, s](Tape& t) { t.acc(a, t.g() * s); });
  }

  int hadamard(int a, int b) {
    return push(val(a).cwiseProduct(val(b)), [a, b](Tape& t) {
      t.acc(a, t.g().cwiseProduct(t.val(b)));
      t.acc(b, t.g().cwiseProduct(t.val(a)));
    });
  }

  // r is 1 x C, broadcast over the rows of a.
  int rowwise_add(int a, int r) {
    Mat out = val(a);
    out.rowwise() += val(r).row(0);
    return push(std::move(out), [a, r](Tape& t) {
      t.acc(a, t.g());
      t.acc(r, t.g().colwise().sum());
    });
  }

  int rowwise_mul(int a, int r) {
    Mat out = val(a).array().rowwise() * val(r).row(0).array();
    return push(std::move(out), [a, r](Tape& t) {
      t.acc(a, t.g().array().rowwise() * t.val(r).row(0).array());
      t.acc(r, (t.g().array() * t.val(a).array()).colwise().sum().matrix());
    });
  }

  int leaky_gelu_op(int a) {
    return push(val(a).unaryExpr([](double x) { return leaky_gelu(x); }), [a](Tape& t) {
      t.acc(a, t.g().cwiseProduct(
                   t.val(a).unaryExpr([](double x) { return leaky_gelu_grad(x); })));
    });
  }

  int sigmoid_op(int a) {
    int id = push(val(a).unaryExpr([](double x) { return sigmoid(x); }), nullptr);
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& y = t.val(id);
      t.acc(a, t.grad(id).cwiseProduct(y.cwiseProduct(Mat::Ones(y.rows(), y.cols()) - y)));
    };
    return id;
  }

  int softmax_rows(int a) {
    Mat out = val(a);
    for (int r = 0; r < out.rows(); ++r) {
      double m = out.row(r).maxCoeff();
      out.row(r) = (out.row(r).array() - m).exp();
      out.row(r) /= out.row(r).sum();
    }
    int id = push(std::move(out), nullptr);
    nodes_[id].back = [a, id](Tape& t) {
      const Mat& y = t.val(id);
      const Mat& g = t.grad(id);
      Mat dx(y.rows(), y.cols());
      for (int r = 0; r < y.rows(); ++r) {
        double dot = g.row(r).dot(y.row(r));
        dx.row(r) = y.row(r).array() * (g.row(r).array() - dot);
      }
      t.acc(a, std::move(dx));
    };
    return id;
  }

  // Per-row layer normalization without affine terms.
  int layernorm_rows(int a, double eps = 1e-6) {
    const Mat& x = val(a);
    int n = int(x.cols());
    Mat out(x.rows(), n);
    for (int r = 0; r < x.rows(); ++r) {
      double mu = x.row(r).mean();
      RowVec c = x.row(r).array() - mu;
      double var = c.squaredNorm() / n;
      out.row(r) = c / std::sqrt(var + eps);
    }
    int id = push(std::move(out), nullptr);
    nodes_[id].back = [a, id, eps](Tape& t) {
      const Mat& x = t.val(a);
      const Mat& g = t.grad(id);
      int n = int(x.cols());
      Mat dx(x.rows(), n);
      for (int r = 0; r < x.rows(); ++r) {
        double mu = x.row(r).mean();
        RowVec c = x.row(r).array() - mu;
        double var = c.squaredNorm() / n;
        double inv = 1.0 / std::sqrt(var + eps);
        RowVec y = c * inv;
        double gm = g.row(r).mean();
        double gy = g.row(r).dot(y) / n;
        dx.row(r) = inv * (g.row(r).array() - gm - y.array() * gy);
      }
      t.acc(a, std::move(dx));
    };
    return id;
  }

  // Per-row RMS normalization: y = x / sqrt(mean(x^2) + eps).
  int rmsnorm_rows(int a, double eps = 1e-6) {
    const Mat& x = val(a);
    int n = int(x.cols());
    Mat out(x.rows(), n);
    for (int r = 0; r < x.rows(); ++r) {
      double rms = std::sqrt(x.row(r).squaredNorm() / n + eps);
      out.row(r) = x.row(r) / rms;
    }
    int id = push(std::move(out), nullptr);
    nodes_[id].back = [a, id, eps](Tape& t) {
      const Mat& x = t.val(a);
      const Mat& g = t.grad(id);
      int n = int(x.cols());
      Mat dx(x.rows(), n);
      for (int r = 0; r < x.rows(); ++r) {
        double ms = x.row(r).squaredNorm() / n + eps;
        double inv = 1.0 / std::sqrt(ms);
        double dot = g.row(r).dot(x.row(r));
        dx.row(r) = inv * g.row(r).array() - (inv * inv * inv * dot / n) * x.row(r).array();
      }
      t.acc(a, std::move(dx));
    };
    return id;
  }

  int slice_cols(int a, int start, int count) {
    return push(val(a).middleCols(start, count), [a, start, count](Tape& t) {
      Mat d = Mat::Zero(t.val(a).rows(), t.val(a).cols());
      d.middleCols(start, count) = t.g();
      t.acc(a, std::move(d));
    });
  }

  int slice_rows(int a, int start, int count) {
    return push(val(a).middleRows(start, count), [a, start, count](Tape& t) {
      Mat d = Mat::Zero(t.val(a).rows(), t.val(a).cols());
      d.middleRows(start, count) = t.g();
      t.acc(a, std::move(d));
    });
  }

  int concat_cols(const std::vector<int>& parts) {
    int rows = int(val(parts[0]).rows());
    int cols = 0;
    for (int p : parts) cols += int(val(p).cols());
    Mat out(rows, cols);
    int off = 0;
    for (int p : parts) {
      out.middleCols(off, val(p).cols()) = val(p);
      off += int(val(p).cols());
    }
    return push(std::move(out), [parts](Tape& t) {
      int off = 0;
      for (int p : parts) {
        int c = int(t.val(p).cols());
        t.acc(p, t.g().middleCols(off, c));
        off += c;
      }
    });
  }

  int concat_rows(const std::vector<int>& parts) {
    int cols = int(val(parts[0]).cols());
    int rows = 0;
    for (int p : parts) rows += int(val(p).rows());
    Mat out(rows, cols);
    int off = 0;
    for (int p : parts) {
      out.middleRows(off, val(p).rows()) = val(p);
      off += int(val(p).rows());
    }
    return push(std::move(out), [parts](Tape& t) {
      int off = 0;
      for (int p : parts) {
        int r = int(t.val(p).rows());
        t.acc(p, t.g().middleRows(off, r));
        off += r;
      }
    });
  }

  // Mean over all entries of (a - target)^2; target is a constant.
  int mse_against(int a, Mat target) {
    double n = double(val(a).size());
    Mat loss(1, 1);
    loss(0, 0) = (val(a) - target).squaredNorm() / n;
    int id = push(std::move(loss), nullptr);
    nodes_[id].back = [a, id, target = std::move(target), n](Tape& t) {
      double gs = t.grad(id)(0, 0);
      t.acc(a, (2.0 / n) * gs * (t.val(a) - target));
    };
    return id;
  }

  int mean_all(int a) {
    Mat out(1, 1);
    out(0, 0) = val(a).mean();
    int id = push(std::move(out), nullptr);
    nodes_[id].back = [a, id](Tape& t) {
      double gs = t.grad(id)(0, 0);
      t.acc(a, Mat::Constant(t.val(a).rows(), t.val(a).cols(), gs / double(t.val(a).size())));
    };
    return id;
  }

  /// Seeds d(out)/d(out) = 1 and walks the tape backwards. Parameter
  /// gradients are added into param_grads[slot]; the caller zeroes them.
  void backward(int out, std::vector<Mat>* param_grads) {
    for (auto& n : nodes_) n.grad = Mat();
    nodes_[out].grad = Mat::Ones(nodes_[out].val.rows(), nodes_[out].val.cols());
    for (int i = out; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      cur_ = i;
      if (n.back) n.back(*this);
      if (n.param_slot >= 0 && param_grads) {
        Mat& pg = (*param_grads)[n.param_slot];
        if (pg.size() == 0)
          pg = n.grad;
        else
          pg += n.grad;
      }
    }
  }

 private:
  int push(Mat v, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(v), Mat(), std::move(back), -1});
    return size() - 1;
  }

  const Mat& g() const { return nodes_[cur_].grad; }

  void acc(int id, Mat d) {
    if (d.size() == 0) return;
    Mat& g = nodes_[id].grad;
    if (g.size() == 0)
      g = std::move(d);
    else
      g += d;
  }

  std::vector<Node> nodes_;
  int cur_ = -1;
};

}  // namespace benchtop
