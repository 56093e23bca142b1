#pragma once

// Reverse-mode automatic differentiation over row-major matrices.
//
// A Var is a handle to a graph node. Operations on Vars build the graph
// eagerly; backward() walks it in reverse topological order. Leaf Vars
// created with requires_grad accumulate gradients until zero_grad().

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rapgen/common.hpp"

namespace rapgen::ad {

using Index = Eigen::Index;

template <class T>
struct Node {
  Mat<T> value;
  Mat<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Mat<T>& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

namespace detail {
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording in scope (inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Mat<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const Mat<T>& value() const { return node_->value; }
  Mat<T>& mutable_value() { return node_->value; }
  const Mat<T>& grad() const { return node_->grad; }
  Mat<T>& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  T item() const { return node_->value(0, 0); }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> constant(Mat<T> v) {
  return Var<T>(std::move(v), false);
}

template <class T>
Var<T> parameter(Mat<T> v) {
  return Var<T>(std::move(v), true);
}

namespace detail {

template <class T>
Var<T> make_result(Mat<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (!grad_enabled()) return Var<T>(std::move(n));
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (!any) return Var<T>(std::move(n));
  n->requires_grad = true;
  n->parents.reserve(inputs.size());
  for (auto& v : inputs) n->parents.push_back(v.node());
  n->backward_fn = std::move(fn);
  return Var<T>(std::move(n));
}

template <class T>
void push(Node<T>& parent, const Mat<T>& g) {
  if (parent.requires_grad) parent.accumulate(g);
}

}  // namespace detail

// Seeds d(out)/d(out) = 1 (out must be 1x1) and propagates to every
// reachable node that requires a gradient.
template <class T>
void backward(const Var<T>& out) {
  require(out.rows() == 1 && out.cols() == 1, "backward: output must be a scalar");
  if (!out.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(out.node().get(), 0);
  seen.insert(out.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  out.node()->accumulate(Mat<T>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
  // Intermediate gradients are not needed after the sweep.
  for (Node<T>* n : order)
    if (n->backward_fn) n->grad.resize(0, 0);
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Mat<T> v = a.value() * b.value();
  return detail::make_result<T>(std::move(v), {a, b}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.accumulate(n.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * n.grad);
  });
}

// a * b^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Mat<T> v = a.value() * b.value().transpose();
  return detail::make_result<T>(std::move(v), {a, b}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.accumulate(n.grad * pb.value);
    if (pb.requires_grad) pb.accumulate(n.grad.transpose() * pa.value);
  });
}

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return detail::make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& n) {
    detail::push(*n.parents[0], n.grad);
    detail::push(*n.parents[1], n.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return detail::make_result<T>(a.value() - b.value(), {a, b}, [](Node<T>& n) {
    detail::push(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(-n.grad);
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Mat<T> v = a.value().cwiseProduct(b.value());
  return detail::make_result<T>(std::move(v), {a, b}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::make_result<T>(a.value() * s, {a}, [s](Node<T>& n) {
    detail::push(*n.parents[0], Mat<T>(n.grad * s));
  });
}

// a + row, row broadcast over every row of a.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row shape mismatch");
  Mat<T> v = a.value().rowwise() + row.value().row(0);
  return detail::make_result<T>(std::move(v), {a, row}, [](Node<T>& n) {
    detail::push(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad.colwise().sum());
  });
}

// a * row (elementwise), row broadcast over every row of a.
template <class T>
Var<T> mul_row(const Var<T>& a, const Var<T>& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row: row shape mismatch");
  Mat<T> v = a.value().array().rowwise() * row.value().row(0).array();
  return detail::make_result<T>(std::move(v), {a, row}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pr = *n.parents[1];
    if (pa.requires_grad) pa.accumulate(Mat<T>(n.grad.array().rowwise() * pr.value.row(0).array()));
    if (pr.requires_grad) pr.accumulate(n.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

template <class T>
Var<T> silu(const Var<T>& a) {
  Mat<T> sig = (T(1) + (-a.value().array()).exp()).inverse().matrix();
  Mat<T> v = a.value().cwiseProduct(sig);
  return detail::make_result<T>(std::move(v), {a}, [sig](Node<T>& n) {
    const auto& x = n.parents[0]->value.array();
    Mat<T> d = (sig.array() * (T(1) + x * (T(1) - sig.array()))).matrix();
    detail::push(*n.parents[0], Mat<T>(n.grad.cwiseProduct(d)));
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  Mat<T> v = a.value().array().tanh().matrix();
  return detail::make_result<T>(v, {a}, [v](Node<T>& n) {
    detail::push(*n.parents[0], Mat<T>(n.grad.array() * (T(1) - v.array().square())));
  });
}

// Snake-beta: x + 1/beta * sin^2(alpha * x), alpha = exp(log_alpha),
// beta = exp(log_beta), both per channel.
template <class T>
Var<T> snake_beta(const Var<T>& x, const Var<T>& log_alpha, const Var<T>& log_beta) {
  require(log_alpha.rows() == 1 && log_alpha.cols() == x.cols(), "snake_beta: alpha shape");
  require(log_beta.rows() == 1 && log_beta.cols() == x.cols(), "snake_beta: beta shape");
  const RowVec<T> alpha = log_alpha.value().row(0).array().exp().matrix();
  const RowVec<T> inv_beta = (-log_beta.value().row(0).array()).exp().matrix();
  Mat<T> ax = x.value().array().rowwise() * alpha.array();
  Mat<T> s = ax.array().sin().matrix();
  Mat<T> v = x.value().array() + (s.array().square().rowwise() * inv_beta.array());
  return detail::make_result<T>(std::move(v), {x, log_alpha, log_beta},
                                [alpha, inv_beta, ax, s](Node<T>& n) {
    auto& px = *n.parents[0];
    auto& pa = *n.parents[1];
    auto& pb = *n.parents[2];
    // d/dz sin^2(z) = sin(2z)
    Mat<T> s2 = (T(2) * ax.array()).sin().matrix();
    if (px.requires_grad) {
      Mat<T> d = (s2.array().rowwise() * (alpha.array() * inv_beta.array())) + T(1);
      px.accumulate(n.grad.cwiseProduct(d));
    }
    if (pa.requires_grad) {
      // d/dlog_alpha = inv_beta * sin(2 a x) * a x
      Mat<T> d = (s2.array() * ax.array()).rowwise() * inv_beta.array();
      pa.accumulate(n.grad.cwiseProduct(d).colwise().sum());
    }
    if (pb.requires_grad) {
      // d/dlog_beta = -inv_beta * sin^2(a x)
      Mat<T> d = (s.array().square().rowwise() * (-inv_beta.array()));
      pb.accumulate(n.grad.cwiseProduct(d).colwise().sum());
    }
  });
}

// ---------------------------------------------------------------- shape ops

template <class T>
Var<T> gather_rows(const Var<T>& table, const std::vector<int>& ids) {
  Mat<T> v(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows: index out of range");
    v.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  return detail::make_result<T>(std::move(v), {table}, [ids](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Mat<T> g = Mat<T>::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += n.grad.row(static_cast<Index>(i));
    p.accumulate(g);
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat<T> v(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return detail::make_result<T>(std::move(v), parts, [](Node<T>& n) {
    Index r0 = 0;
    for (auto& p : n.parents) {
      const Index k = p->value.rows();
      if (p->requires_grad) p->accumulate(n.grad.middleRows(r0, k));
      r0 += k;
    }
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Index cols = 0;
  const Index rows = parts.front().rows();
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<T> v(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return detail::make_result<T>(std::move(v), parts, [](Node<T>& n) {
    Index c0 = 0;
    for (auto& p : n.parents) {
      const Index k = p->value.cols();
      if (p->requires_grad) p->accumulate(n.grad.middleCols(c0, k));
      c0 += k;
    }
  });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Mat<T> v = a.value().middleRows(start, count);
  return detail::make_result<T>(std::move(v), {a}, [start, count](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Mat<T> g = Mat<T>::Zero(p.value.rows(), p.value.cols());
    g.middleRows(start, count) = n.grad;
    p.accumulate(g);
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Mat<T> v = a.value().middleCols(start, count);
  return detail::make_result<T>(std::move(v), {a}, [start, count](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Mat<T> g = Mat<T>::Zero(p.value.rows(), p.value.cols());
    g.middleCols(start, count) = n.grad;
    p.accumulate(g);
  });
}

// Broadcast a 1 x C row to `rows` rows.
template <class T>
Var<T> repeat_row(const Var<T>& row, Index rows) {
  require(row.rows() == 1, "repeat_row: input must be a single row");
  Mat<T> v = row.value().replicate(rows, 1);
  return detail::make_result<T>(std::move(v), {row}, [](Node<T>& n) {
    detail::push(*n.parents[0], Mat<T>(n.grad.colwise().sum()));
  });
}

// Nearest-neighbour time upsampling: each row repeated `factor` times.
template <class T>
Var<T> upsample_rows(const Var<T>& a, Index factor) {
  Mat<T> v(a.rows() * factor, a.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index f = 0; f < factor; ++f) v.row(i * factor + f) = a.value().row(i);
  return detail::make_result<T>(std::move(v), {a}, [factor](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Mat<T> g = Mat<T>::Zero(p.value.rows(), p.value.cols());
    for (Index i = 0; i < g.rows(); ++i)
      for (Index f = 0; f < factor; ++f) g.row(i) += n.grad.row(i * factor + f);
    p.accumulate(g);
  });
}

// Zero-pad (or crop, if negative) along time at the end.
template <class T>
Var<T> pad_rows(const Var<T>& a, Index extra) {
  if (extra == 0) return a;
  if (extra < 0) return slice_rows(a, 0, a.rows() + extra);
  return concat_rows<T>({a, constant<T>(Mat<T>::Zero(extra, a.cols()))});
}

// im2col for 1-D convolution over time. Output row t concatenates input
// rows t*stride + k - pad for k in [0, kernel), zero outside the input.
template <class T>
Var<T> unfold(const Var<T>& x, Index kernel, Index stride, Index pad) {
  require(kernel >= 1 && stride >= 1 && pad >= 0, "unfold: bad geometry");
  const Index len = x.rows();
  const Index ch = x.cols();
  const Index out_len = (len + 2 * pad - kernel) / stride + 1;
  require(out_len >= 1, "unfold: input shorter than kernel");
  Mat<T> v = Mat<T>::Zero(out_len, ch * kernel);
  for (Index t = 0; t < out_len; ++t)
    for (Index k = 0; k < kernel; ++k) {
      const Index src = t * stride + k - pad;
      if (src >= 0 && src < len) v.block(t, k * ch, 1, ch) = x.value().row(src);
    }
  return detail::make_result<T>(std::move(v), {x}, [kernel, stride, pad, len, ch, out_len](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Mat<T> g = Mat<T>::Zero(len, ch);
    for (Index t = 0; t < out_len; ++t)
      for (Index k = 0; k < kernel; ++k) {
        const Index src = t * stride + k - pad;
        if (src >= 0 && src < len) g.row(src) += n.grad.block(t, k * ch, 1, ch);
      }
    p.accumulate(g);
  });
}

// ---------------------------------------------------------------- normalization

// Row-wise RMS normalization with a learned per-channel gain.
template <class T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& weight, T eps = T(1e-6)) {
  require(weight.rows() == 1 && weight.cols() == x.cols(), "rms_norm: weight shape");
  const Index c = x.cols();
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv(x.rows());
  for (Index i = 0; i < x.rows(); ++i)
    inv(i) = T(1) / std::sqrt(x.value().row(i).squaredNorm() / T(c) + eps);
  Mat<T> xhat = inv.asDiagonal() * x.value();
  Mat<T> v = xhat.array().rowwise() * weight.value().row(0).array();
  return detail::make_result<T>(std::move(v), {x, weight}, [inv, xhat, c](Node<T>& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    if (pw.requires_grad) pw.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
    if (px.requires_grad) {
      Mat<T> gh = n.grad.array().rowwise() * pw.value.row(0).array();
      Mat<T> g(gh.rows(), gh.cols());
      for (Index i = 0; i < gh.rows(); ++i) {
        const T dot = gh.row(i).dot(xhat.row(i)) / T(c);
        g.row(i) = inv(i) * (gh.row(i) - xhat.row(i) * dot);
      }
      px.accumulate(g);
    }
  });
}

// Row-wise layer normalization with gain and bias.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  require(gain.cols() == x.cols() && bias.cols() == x.cols(), "layer_norm: parameter shape");
  const Index c = x.cols();
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv(x.rows());
  Mat<T> xhat(x.rows(), c);
  for (Index i = 0; i < x.rows(); ++i) {
    const T mean = x.value().row(i).mean();
    RowVec<T> centered = x.value().row(i).array() - mean;
    inv(i) = T(1) / std::sqrt(centered.squaredNorm() / T(c) + eps);
    xhat.row(i) = centered * inv(i);
  }
  Mat<T> v = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return detail::make_result<T>(std::move(v), {x, gain, bias}, [inv, xhat, c](Node<T>& n) {
    auto& px = *n.parents[0];
    auto& pg = *n.parents[1];
    auto& pb = *n.parents[2];
    if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
    if (px.requires_grad) {
      Mat<T> gh = n.grad.array().rowwise() * pg.value.row(0).array();
      Mat<T> g(gh.rows(), gh.cols());
      for (Index i = 0; i < gh.rows(); ++i) {
        const T mean_g = gh.row(i).mean();
        const T dot = gh.row(i).dot(xhat.row(i)) / T(c);
        g.row(i) = inv(i) * (gh.row(i).array() - mean_g - xhat.row(i).array() * dot).matrix();
      }
      px.accumulate(g);
    }
  });
}

// ---------------------------------------------------------------- attention pieces

// Row-wise softmax. With `causal`, entries (i, j) for j > i are masked out
// and receive exactly zero probability.
template <class T>
Var<T> softmax_rows(const Var<T>& x, bool causal = false) {
  Mat<T> p(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Index limit = causal ? std::min<Index>(i + 1, x.cols()) : x.cols();
    const T mx = x.value().row(i).head(limit).maxCoeff();
    T sum = 0;
    for (Index j = 0; j < x.cols(); ++j) {
      if (j < limit) {
        p(i, j) = std::exp(x.value()(i, j) - mx);
        sum += p(i, j);
      } else {
        p(i, j) = T(0);
      }
    }
    p.row(i) /= sum;
  }
  return detail::make_result<T>(p, {x}, [p](Node<T>& n) {
    auto& px = *n.parents[0];
    if (!px.requires_grad) return;
    Mat<T> g(p.rows(), p.cols());
    for (Index i = 0; i < p.rows(); ++i) {
      const T dot = n.grad.row(i).dot(p.row(i));
      g.row(i) = p.row(i).cwiseProduct((n.grad.row(i).array() - dot).matrix());
    }
    px.accumulate(g);
  });
}

// Rotary position embedding applied per head to interleaved channel pairs.
// Row index is the position.
template <class T>
Var<T> rope(const Var<T>& x, Index heads, T base = T(10000)) {
  const Index width = x.cols();
  require(heads >= 1 && width % heads == 0, "rope: width not divisible by heads");
  const Index head_dim = width / heads;
  require(head_dim % 2 == 0, "rope: head dimension must be even");
  const Index len = x.rows();
  Mat<T> cosv(len, head_dim / 2), sinv(len, head_dim / 2);
  for (Index pos = 0; pos < len; ++pos)
    for (Index i = 0; i < head_dim / 2; ++i) {
      const T freq = std::pow(base, -T(2 * i) / T(head_dim));
      cosv(pos, i) = std::cos(T(pos) * freq);
      sinv(pos, i) = std::sin(T(pos) * freq);
    }
  auto rotate = [heads, head_dim, len](const Mat<T>& in, const Mat<T>& c, const Mat<T>& s, T sign) {
    Mat<T> out(in.rows(), in.cols());
    for (Index pos = 0; pos < len; ++pos)
      for (Index h = 0; h < heads; ++h)
        for (Index i = 0; i < head_dim / 2; ++i) {
          const Index a = h * head_dim + 2 * i;
          const T x0 = in(pos, a), x1 = in(pos, a + 1);
          const T cs = c(pos, i), sn = sign * s(pos, i);
          out(pos, a) = x0 * cs - x1 * sn;
          out(pos, a + 1) = x0 * sn + x1 * cs;
        }
    return out;
  };
  Mat<T> v = rotate(x.value(), cosv, sinv, T(1));
  return detail::make_result<T>(std::move(v), {x}, [rotate, cosv, sinv](Node<T>& n) {
    detail::push(*n.parents[0], rotate(n.grad, cosv, sinv, T(-1)));
  });
}

// ---------------------------------------------------------------- reductions & losses

template <class T>
Var<T> mean_rows(const Var<T>& x) {
  require(x.rows() >= 1, "mean_rows: empty input");
  const T inv = T(1) / T(x.rows());
  Mat<T> v = x.value().colwise().sum() * inv;
  return detail::make_result<T>(std::move(v), {x}, [inv](Node<T>& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) p.accumulate(Mat<T>(n.grad.replicate(p.value.rows(), 1) * inv));
  });
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
  Mat<T> v(1, 1);
  v(0, 0) = x.value().sum();
  return detail::make_result<T>(std::move(v), {x}, [](Node<T>& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) p.accumulate(Mat<T>::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
  });
}

// Mean of squared differences over every element.
template <class T>
Var<T> mse(const Var<T>& pred, const Var<T>& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse: shape mismatch");
  Mat<T> diff = pred.value() - target.value();
  const T inv = T(1) / T(std::max<Index>(diff.size(), 1));
  Mat<T> v(1, 1);
  v(0, 0) = diff.squaredNorm() * inv;
  return detail::make_result<T>(std::move(v), {pred, target}, [diff, inv](Node<T>& n) {
    Mat<T> g = diff * (T(2) * inv * n.grad(0, 0));
    detail::push(*n.parents[0], g);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(-g);
  });
}

// Summed token cross-entropy of logits [N x V] against targets; targets < 0
// are ignored. Returns a 1x1 sum (callers normalize by the target count).
template <class T>
Var<T> cross_entropy_sum(const Var<T>& logits, const std::vector<int>& targets) {
  require(static_cast<Index>(targets.size()) == logits.rows(), "cross_entropy: target count mismatch");
  const Index vocab = logits.cols();
  Mat<T> probs(logits.rows(), vocab);
  T total = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0) {
      probs.row(i).setZero();
      continue;
    }
    require(y < vocab, "cross_entropy: target out of range");
    const T mx = logits.value().row(i).maxCoeff();
    RowVec<T> e = (logits.value().row(i).array() - mx).exp().matrix();
    const T s = e.sum();
    probs.row(i) = e / s;
    total += (mx + std::log(s)) - logits.value()(i, y);
  }
  Mat<T> v(1, 1);
  v(0, 0) = total;
  return detail::make_result<T>(std::move(v), {logits}, [probs, targets](Node<T>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    Mat<T> g = probs;
    for (std::size_t i = 0; i < targets.size(); ++i)
      if (targets[i] >= 0) g(static_cast<Index>(i), targets[i]) -= T(1);
    p.accumulate(Mat<T>(g * n.grad(0, 0)));
  });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return sub(a, b);
}

}  // namespace rapgen::ad
