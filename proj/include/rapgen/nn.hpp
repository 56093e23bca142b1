#pragma once

#include <bit>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rapgen/autodiff.hpp"
#include "rapgen/io.hpp"

namespace rapgen::nn {

using ad::Index;
using ad::Var;

// Ordered registry of named trainable tensors. Names are unique.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Var<T> add(const std::string& name, Mat<T> init) {
    require(!index_.count(name), "duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, ad::parameter<T>(std::move(init)));
    return params_.back().second;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return params_; }
  std::vector<std::pair<std::string, Var<T>>>& items() { return params_; }

  Var<T> get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second].second;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p.value().size());
    return n;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
Mat<T> init_normal(Rng& rng, Index rows, Index cols, double stddev) {
  return rng.normal_matrix<T>(rows, cols, stddev);
}

// y = x W (+ b); W is [in x out].
template <class T>
struct Linear {
  Var<T> weight;
  Var<T> bias;  // undefined when constructed without bias

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, Index in, Index out, Rng& rng, bool with_bias = true,
         double gain = 1.0) {
    weight = store.add(name + ".weight", init_normal<T>(rng, in, out, gain / std::sqrt(double(in))));
    if (with_bias) bias = store.add(name + ".bias", Mat<T>::Zero(1, out));
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> y = ad::matmul(x, weight);
    return bias.defined() ? ad::add_row(y, bias) : y;
  }

  Index in_features() const { return weight.rows(); }
  Index out_features() const { return weight.cols(); }
};

template <class T>
struct Embedding {
  Var<T> table;

  Embedding() = default;
  Embedding(ParamStore<T>& store, const std::string& name, Index vocab, Index dim, Rng& rng,
            double stddev = 1.0) {
    table = store.add(name + ".table", init_normal<T>(rng, vocab, dim, stddev));
  }
  Var<T> operator()(const std::vector<int>& ids) const { return ad::gather_rows(table, ids); }
};

template <class T>
struct RmsNorm {
  Var<T> weight;
  RmsNorm() = default;
  RmsNorm(ParamStore<T>& store, const std::string& name, Index dim) {
    weight = store.add(name + ".weight", Mat<T>::Ones(1, dim));
  }
  Var<T> operator()(const Var<T>& x) const { return ad::rms_norm(x, weight); }
};

template <class T>
struct LayerNorm {
  Var<T> gain, bias;
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, Index dim) {
    gain = store.add(name + ".gain", Mat<T>::Ones(1, dim));
    bias = store.add(name + ".bias", Mat<T>::Zero(1, dim));
  }
  Var<T> operator()(const Var<T>& x) const { return ad::layer_norm(x, gain, bias); }
};

// 1-D convolution over time: x [T x Cin] -> [T' x Cout].
template <class T>
struct Conv1d {
  Linear<T> proj;
  Index kernel = 3, stride = 1, pad = 1;

  Conv1d() = default;
  Conv1d(ParamStore<T>& store, const std::string& name, Index in, Index out, Index kernel_size, Rng& rng,
         Index stride_ = 1)
      : kernel(kernel_size), stride(stride_), pad(kernel_size / 2) {
    proj = Linear<T>(store, name, in * kernel_size, out, rng);
  }
  Var<T> operator()(const Var<T>& x) const {
    if (kernel == 1 && stride == 1) return proj(x);
    return proj(ad::unfold(x, kernel, stride, pad));
  }
};

// Multi-head self-attention. `causal` masks future positions; `rotary`
// applies rotary position embedding to queries and keys.
template <class T>
struct SelfAttention {
  Linear<T> q, k, v, o;
  Index heads = 1;
  bool causal = false;
  bool rotary = false;

  SelfAttention() = default;
  SelfAttention(ParamStore<T>& store, const std::string& name, Index dim, Index n_heads, Rng& rng,
                bool causal_, bool rotary_, bool with_bias = false, double out_gain = 1.0)
      : heads(n_heads), causal(causal_), rotary(rotary_) {
    require(n_heads >= 1 && dim % n_heads == 0, "attention: dim must be divisible by heads");
    q = Linear<T>(store, name + ".q", dim, dim, rng, with_bias);
    k = Linear<T>(store, name + ".k", dim, dim, rng, with_bias);
    v = Linear<T>(store, name + ".v", dim, dim, rng, with_bias);
    o = Linear<T>(store, name + ".o", dim, dim, rng, with_bias, out_gain);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> qa = q(x), ka = k(x), va = v(x);
    if (rotary) {
      qa = ad::rope(qa, heads);
      ka = ad::rope(ka, heads);
    }
    const Index dim = x.cols();
    const Index hd = dim / heads;
    const T inv_sqrt = T(1) / std::sqrt(T(hd));
    std::vector<Var<T>> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
      auto qh = heads == 1 ? qa : ad::slice_cols(qa, h * hd, hd);
      auto kh = heads == 1 ? ka : ad::slice_cols(ka, h * hd, hd);
      auto vh = heads == 1 ? va : ad::slice_cols(va, h * hd, hd);
      auto scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
      outs.push_back(ad::matmul(ad::softmax_rows(scores, causal), vh));
    }
    return o(heads == 1 ? outs.front() : ad::concat_cols(outs));
  }
};

// Sinusoidal embedding of a scalar time value.
template <class T>
Mat<T> sinusoidal_embedding(T t, Index dim, T scale = T(1000)) {
  require(dim >= 2 && dim % 2 == 0, "sinusoidal embedding: dim must be even");
  const Index half = dim / 2;
  Mat<T> e(1, dim);
  const T denom = half > 1 ? T(half - 1) : T(1);
  for (Index i = 0; i < half; ++i) {
    const T freq = std::exp(-std::log(T(10000)) * T(i) / denom);
    e(0, i) = std::sin(scale * t * freq);
    e(0, half + i) = std::cos(scale * t * freq);
  }
  return e;
}

// ---------------------------------------------------------------- optimizer

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // <= 0 disables
};

template <class T>
class Adam {
 public:
  Adam(ParamStore<T>& store, AdamOptions opts) : store_(&store), opts_(opts) {
    for (const auto& [name, p] : store.items()) {
      m_.push_back(Mat<T>::Zero(p.rows(), p.cols()));
      v_.push_back(Mat<T>::Zero(p.rows(), p.cols()));
    }
  }

  // Applies accumulated gradients scaled by grad_scale, then clears them.
  // Returns the pre-clip gradient norm.
  double step(double grad_scale = 1.0) {
    auto& items = store_->items();
    double sq = 0.0;
    for (auto& [name, p] : items)
      if (p.grad().size() != 0) sq += static_cast<double>(p.grad().squaredNorm()) * grad_scale * grad_scale;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
    double factor = grad_scale;
    if (opts_.clip_norm > 0.0 && norm > opts_.clip_norm) factor *= opts_.clip_norm / norm;
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, double(t_));
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto& p = items[i].second;
      if (p.grad().size() == 0) continue;
      Mat<T> g = p.grad() * T(factor);
      m_[i] = T(opts_.beta1) * m_[i] + T(1 - opts_.beta1) * g;
      v_[i] = T(opts_.beta2) * v_[i] + T(1 - opts_.beta2) * g.cwiseAbs2();
      Mat<T> update = (m_[i].array() / T(bc1)) / ((v_[i].array() / T(bc2)).sqrt() + T(opts_.eps));
      if (opts_.weight_decay > 0.0) update += T(opts_.weight_decay) * p.value();
      p.mutable_value() -= T(opts_.lr) * update;
    }
    store_->zero_grad();
    return norm;
  }

  AdamOptions& options() { return opts_; }
  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }
  std::vector<Mat<T>>& first_moments() { return m_; }
  std::vector<Mat<T>>& second_moments() { return v_; }

 private:
  ParamStore<T>* store_;
  AdamOptions opts_;
  std::vector<Mat<T>> m_, v_;
  long long t_ = 0;
};

// ---------------------------------------------------------------- checkpoints
//
// Container: "RGCK", uint32 version, uint32 meta length, meta bytes (JSON
// text), uint32 tensor count, then per tensor: uint32 name length, name,
// uint32 rows, uint32 cols, rows*cols float64. Values are stored bit-exactly.

template <class T>
std::string encode_checkpoint(const ParamStore<T>& store, const std::string& meta) {
  std::string out = "RGCK";
  io::detail::put_u32(out, 1);
  io::detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  io::detail::put_u32(out, static_cast<std::uint32_t>(store.items().size()));
  for (const auto& [name, p] : store.items()) {
    io::detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    io::detail::put_u32(out, static_cast<std::uint32_t>(p.rows()));
    io::detail::put_u32(out, static_cast<std::uint32_t>(p.cols()));
    for (Index i = 0; i < p.value().size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(p.value().data()[i]));
      io::detail::put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffu));
      io::detail::put_u32(out, static_cast<std::uint32_t>(bits >> 32));
    }
  }
  return out;
}

inline std::string checkpoint_meta(const std::string& bytes, const std::string& origin = "checkpoint") {
  io::detail::Reader r(bytes, origin);
  if (r.bytes(4) != "RGCK") throw InvalidInput(origin + ": not a checkpoint");
  if (r.u32() != 1) throw InvalidInput(origin + ": unsupported checkpoint version");
  return r.bytes(r.u32());
}

// Loads tensors into an already-constructed store; names and shapes must match.
template <class T>
void decode_checkpoint_into(const std::string& bytes, ParamStore<T>& store, const std::string& origin = "checkpoint") {
  io::detail::Reader r(bytes, origin);
  if (r.bytes(4) != "RGCK") throw InvalidInput(origin + ": not a checkpoint");
  if (r.u32() != 1) throw InvalidInput(origin + ": unsupported checkpoint version");
  r.skip(r.u32());
  const std::uint32_t n = r.u32();
  require(n == store.items().size(), origin + ": parameter count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.bytes(r.u32());
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Var<T> p = store.get(name);
    require(p.rows() == rows && p.cols() == cols, origin + ": shape mismatch for " + name);
    for (Index j = 0; j < p.value().size(); ++j) {
      const std::uint64_t lo = r.u32();
      const std::uint64_t hi = r.u32();
      p.mutable_value().data()[j] = static_cast<T>(std::bit_cast<double>(lo | (hi << 32)));
    }
  }
}

}  // namespace rapgen::nn
