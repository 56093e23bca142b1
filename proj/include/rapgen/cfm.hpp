#pragma once

// Semantic-to-spectrogram conditional flow matching.
//
// Conditional OT path with residual width sigma_min:
//   x_t = (1 - (1 - sigma_min) t) x0 + t x1,    u_t = x1 - (1 - sigma_min) x0
// The vector field regresses u_t; sampling integrates dx/dt = v(x, t) from
// Gaussian noise at t = 0 to t = 1 with fixed-step Euler.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rapgen/featurization.hpp"
#include "rapgen/nn.hpp"
#include "rapgen/refenc.hpp"
#include "rapgen/types.hpp"

namespace rapgen {

struct CFMConfig {
  double sigma_min = 1e-4;
  int sample_steps = 20;
  int n_mels = kMelBins;
  int speaker_dim = kSpeakerDim;
  int input_dim = 2 * kMelBins + kSpeakerDim;  // 320
  int intermediate_dim = 768;
  int down_blocks = 2;
  int mid_blocks = 2;
  int up_blocks = 2;
  int transformers_per_block = 2;
  int heads = 4;
  int ff_mult = 4;
  int time_dim = 64;
  int semantic_vocab = 1025;
  std::vector<int> ref_widths{128, 128, kSpeakerDim};
  double segment_seconds = 10.0;

  void validate() const {
    require(sigma_min >= 0.0 && sigma_min < 1.0, "CFMConfig: sigma_min must lie in [0, 1)");
    require(sample_steps >= 1, "CFMConfig: sample_steps must be >= 1");
    require(n_mels >= 1 && speaker_dim >= 1, "CFMConfig: dimensions must be positive");
    require(input_dim == 2 * n_mels + speaker_dim, "CFMConfig: input_dim must equal 2 * n_mels + speaker_dim");
    require(intermediate_dim >= 1 && intermediate_dim % heads == 0, "CFMConfig: intermediate_dim / heads");
    require(down_blocks >= 1 && up_blocks == down_blocks, "CFMConfig: down and up block counts must match");
    require(mid_blocks >= 0, "CFMConfig: mid_blocks must be >= 0");
    require(transformers_per_block >= 1, "CFMConfig: transformers_per_block must be >= 1");
    require(time_dim >= 2 && time_dim % 2 == 0, "CFMConfig: time_dim must be even");
    require(semantic_vocab >= 2, "CFMConfig: semantic_vocab too small");
    require(!ref_widths.empty() && ref_widths.back() == speaker_dim, "CFMConfig: reference encoder output");
    require(segment_seconds > 0.0, "CFMConfig: segment_seconds must be positive");
  }

  // Time-axis multiple required by the down/up path.
  int time_multiple() const { return 1 << (down_blocks - 1); }
};

// ---------------------------------------------------------------- OT path

struct PathSample {
  MatD x_t;
  MatD u_t;
};

inline PathSample ot_path_sample(const MatD& x0, const MatD& x1, double t, double sigma_min) {
  require(x0.rows() == x1.rows() && x0.cols() == x1.cols(), "ot_path_sample: shape mismatch");
  require(t >= 0.0 && t <= 1.0, "ot_path_sample: t must lie in [0, 1]");
  return {(1.0 - (1.0 - sigma_min) * t) * x0 + t * x1, x1 - (1.0 - sigma_min) * x0};
}

// Per-row times (point clouds): row i uses t(i).
inline PathSample ot_path_sample_rows(const MatD& x0, const MatD& x1, const VecD& t, double sigma_min) {
  require(x0.rows() == x1.rows() && x0.cols() == x1.cols(), "ot_path_sample: shape mismatch");
  require(t.size() == x0.rows(), "ot_path_sample: one time per row required");
  PathSample s{MatD(x0.rows(), x0.cols()), x1 - (1.0 - sigma_min) * x0};
  for (Eigen::Index i = 0; i < x0.rows(); ++i)
    s.x_t.row(i) = (1.0 - (1.0 - sigma_min) * t(i)) * x0.row(i) + t(i) * x1.row(i);
  return s;
}

// ---------------------------------------------------------------- Euler sampler

// Integrates dx/dt = field(x, t) over [0, 1] with `steps` equal Euler
// steps, x_{i+1} = x_i + field(x_i, i/steps) / steps. The iterate is kept
// in displacement form x_i = x_0 + (i/steps) * mean(v_0 .. v_{i-1}), with a
// running mean, so a constant field lands on x_0 + c without accumulated
// rounding.
inline MatD euler_integrate(const std::function<MatD(const MatD&, double)>& field, const MatD& x0, int steps) {
  require(steps >= 1, "euler_sample: steps must be >= 1");
  MatD x = x0;
  MatD mean = MatD::Zero(x0.rows(), x0.cols());
  for (int i = 0; i < steps; ++i) {
    MatD v = field(x, static_cast<double>(i) / steps);
    require(v.rows() == x0.rows() && v.cols() == x0.cols(), "euler_sample: field output shape mismatch");
    if (i == 0)
      mean = std::move(v);
    else
      mean += (v - mean) / static_cast<double>(i + 1);
    x = x0 + (static_cast<double>(i + 1) / steps) * mean;
  }
  return x;
}

// ---------------------------------------------------------------- U-Net vector field

template <class T>
class UNetField {
 public:
  UNetField(nn::ParamStore<T>& store, const std::string& name, const CFMConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int ch = cfg.intermediate_dim;
    const int td = cfg.time_dim;
    time_mlp1_ = nn::Linear<T>(store, name + ".time.fc1", td, 4 * td, rng);
    time_mlp2_ = nn::Linear<T>(store, name + ".time.fc2", 4 * td, td, rng);
    int in = cfg.input_dim;
    for (int i = 0; i < cfg.down_blocks; ++i) {
      const std::string p = name + ".down" + std::to_string(i);
      Level lv;
      lv.res = ResBlock(store, p + ".res", in, ch, td, rng);
      lv.tf = transformer_stack(store, p, cfg, rng);
      if (i + 1 < cfg.down_blocks) lv.resample = nn::Conv1d<T>(store, p + ".downsample", ch, ch, 3, rng, 2);
      down_.push_back(std::move(lv));
      in = ch;
    }
    for (int i = 0; i < cfg.mid_blocks; ++i) {
      const std::string p = name + ".mid" + std::to_string(i);
      Level lv;
      lv.res = ResBlock(store, p + ".res", ch, ch, td, rng);
      lv.tf = transformer_stack(store, p, cfg, rng);
      mid_.push_back(std::move(lv));
    }
    for (int i = 0; i < cfg.up_blocks; ++i) {
      const std::string p = name + ".up" + std::to_string(i);
      Level lv;
      lv.res = ResBlock(store, p + ".res", 2 * ch, ch, td, rng);
      lv.tf = transformer_stack(store, p, cfg, rng);
      if (i + 1 < cfg.up_blocks) lv.resample = nn::Conv1d<T>(store, p + ".upsample", ch, ch, 3, rng);
      up_.push_back(std::move(lv));
    }
    final_conv_ = nn::Conv1d<T>(store, name + ".final.conv", ch, ch, 3, rng);
    final_norm_ = nn::LayerNorm<T>(store, name + ".final.norm", ch);
    final_proj_ = nn::Linear<T>(store, name + ".final.proj", ch, cfg.n_mels, rng);
  }

  const CFMConfig& config() const { return cfg_; }

  // Zeroes the output projection (the field is then identically zero).
  void zero_output_layer() {
    final_proj_.weight.mutable_value().setZero();
    final_proj_.bias.mutable_value().setZero();
  }

  // Channel concatenation [x_t | mu | speaker broadcast over time].
  ad::Var<T> assemble_input(const ad::Var<T>& x_t, const ad::Var<T>& mu, const ad::Var<T>& spk) const {
    require(mu.rows() == x_t.rows(), "unet: mu length does not match x_t");
    require(spk.rows() == 1, "unet: speaker embedding must be a single row");
    const auto channels = x_t.cols() + mu.cols() + spk.cols();
    if (channels != cfg_.input_dim || x_t.cols() != cfg_.n_mels || mu.cols() != cfg_.n_mels)
      throw InvalidInput("unet: input assembles to " + std::to_string(channels) + " channels, expected " +
                         std::to_string(cfg_.input_dim));
    return ad::concat_cols<T>({x_t, mu, ad::repeat_row(spk, x_t.rows())});
  }

  // x_t [T x n_mels], mu [T x n_mels], spk [1 x speaker_dim] -> [T x n_mels]
  ad::Var<T> operator()(const ad::Var<T>& x_t, T t, const ad::Var<T>& mu, const ad::Var<T>& spk) const {
    auto x = assemble_input(x_t, mu, spk);
    const auto len = x.rows();
    require(len >= 1, "unet: empty input");
    const auto mult = cfg_.time_multiple();
    const auto padded = ((len + mult - 1) / mult) * mult;
    x = ad::pad_rows(x, padded - len);

    auto temb = ad::constant<T>(nn::sinusoidal_embedding<T>(t, cfg_.time_dim));
    temb = time_mlp2_(ad::silu(time_mlp1_(temb)));

    std::vector<ad::Var<T>> skips;
    for (const auto& lv : down_) {
      x = lv(x, temb);
      skips.push_back(x);
      if (lv.resample.proj.weight.defined()) x = lv.resample(x);
    }
    for (const auto& lv : mid_) x = lv(x, temb);
    for (const auto& lv : up_) {
      auto skip = skips.back();
      skips.pop_back();
      x = ad::pad_rows(x, skip.rows() - x.rows());
      x = lv(ad::concat_cols<T>({x, skip}), temb);
      if (lv.resample.proj.weight.defined()) x = lv.resample(ad::upsample_rows(x, 2));
    }
    x = ad::silu(final_norm_(final_conv_(x)));
    x = final_proj_(x);
    return ad::slice_rows(x, 0, len);
  }

 private:
  struct ResBlock {
    nn::Conv1d<T> conv1, conv2, skip;
    nn::LayerNorm<T> norm1, norm2;
    nn::Linear<T> time_proj;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(nn::ParamStore<T>& store, const std::string& p, int in, int out, int td, Rng& rng) {
      conv1 = nn::Conv1d<T>(store, p + ".conv1", in, out, 3, rng);
      norm1 = nn::LayerNorm<T>(store, p + ".norm1", out);
      time_proj = nn::Linear<T>(store, p + ".time", td, out, rng);
      conv2 = nn::Conv1d<T>(store, p + ".conv2", out, out, 3, rng);
      norm2 = nn::LayerNorm<T>(store, p + ".norm2", out);
      has_skip = in != out;
      if (has_skip) skip = nn::Conv1d<T>(store, p + ".skip", in, out, 1, rng);
    }
    ad::Var<T> operator()(const ad::Var<T>& x, const ad::Var<T>& temb) const {
      auto h = ad::silu(norm1(conv1(x)));
      h = ad::add_row(h, time_proj(ad::silu(temb)));
      h = ad::silu(norm2(conv2(h)));
      return ad::add(h, has_skip ? skip(x) : x);
    }
  };

  struct TfBlock {
    nn::LayerNorm<T> norm1, norm2;
    nn::SelfAttention<T> attn;
    nn::Linear<T> ff_in, ff_out;
    ad::Var<T> log_alpha, log_beta;

    TfBlock() = default;
    TfBlock(nn::ParamStore<T>& store, const std::string& p, int ch, int heads, int ff_mult, Rng& rng) {
      norm1 = nn::LayerNorm<T>(store, p + ".norm1", ch);
      attn = nn::SelfAttention<T>(store, p + ".attn", ch, heads, rng, false, false, true, 0.5);
      norm2 = nn::LayerNorm<T>(store, p + ".norm2", ch);
      ff_in = nn::Linear<T>(store, p + ".ff.in", ch, ff_mult * ch, rng);
      log_alpha = store.add(p + ".ff.snake_log_alpha", Mat<T>::Zero(1, ff_mult * ch));
      log_beta = store.add(p + ".ff.snake_log_beta", Mat<T>::Zero(1, ff_mult * ch));
      ff_out = nn::Linear<T>(store, p + ".ff.out", ff_mult * ch, ch, rng, true, 0.5);
    }
    ad::Var<T> operator()(const ad::Var<T>& x) const {
      auto h = ad::add(x, attn(norm1(x)));
      return ad::add(h, ff_out(ad::snake_beta(ff_in(norm2(h)), log_alpha, log_beta)));
    }
  };

  struct Level {
    ResBlock res;
    std::vector<TfBlock> tf;
    nn::Conv1d<T> resample;

    ad::Var<T> operator()(ad::Var<T> x, const ad::Var<T>& temb) const {
      x = res(x, temb);
      for (const auto& b : tf) x = b(x);
      return x;
    }
  };

  static std::vector<TfBlock> transformer_stack(nn::ParamStore<T>& store, const std::string& p, const CFMConfig& cfg,
                                                Rng& rng) {
    std::vector<TfBlock> out;
    for (int j = 0; j < cfg.transformers_per_block; ++j)
      out.emplace_back(store, p + ".tf" + std::to_string(j), cfg.intermediate_dim, cfg.heads, cfg.ff_mult, rng);
    return out;
  }

  CFMConfig cfg_;
  nn::Linear<T> time_mlp1_, time_mlp2_;
  std::vector<Level> down_, mid_, up_;
  nn::Conv1d<T> final_conv_;
  nn::LayerNorm<T> final_norm_;
  nn::Linear<T> final_proj_;
};

// ---------------------------------------------------------------- loss

// Mean squared error between the conditional field u_t and the network
// prediction, with t ~ U[0, 1] and x0 ~ N(0, I) drawn per sample from `rng`.
// `field(x_t, t, i)` evaluates the network for sample i.
template <class T>
ad::Var<T> cfm_loss(const std::vector<MatD>& x1_batch,
                    const std::function<ad::Var<T>(const ad::Var<T>&, T, std::size_t)>& field, double sigma_min,
                    Rng& rng) {
  require(!x1_batch.empty(), "cfm_loss: empty batch");
  std::vector<ad::Var<T>> losses;
  for (std::size_t i = 0; i < x1_batch.size(); ++i) {
    const auto& x1 = x1_batch[i];
    const double t = rng.uniform();
    MatD x0 = rng.normal_matrix<double>(x1.rows(), x1.cols());
    auto path = ot_path_sample(x0, x1, t, sigma_min);
    auto pred = field(ad::constant<T>(path.x_t.cast<T>()), static_cast<T>(t), i);
    require(pred.rows() == x1.rows() && pred.cols() == x1.cols(), "cfm_loss: field output shape mismatch");
    losses.push_back(ad::mse(pred, ad::constant<T>(path.u_t.cast<T>())));
  }
  return ad::scale(ad::sum_all(ad::concat_rows(losses)), T(1) / T(losses.size()));
}

// ---------------------------------------------------------------- semantic-to-mel model

struct CfmExample {
  std::vector<int> tokens;  // semantic tokens at the token frame rate
  double token_rate_hz = kSslFrameRate;
  MelSpectrogram mel;       // target log-mels
  MelSpectrogram reference;
};

// Per-dataset log-mel normalization.
struct MelNorm {
  double mean = 0.0;
  double std = 1.0;
};

template <class T>
class SemanticToMel {
 public:
  SemanticToMel(const CFMConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    RefEncoderConfig rc{cfg_.n_mels, cfg_.ref_widths, 1};
    refenc_ = std::make_unique<ReferenceEncoder<T>>(store_, "cfm.refenc", rc, rng);
    token_table_ = nn::Embedding<T>(store_, "cfm.token_emb", cfg_.semantic_vocab, cfg_.n_mels, rng, 1.0);
    unet_ = std::make_unique<UNetField<T>>(store_, "cfm.unet", cfg_, rng);
  }

  SemanticToMel(const SemanticToMel&) = delete;
  SemanticToMel& operator=(const SemanticToMel&) = delete;

  const CFMConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  UNetField<T>& unet() { return *unet_; }
  const UNetField<T>& unet() const { return *unet_; }
  const ReferenceEncoder<T>& reference_encoder() const { return *refenc_; }
  MelNorm& norm() { return norm_; }
  const MelNorm& norm() const { return norm_; }
  const ad::Var<T>& token_table() const { return token_table_.table; }

  // mu: token embeddings resampled (nearest neighbour) to `length` frames.
  ad::Var<T> condition(const std::vector<int>& tokens, double token_rate_hz, Eigen::Index length) const {
    require(!tokens.empty(), "cfm: empty token sequence");
    return token_table_(expand_tokens(tokens, token_rate_hz, length));
  }

  static std::vector<int> expand_tokens(const std::vector<int>& tokens, double token_rate_hz, Eigen::Index length) {
    const auto map = resample_index_map(static_cast<Eigen::Index>(tokens.size()), length, token_rate_hz, kMelFrameRate);
    std::vector<int> ids(map.size());
    for (std::size_t j = 0; j < map.size(); ++j) ids[j] = tokens[static_cast<std::size_t>(map[j])];
    return ids;
  }

  ad::Var<T> speaker(const MelSpectrogram& reference) const {
    return refenc_->forward(ad::constant<T>(reference.frames.template cast<T>()));
  }

  // Crops or pads (tokens with EOS, mel with its minimum) to the fixed
  // training segment length.
  CfmExample fit_segment(const CfmExample& ex) const {
    const auto target = static_cast<Eigen::Index>(std::llround(cfg_.segment_seconds * kMelFrameRate));
    CfmExample out = ex;
    const auto mel_len = ex.mel.length();
    if (mel_len >= target) {
      out.mel.frames = ex.mel.frames.topRows(target);
    } else {
      const double floor_value = ex.mel.frames.size() ? ex.mel.frames.minCoeff() : 0.0;
      out.mel.frames = MatD::Constant(target, ex.mel.n_mels(), floor_value);
      out.mel.frames.topRows(mel_len) = ex.mel.frames;
    }
    const auto token_len = resampled_length(target, kMelFrameRate, ex.token_rate_hz);
    out.tokens.resize(static_cast<std::size_t>(std::max<Eigen::Index>(token_len, 1)), cfg_.semantic_vocab - 1);
    return out;
  }

  ad::Var<T> loss(const std::vector<CfmExample>& batch, Rng& rng) const {
    std::vector<MatD> x1s;
    std::vector<ad::Var<T>> mus, spks;
    for (const auto& ex : batch) {
      require(ex.mel.n_mels() == cfg_.n_mels, "cfm_loss: mel channel mismatch");
      x1s.push_back((ex.mel.frames.array() - norm_.mean) / norm_.std);
      mus.push_back(condition(ex.tokens, ex.token_rate_hz, ex.mel.length()));
      spks.push_back(speaker(ex.reference));
    }
    return cfm_loss<T>(
        x1s, [&](const ad::Var<T>& x_t, T t, std::size_t i) { return (*unet_)(x_t, t, mus[i], spks[i]); },
        cfg_.sigma_min, rng);
  }

  // Euler integration from seeded noise; returns de-normalized log-mels.
  MelSpectrogram sample(const std::vector<int>& tokens, double token_rate_hz, const SpeakerEmbedding& spk,
                        int steps, std::uint64_t seed) const {
    require(spk.values.size() == cfg_.speaker_dim, "euler_sample: speaker embedding size mismatch");
    ad::NoGradGuard guard;
    const auto len = resampled_length(static_cast<Eigen::Index>(tokens.size()), token_rate_hz, kMelFrameRate);
    require(len >= 1, "euler_sample: token sequence too short");
    auto mu = condition(tokens, token_rate_hz, len);
    auto spk_var = ad::constant<T>(Mat<T>(spk.values.transpose().template cast<T>()));
    Rng rng(seed);
    MatD x0 = rng.normal_matrix<double>(len, cfg_.n_mels);
    MatD x1 = euler_integrate(
        [&](const MatD& x, double t) {
          return MatD((*unet_)(ad::constant<T>(x.cast<T>()), static_cast<T>(t), mu, spk_var).value().template cast<double>());
        },
        x0, steps);
    MelSpectrogram mel;
    mel.frames = (x1.array() * norm_.std + norm_.mean).matrix();
    return mel;
  }

  SpeakerEmbedding encode_reference(const MelSpectrogram& reference) const { return refenc_->encode(reference); }

 private:
  CFMConfig cfg_;
  nn::ParamStore<T> store_;
  std::unique_ptr<ReferenceEncoder<T>> refenc_;
  nn::Embedding<T> token_table_;
  std::unique_ptr<UNetField<T>> unet_;
  MelNorm norm_;
};

template <class T>
class CfmTrainer {
 public:
  CfmTrainer(SemanticToMel<T>& model, nn::AdamOptions adam, int grad_accum, std::uint64_t seed)
      : model_(&model), adam_(model.params(), adam), grad_accum_(grad_accum), rng_(seed) {
    require(grad_accum >= 1, "grad_accum must be >= 1");
  }

  double train_step(const std::vector<CfmExample>& batch) {
    std::vector<CfmExample> fitted;
    fitted.reserve(batch.size());
    for (const auto& ex : batch) fitted.push_back(model_->fit_segment(ex));
    auto loss = model_->loss(fitted, rng_);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) throw NumericalError("cfm training: non-finite loss");
    ad::backward(loss);
    if (++micro_ % grad_accum_ == 0) adam_.step(1.0 / grad_accum_);
    return value;
  }

  Rng& rng() { return rng_; }
  nn::Adam<T>& adam() { return adam_; }

 private:
  SemanticToMel<T>* model_;
  nn::Adam<T> adam_;
  int grad_accum_;
  Rng rng_;
  long long micro_ = 0;
};

// ---------------------------------------------------------------- point-cloud flow

// Small MLP vector field v(x, t) for flat point clouds; used for toy
// density-matching experiments with the same path, loss, and sampler.
template <class T>
class PointFlowField {
 public:
  PointFlowField(int dim, int hidden, int layers, int time_dim, std::uint64_t seed) : dim_(dim), time_dim_(time_dim) {
    Rng rng(seed);
    int in = dim + time_dim;
    for (int l = 0; l < layers; ++l) {
      layers_.emplace_back(store_, "flow.fc" + std::to_string(l), in, hidden, rng);
      in = hidden;
    }
    out_ = nn::Linear<T>(store_, "flow.out", in, dim, rng);
  }

  nn::ParamStore<T>& params() { return store_; }

  // x [N x dim], t [N] -> [N x dim]
  ad::Var<T> operator()(const ad::Var<T>& x, const VecD& t) const {
    Mat<T> temb(x.rows(), time_dim_);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      temb.row(i) = nn::sinusoidal_embedding<T>(static_cast<T>(t(i)), time_dim_, T(1)).row(0);
    auto h = ad::concat_cols<T>({x, ad::constant<T>(std::move(temb))});
    for (const auto& l : layers_) h = ad::silu(l(h));
    return out_(h);
  }

  ad::Var<T> loss(const MatD& x1, double sigma_min, Rng& rng) const {
    VecD t(x1.rows());
    for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = rng.uniform();
    MatD x0 = rng.normal_matrix<double>(x1.rows(), x1.cols());
    auto path = ot_path_sample_rows(x0, x1, t, sigma_min);
    return ad::mse((*this)(ad::constant<T>(path.x_t.cast<T>()), t), ad::constant<T>(path.u_t.cast<T>()));
  }

  MatD sample(Eigen::Index n, int steps, std::uint64_t seed) const {
    ad::NoGradGuard guard;
    Rng rng(seed);
    MatD x0 = rng.normal_matrix<double>(n, dim_);
    return euler_integrate(
        [&](const MatD& x, double t) {
          return MatD((*this)(ad::constant<T>(x.cast<T>()), VecD::Constant(x.rows(), t)).value().template cast<double>());
        },
        x0, steps);
  }

 private:
  int dim_;
  int time_dim_;
  nn::ParamStore<T> store_;
  std::vector<nn::Linear<T>> layers_;
  nn::Linear<T> out_;
};

}  // namespace rapgen
