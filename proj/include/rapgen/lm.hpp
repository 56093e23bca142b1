#pragma once

// Lyrics-to-semantic language model.
//
// Sequence layout: [speaker | lyrics (L) | semantic region]. The semantic
// region input at position t is the embedding of the previous token (the
// EOS id doubles as the start marker) plus the projected accompaniment
// frame t + K. Logits at semantic position t predict token t, so the
// prediction of token t sees accompaniment frames up to t + K and never
// beyond.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "rapgen/nn.hpp"
#include "rapgen/refenc.hpp"
#include "rapgen/types.hpp"

namespace rapgen {

struct LMConfig {
  int layers = 6;
  int hidden = 1024;
  int intermediate = 4096;
  int heads = 16;
  int speaker_dim = kSpeakerDim;
  int shift_k = 150;
  int semantic_vocab = 1025;  // k-means clusters + EOS
  int lyrics_vocab = 30;
  int accomp_dim = 1024;
  double mask_full_prob = 0.5;
  int max_len = 4096;
  int ref_mels = kMelBins;
  std::vector<int> ref_widths{128, 128, kSpeakerDim};

  void validate() const {
    require(layers >= 1, "LMConfig: layers must be >= 1");
    require(hidden >= 2 && heads >= 1 && hidden % heads == 0, "LMConfig: hidden must be divisible by heads");
    require((hidden / heads) % 2 == 0, "LMConfig: head dimension must be even (rotary positions)");
    require(intermediate >= 1, "LMConfig: intermediate must be >= 1");
    require(shift_k >= 0, "LMConfig: shift_k must be >= 0");
    require(mask_full_prob >= 0.0 && mask_full_prob <= 1.0, "LMConfig: mask_full_prob must lie in [0, 1]");
    require(semantic_vocab >= 2 && lyrics_vocab >= 2, "LMConfig: vocab sizes too small");
    require(accomp_dim >= 1 && speaker_dim >= 1 && ref_mels >= 1, "LMConfig: dimensions must be positive");
    require(!ref_widths.empty() && ref_widths.back() == speaker_dim,
            "LMConfig: reference encoder must end at speaker_dim");
    require(max_len >= 3, "LMConfig: max_len too small");
  }

  int eos_id() const { return semantic_vocab - 1; }

  // Closed-form parameter count of SemanticLM for this configuration.
  std::size_t parameter_count() const {
    auto lin = [](std::size_t in, std::size_t out, bool bias) { return in * out + (bias ? out : 0); };
    const std::size_t h = hidden, f = intermediate;
    std::size_t n = 0;
    std::size_t in = ref_mels;
    for (int w : ref_widths) {
      n += lin(in, w, true);
      in = w;
    }
    n += 4 * lin(in, in, false);
    n += std::size_t(lyrics_vocab) * h + std::size_t(semantic_vocab) * h;
    n += lin(accomp_dim, h, false) + lin(speaker_dim, h, false);
    n += std::size_t(layers) * (2 * h + 4 * lin(h, h, false) + 2 * lin(h, f, false) + lin(f, h, false));
    n += h + lin(h, semantic_vocab, false);
    return n;
  }
};

// ---------------------------------------------------------------- conditioning ops

// Output frame t is input frame t + K, or zeros past the end of the input.
inline FeatureMatrix shift_accompaniment(const FeatureMatrix& accomp, int k, Eigen::Index target_len) {
  require(k >= 0, "shift_accompaniment: K must be >= 0");
  require(target_len >= 0, "shift_accompaniment: target length must be >= 0");
  FeatureMatrix out;
  out.frame_rate_hz = accomp.frame_rate_hz;
  out.frames = MatD::Zero(target_len, accomp.dim());
  for (Eigen::Index t = 0; t < target_len; ++t)
    if (t + k < accomp.length()) out.frames.row(t) = accomp.frames.row(t + k);
  return out;
}

struct MaskDescriptor {
  bool full = false;
  Eigen::Index suffix_len = 0;  // frames zeroed at the end when !full

  bool operator==(const MaskDescriptor&) const = default;
};

// Draws the masking branch: full mask with probability full_prob,
// otherwise a suffix of length uniform on [0, floor(T/2)].
inline MaskDescriptor draw_accomp_mask(Eigen::Index length, Rng& rng, double full_prob) {
  require(full_prob >= 0.0 && full_prob <= 1.0, "accompaniment mask: probability must lie in [0, 1]");
  MaskDescriptor d;
  d.full = rng.uniform() < full_prob;
  const std::int64_t m = rng.integer(0, length / 2);
  d.suffix_len = d.full ? length : m;
  return d;
}

inline FeatureMatrix mask_accompaniment(const FeatureMatrix& accomp, const MaskDescriptor& d) {
  FeatureMatrix out = accomp;
  const Eigen::Index n = d.full ? out.length() : std::min(d.suffix_len, out.length());
  if (n > 0) out.frames.bottomRows(n).setZero();
  return out;
}

inline std::pair<FeatureMatrix, MaskDescriptor> apply_accomp_mask(const FeatureMatrix& accomp, std::uint64_t seed,
                                                                  double full_prob) {
  Rng rng(seed);
  const auto d = draw_accomp_mask(accomp.length(), rng, full_prob);
  return {mask_accompaniment(accomp, d), d};
}

// ---------------------------------------------------------------- model

enum class Region { Speaker, Lyrics, Semantic };

template <class T>
struct MixedSequence {
  ad::Var<T> embeddings;  // [(1 + L + S) x hidden]
  std::vector<Region> tags;
  Eigen::Index lyrics_len = 0;
  Eigen::Index semantic_len = 0;

  Eigen::Index length() const { return static_cast<Eigen::Index>(tags.size()); }
  Eigen::Index semantic_offset() const { return 1 + lyrics_len; }
};

struct LmExample {
  LyricsTokens lyrics;
  std::vector<int> semantic;  // without EOS
  FeatureMatrix accomp;       // raw, same length as `semantic`
  MelSpectrogram reference;
};

template <class T>
class SemanticLM {
 public:
  SemanticLM(const LMConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    RefEncoderConfig rc{cfg_.ref_mels, cfg_.ref_widths, 1};
    refenc_ = std::make_unique<ReferenceEncoder<T>>(store_, "lm.refenc", rc, rng);
    lyr_emb_ = nn::Embedding<T>(store_, "lm.lyrics_emb", cfg_.lyrics_vocab, cfg_.hidden, rng, 0.5);
    sem_emb_ = nn::Embedding<T>(store_, "lm.semantic_emb", cfg_.semantic_vocab, cfg_.hidden, rng, 0.5);
    accomp_proj_ = nn::Linear<T>(store_, "lm.accomp_proj", cfg_.accomp_dim, cfg_.hidden, rng, false);
    spk_proj_ = nn::Linear<T>(store_, "lm.speaker_proj", cfg_.speaker_dim, cfg_.hidden, rng, false);
    const double depth_gain = 1.0 / std::sqrt(2.0 * cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "lm.block" + std::to_string(l);
      Block b;
      b.attn_norm = nn::RmsNorm<T>(store_, p + ".attn_norm", cfg_.hidden);
      b.attn = nn::SelfAttention<T>(store_, p + ".attn", cfg_.hidden, cfg_.heads, rng, true, true, false, depth_gain);
      b.ffn_norm = nn::RmsNorm<T>(store_, p + ".ffn_norm", cfg_.hidden);
      b.gate = nn::Linear<T>(store_, p + ".ffn.gate", cfg_.hidden, cfg_.intermediate, rng, false);
      b.up = nn::Linear<T>(store_, p + ".ffn.up", cfg_.hidden, cfg_.intermediate, rng, false);
      b.down = nn::Linear<T>(store_, p + ".ffn.down", cfg_.intermediate, cfg_.hidden, rng, false, depth_gain);
      blocks_.push_back(std::move(b));
    }
    final_norm_ = nn::RmsNorm<T>(store_, "lm.final_norm", cfg_.hidden);
    head_ = nn::Linear<T>(store_, "lm.head", cfg_.hidden, cfg_.semantic_vocab, rng, false);
  }

  SemanticLM(const SemanticLM&) = delete;
  SemanticLM& operator=(const SemanticLM&) = delete;

  const LMConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  const ReferenceEncoder<T>& reference_encoder() const { return *refenc_; }

  ad::Var<T> speaker_embedding(const MelSpectrogram& reference) const {
    require(reference.length() >= 1, "lm: empty reference mel");
    return refenc_->forward(ad::constant<T>(reference.frames.template cast<T>()));
  }

  // `semantic_inputs` are the region's input ids; `accomp` must already be
  // shifted and masked and have one row per semantic position.
  MixedSequence<T> build_mixed_sequence(const LyricsTokens& lyrics, const std::vector<int>& semantic_inputs,
                                        const MatD& accomp, const ad::Var<T>& speaker) const {
    require(!lyrics.ids.empty(), "build_mixed_sequence: empty lyrics");
    for (int id : lyrics.ids) require(id >= 0 && id < cfg_.lyrics_vocab, "build_mixed_sequence: lyrics id out of range");
    for (int id : semantic_inputs)
      require(id >= 0 && id < cfg_.semantic_vocab, "build_mixed_sequence: semantic id out of range");
    require(accomp.rows() == static_cast<Eigen::Index>(semantic_inputs.size()),
            "build_mixed_sequence: accompaniment length does not match semantic region");
    require(accomp.cols() == cfg_.accomp_dim, "build_mixed_sequence: accompaniment dimension mismatch");
    require(speaker.rows() == 1 && speaker.cols() == cfg_.speaker_dim, "build_mixed_sequence: speaker shape");

    MixedSequence<T> seq;
    seq.lyrics_len = static_cast<Eigen::Index>(lyrics.ids.size());
    seq.semantic_len = static_cast<Eigen::Index>(semantic_inputs.size());
    std::vector<ad::Var<T>> parts{spk_proj_(speaker), lyr_emb_(lyrics.ids)};
    if (!semantic_inputs.empty()) {
      auto acc = accomp_proj_(ad::constant<T>(accomp.template cast<T>()));
      parts.push_back(ad::add(sem_emb_(semantic_inputs), acc));
    }
    seq.embeddings = ad::concat_rows(parts);
    seq.tags.assign(1, Region::Speaker);
    seq.tags.insert(seq.tags.end(), lyrics.ids.size(), Region::Lyrics);
    seq.tags.insert(seq.tags.end(), semantic_inputs.size(), Region::Semantic);
    return seq;
  }

  // Causal decoder; logits [seq_len x semantic_vocab].
  ad::Var<T> forward(const MixedSequence<T>& seq) const {
    require(seq.length() <= cfg_.max_len, "lm_forward: sequence longer than max_len");
    require(seq.embeddings.rows() == seq.length(), "lm_forward: malformed mixed sequence");
    ad::Var<T> h = seq.embeddings;
    for (const auto& b : blocks_) {
      h = ad::add(h, b.attn(b.attn_norm(h)));
      auto x = b.ffn_norm(h);
      h = ad::add(h, b.down(ad::mul(ad::silu(b.gate(x)), b.up(x))));
    }
    return head_(final_norm_(h));
  }

  // Summed cross-entropy over the semantic targets (tokens then EOS) of one
  // example under a fixed mask. `count` receives the number of targets.
  ad::Var<T> example_loss_sum(const LmExample& ex, const MaskDescriptor& mask, int* count) const {
    require(!ex.semantic.empty(), "train_lm_step: empty semantic region");
    require(ex.accomp.length() == static_cast<Eigen::Index>(ex.semantic.size()),
            "train_lm_step: accompaniment and semantic lengths differ");
    const auto n = static_cast<Eigen::Index>(ex.semantic.size());
    std::vector<int> inputs;
    inputs.reserve(ex.semantic.size() + 1);
    inputs.push_back(cfg_.eos_id());
    inputs.insert(inputs.end(), ex.semantic.begin(), ex.semantic.end());
    std::vector<int> targets(ex.semantic);
    targets.push_back(cfg_.eos_id());
    const auto masked = mask_accompaniment(ex.accomp, mask);
    const auto shifted = shift_accompaniment(masked, cfg_.shift_k, n + 1);
    auto seq = build_mixed_sequence(ex.lyrics, inputs, shifted.frames, speaker_embedding(ex.reference));
    auto logits = ad::slice_rows(forward(seq), seq.semantic_offset(), n + 1);
    if (count) *count = static_cast<int>(targets.size());
    return ad::cross_entropy_sum(logits, targets);
  }

  // Mean token cross-entropy over a batch with given masks.
  ad::Var<T> batch_loss(const std::vector<LmExample>& batch, const std::vector<MaskDescriptor>& masks) const {
    require(!batch.empty(), "train_lm_step: empty batch");
    require(masks.size() == batch.size(), "train_lm_step: one mask per example required");
    std::vector<ad::Var<T>> sums;
    int total = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      int c = 0;
      sums.push_back(example_loss_sum(batch[i], masks[i], &c));
      total += c;
    }
    return ad::scale(ad::sum_all(ad::concat_rows(sums)), T(1) / T(total));
  }

 private:
  struct Block {
    nn::RmsNorm<T> attn_norm;
    nn::SelfAttention<T> attn;
    nn::RmsNorm<T> ffn_norm;
    nn::Linear<T> gate, up, down;
  };

  LMConfig cfg_;
  nn::ParamStore<T> store_;
  std::unique_ptr<ReferenceEncoder<T>> refenc_;
  nn::Embedding<T> lyr_emb_, sem_emb_;
  nn::Linear<T> accomp_proj_, spk_proj_;
  std::vector<Block> blocks_;
  nn::RmsNorm<T> final_norm_;
  nn::Linear<T> head_;
};

// ---------------------------------------------------------------- training

struct LmTrainOptions {
  nn::AdamOptions adam{};
  int grad_accum = 4;
  std::uint64_t seed = 0;
};

template <class T>
class LmTrainer {
 public:
  LmTrainer(SemanticLM<T>& model, const LmTrainOptions& opts)
      : model_(&model), opts_(opts), adam_(model.params(), opts.adam), rng_(opts.seed) {
    require(opts.grad_accum >= 1, "grad_accum must be >= 1");
  }

  // One micro-batch: draws masks, back-propagates, and applies an optimizer
  // update every grad_accum calls. Returns the mean token cross-entropy.
  double train_step(const std::vector<LmExample>& batch) {
    std::vector<MaskDescriptor> masks;
    for (const auto& ex : batch)
      masks.push_back(draw_accomp_mask(ex.accomp.length(), rng_, model_->config().mask_full_prob));
    auto loss = model_->batch_loss(batch, masks);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) throw NumericalError("lm training: non-finite loss");
    ad::backward(loss);
    if (++micro_ % opts_.grad_accum == 0) adam_.step(1.0 / opts_.grad_accum);
    return value;
  }

  long long optimizer_steps() const { return adam_.steps(); }
  Rng& rng() { return rng_; }
  nn::Adam<T>& adam() { return adam_; }

 private:
  SemanticLM<T>* model_;
  LmTrainOptions opts_;
  nn::Adam<T> adam_;
  Rng rng_;
  long long micro_ = 0;
};

// ---------------------------------------------------------------- sampling

struct SamplingOptions {
  double temperature = 0.9;  // <= 0 selects greedy decoding
  int top_k = 40;            // <= 0 disables the filter
  std::uint64_t seed = 0;
  int max_steps = 0;         // <= 0: limited only by max_len
};

namespace detail {

inline int sample_from_logits(const RowVec<double>& logits, const SamplingOptions& opts, Rng& rng) {
  const auto v = logits.size();
  if (opts.temperature <= 0.0) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v; ++i)
      if (logits(i) > logits(best)) best = i;
    return static_cast<int>(best);
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(v));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return logits(a) > logits(b); });
  const std::size_t keep = opts.top_k > 0 ? std::min<std::size_t>(order.size(), opts.top_k) : order.size();
  std::vector<double> p(keep);
  const double mx = logits(order[0]);
  double sum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    p[i] = std::exp((logits(order[i]) - mx) / opts.temperature);
    sum += p[i];
  }
  double u = rng.uniform() * sum;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= p[i];
    if (u < 0.0) return static_cast<int>(order[i]);
  }
  return static_cast<int>(order[keep - 1]);
}

}  // namespace detail

// Autoregressive sampling until EOS or the length budget. At semantic step
// t the accompaniment contribution is frame t + K (zero past its end). The
// returned ids exclude EOS; `truncated` is set when no EOS was produced.
template <class T>
TokenSequence generate_semantic(const SemanticLM<T>& model, const LyricsTokens& lyrics, const FeatureMatrix& accomp,
                                const SpeakerEmbedding& speaker, const SamplingOptions& opts) {
  const auto& cfg = model.config();
  lyrics.validate();
  require(accomp.dim() == cfg.accomp_dim, "generate_semantic: accompaniment dimension mismatch");
  require(speaker.values.size() == cfg.speaker_dim, "generate_semantic: speaker embedding size mismatch");
  ad::NoGradGuard guard;
  Rng rng(opts.seed);
  Mat<T> spk_row = speaker.values.transpose().template cast<T>();
  auto spk = ad::constant<T>(spk_row);

  const auto lyr_len = static_cast<Eigen::Index>(lyrics.ids.size());
  Eigen::Index budget = cfg.max_len - 1 - lyr_len;
  require(budget >= 1, "generate_semantic: lyrics leave no room within max_len");
  if (opts.max_steps > 0) budget = std::min<Eigen::Index>(budget, opts.max_steps);

  TokenSequence out;
  out.vocab = cfg.semantic_vocab;
  out.frame_rate_hz = accomp.frame_rate_hz;
  out.truncated = true;
  std::vector<int> inputs{cfg.eos_id()};
  for (Eigen::Index step = 0; step < budget; ++step) {
    const auto n = static_cast<Eigen::Index>(inputs.size());
    const auto shifted = shift_accompaniment(accomp, cfg.shift_k, n);
    auto seq = model.build_mixed_sequence(lyrics, inputs, shifted.frames, spk);
    auto logits = model.forward(seq);
    RowVec<double> last = logits.value().row(logits.rows() - 1).template cast<double>();
    const int next = detail::sample_from_logits(last, opts, rng);
    if (next == cfg.eos_id()) {
      out.truncated = false;
      break;
    }
    out.ids.push_back(next);
    inputs.push_back(next);
  }
  return out;
}

template <class T>
TokenSequence generate_semantic(const SemanticLM<T>& model, const LyricsTokens& lyrics, const FeatureMatrix& accomp,
                                const MelSpectrogram& reference, const SamplingOptions& opts) {
  SpeakerEmbedding spk;
  {
    ad::NoGradGuard guard;
    spk.values = model.speaker_embedding(reference).value().row(0).transpose().template cast<double>();
  }
  return generate_semantic(model, lyrics, accomp, spk, opts);
}

}  // namespace rapgen
