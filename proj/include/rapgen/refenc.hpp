#pragma once

// Reference encoder: per-frame feed-forward stack, one position-free
// self-attention layer, then a mean over time. Permutation invariant in
// the frame order by construction.

#include <string>
#include <vector>

#include "rapgen/nn.hpp"
#include "rapgen/types.hpp"

namespace rapgen {

struct RefEncoderConfig {
  int n_mels = kMelBins;
  std::vector<int> widths{128, 128, kSpeakerDim};  // last entry is the embedding size
  int heads = 1;

  int embedding_dim() const { return widths.back(); }
};

template <class T>
class ReferenceEncoder {
 public:
  ReferenceEncoder(nn::ParamStore<T>& store, const std::string& name, const RefEncoderConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    require(!cfg.widths.empty(), "reference encoder: no layers");
    int in = cfg.n_mels;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      layers_.emplace_back(store, name + ".ff" + std::to_string(i), in, cfg.widths[i], rng);
      in = cfg.widths[i];
    }
    attn_ = nn::SelfAttention<T>(store, name + ".attn", in, cfg.heads, rng, /*causal=*/false, /*rotary=*/false);
  }

  // Per-frame stack; the final layer is linear.
  ad::Var<T> feed_forward(const ad::Var<T>& mel) const {
    ad::Var<T> h = mel;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i](h);
      if (i + 1 < layers_.size()) h = ad::silu(h);
    }
    return h;
  }

  // mel [T x n_mels] -> [1 x embedding_dim]
  ad::Var<T> forward(const ad::Var<T>& mel) const {
    require(mel.rows() >= 1, "reference encoder: empty input");
    require(mel.cols() == cfg_.n_mels, "reference encoder: mel channel mismatch");
    return ad::mean_rows(attn_(feed_forward(mel)));
  }

  SpeakerEmbedding encode(const MelSpectrogram& mel) const {
    require(mel.length() >= 1, "encode_reference: empty input");
    ad::NoGradGuard guard;
    auto out = forward(ad::constant<T>(mel.frames.cast<T>()));
    return SpeakerEmbedding{out.value().row(0).transpose().template cast<double>()};
  }

  const nn::SelfAttention<T>& attention() const { return attn_; }
  const RefEncoderConfig& config() const { return cfg_; }

 private:
  RefEncoderConfig cfg_;
  std::vector<nn::Linear<T>> layers_;
  nn::SelfAttention<T> attn_;
};

}  // namespace rapgen
