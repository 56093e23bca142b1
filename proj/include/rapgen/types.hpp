#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rapgen/common.hpp"

namespace rapgen {

inline constexpr double kSampleRate = 44100.0;
inline constexpr int kHop = 512;
inline constexpr double kMelFrameRate = kSampleRate / kHop;  // 86.13 fps
inline constexpr double kSslFrameRate = 50.0;
inline constexpr int kMelBins = 128;
inline constexpr int kSpeakerDim = 64;

// Frame-level continuous features [T x D].
struct FeatureMatrix {
  MatD frames;
  double frame_rate_hz = kSslFrameRate;

  Eigen::Index length() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }

  void validate() const {
    require(frame_rate_hz > 0.0, "feature matrix: frame rate must be positive");
    require(frames.allFinite(), "feature matrix: non-finite values");
  }
};

struct Codebook {
  MatD centroids;  // [k x D]
  std::uint64_t fit_seed = 0;

  Eigen::Index k() const { return centroids.rows(); }
  Eigen::Index dim() const { return centroids.cols(); }
};

// Discrete semantic tokens. `vocab` counts the reserved end-of-sequence id,
// which is always vocab - 1.
struct TokenSequence {
  std::vector<int> ids;
  double frame_rate_hz = kSslFrameRate;
  int vocab = 0;
  bool truncated = false;

  int eos_id() const { return vocab - 1; }
  std::size_t size() const { return ids.size(); }

  void validate() const {
    require(vocab >= 2, "token sequence: vocab must include at least one token and EOS");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      require(ids[i] >= 0 && ids[i] < vocab, "token sequence: id out of range");
      if (ids[i] == eos_id()) require(i + 1 == ids.size(), "token sequence: EOS must be last");
    }
  }
};

struct AlignedConditionFrames {
  MatD frames;  // [T_mel x C_mu]
  double frame_rate_hz = kMelFrameRate;
};

// Natural-log mel magnitudes [T x n_mels].
struct MelSpectrogram {
  MatD frames;
  double frame_rate_hz = kMelFrameRate;
  double sample_rate_hz = kSampleRate;

  Eigen::Index length() const { return frames.rows(); }
  Eigen::Index n_mels() const { return frames.cols(); }
};

struct AudioClip {
  std::vector<double> samples;
  double sample_rate_hz = kSampleRate;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

struct SpeakerEmbedding {
  VecD values;  // length speaker_dim (64 by default)
};

struct LyricsTokens {
  std::vector<int> ids;
  int vocab = 0;

  void validate() const {
    require(!ids.empty(), "lyrics: empty token sequence");
    for (int id : ids) require(id >= 0 && id < vocab, "lyrics: id out of range");
  }
};

struct VadLabels {
  std::vector<std::uint8_t> voiced;  // 0/1 per frame
  double rate_hz = 100.0;
};

}  // namespace rapgen
