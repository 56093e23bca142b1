#pragma once

// Log-mel analysis, Griffin-Lim inversion, and the external vocoder hook.

#include <unsupported/Eigen/FFT>

#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "rapgen/io.hpp"
#include "rapgen/types.hpp"

namespace rapgen {

inline constexpr int kFftSize = 2048;
inline constexpr double kLogFloor = 1e-5;

// Upsampling factors of the external neural vocoder; their product is the hop.
inline constexpr std::array<int, 6> kVocoderUpsampleRates{8, 4, 2, 2, 2, 2};
static_assert(kVocoderUpsampleRates[0] * kVocoderUpsampleRates[1] * kVocoderUpsampleRates[2] *
                      kVocoderUpsampleRates[3] * kVocoderUpsampleRates[4] * kVocoderUpsampleRates[5] ==
                  kHop,
              "vocoder upsampling must match the hop");

using CMatD = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct StftConfig {
  int n_fft = kFftSize;
  int hop = kHop;
};

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);  // periodic
  return w;
}

inline Eigen::Index stft_frames(std::size_t n_samples, int hop) { return static_cast<Eigen::Index>(n_samples / hop) + 1; }

// Centered STFT with zero padding of n_fft/2 on both sides.
// Returns [frames x (n_fft/2 + 1)].
inline CMatD stft(const std::vector<double>& x, const StftConfig& cfg = {}) {
  require(!x.empty(), "stft: empty signal");
  const int n = cfg.n_fft;
  const int half = n / 2;
  const auto frames = stft_frames(x.size(), cfg.hop);
  const auto win = hann_window(n);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  CMatD out(frames, half + 1);
  std::vector<double> buf(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> spec;
  const auto len = static_cast<std::ptrdiff_t>(x.size());
  for (Eigen::Index f = 0; f < frames; ++f) {
    const std::ptrdiff_t start = f * cfg.hop - half;
    for (int i = 0; i < n; ++i) {
      const std::ptrdiff_t src = start + i;
      buf[i] = (src >= 0 && src < len) ? x[static_cast<std::size_t>(src)] * win[i] : 0.0;
    }
    fft.fwd(spec, buf);
    for (int k = 0; k <= half; ++k) out(f, k) = spec[static_cast<std::size_t>(k)];
  }
  return out;
}

// Weighted overlap-add inverse of `stft`, trimmed to `length` samples.
inline std::vector<double> istft(const CMatD& spec, std::size_t length, const StftConfig& cfg = {}) {
  const int n = cfg.n_fft;
  const int half = n / 2;
  require(spec.cols() == half + 1, "istft: bin count does not match n_fft");
  const auto win = hann_window(n);
  const std::size_t padded = static_cast<std::size_t>((spec.rows() - 1) * cfg.hop + n);
  std::vector<double> acc(padded, 0.0), norm(padded, 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> bins(static_cast<std::size_t>(half + 1));
  std::vector<double> frame;
  for (Eigen::Index f = 0; f < spec.rows(); ++f) {
    for (int k = 0; k <= half; ++k) bins[k] = spec(f, k);
    fft.inv(frame, bins, n);
    const std::size_t start = static_cast<std::size_t>(f * cfg.hop);
    for (int i = 0; i < n; ++i) {
      acc[start + i] += frame[i] * win[i];
      norm[start + i] += win[i] * win[i];
    }
  }
  std::vector<double> out(length, 0.0);
  for (std::size_t i = 0; i < length && i + half < padded; ++i) {
    const double w = norm[i + half];
    out[i] = w > 1e-11 ? acc[i + half] / w : 0.0;
  }
  return out;
}

inline double hz_to_mel_slaney(double hz) {
  const double f_sp = 200.0 / 3.0;
  const double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz >= min_log_hz ? min_log_mel + std::log(hz / min_log_hz) / logstep : hz / f_sp;
}

inline double mel_to_hz_slaney(double mel) {
  const double f_sp = 200.0 / 3.0;
  const double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel >= min_log_mel ? min_log_hz * std::exp(logstep * (mel - min_log_mel)) : f_sp * mel;
}

// Slaney-style triangular filterbank with area normalization,
// [n_mels x (n_fft/2 + 1)].
inline MatD mel_filterbank(int n_mels = kMelBins, int n_fft = kFftSize, double sample_rate = kSampleRate,
                           double fmin = 0.0, double fmax = kSampleRate / 2) {
  require(n_mels >= 1 && n_fft >= 2 && fmax > fmin, "mel_filterbank: bad configuration");
  const int bins = n_fft / 2 + 1;
  std::vector<double> fft_hz(static_cast<std::size_t>(bins));
  for (int k = 0; k < bins; ++k) fft_hz[k] = k * sample_rate / n_fft;
  const double mmin = hz_to_mel_slaney(fmin), mmax = hz_to_mel_slaney(fmax);
  std::vector<double> pts(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) pts[i] = mel_to_hz_slaney(mmin + (mmax - mmin) * i / (n_mels + 1));
  MatD fb = MatD::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = pts[m], centre = pts[m + 1], hi = pts[m + 2];
    const double enorm = 2.0 / (hi - lo);
    for (int k = 0; k < bins; ++k) {
      const double up = (fft_hz[k] - lo) / (centre - lo);
      const double down = (hi - fft_hz[k]) / (hi - centre);
      fb(m, k) = std::max(0.0, std::min(up, down)) * enorm;
    }
  }
  return fb;
}

// Log-mel magnitudes: |STFT| -> mel -> ln(max(., 1e-5)).
inline MelSpectrogram mel_analyze(const AudioClip& audio, int n_mels = kMelBins) {
  require(!audio.samples.empty(), "mel_analyze: empty audio");
  require(audio.sample_rate_hz == kSampleRate, "mel_analyze: expected 44.1 kHz audio");
  for (double s : audio.samples) require(std::isfinite(s), "mel_analyze: non-finite sample");
  static const MatD fb = mel_filterbank();
  const MatD bank = n_mels == kMelBins ? fb : mel_filterbank(n_mels);
  const CMatD spec = stft(audio.samples);
  MatD mag = spec.cwiseAbs();
  MelSpectrogram out;
  out.frames = (mag * bank.transpose()).cwiseMax(kLogFloor).array().log().matrix();
  return out;
}

struct GriffinLimOptions {
  int iters = 60;
  double momentum = 0.99;
  std::uint64_t seed = 0;
};

// Mel -> linear magnitude by pseudo-inverse (clamped at zero), then fast
// Griffin-Lim phase estimation from a seeded random phase. Output length is
// (T - 1) * hop samples, clipped to [-1, 1].
inline AudioClip griffin_lim_invert(const MelSpectrogram& mel, const GriffinLimOptions& opts = {}) {
  require(opts.iters >= 1, "griffin_lim_invert: iters must be >= 1");
  require(mel.length() >= 1, "griffin_lim_invert: empty spectrogram");
  require(mel.frames.allFinite(), "griffin_lim_invert: non-finite spectrogram");
  const MatD fb = mel_filterbank(static_cast<int>(mel.n_mels()));
  const MatD pinv = fb.completeOrthogonalDecomposition().pseudoInverse();  // [bins x n_mels]
  const MatD target = (mel.frames.array().exp().matrix() * pinv.transpose()).cwiseMax(0.0);

  const std::size_t length = static_cast<std::size_t>(std::max<Eigen::Index>(mel.length() - 1, 1) * kHop);
  Rng rng(opts.seed);
  CMatD angles(target.rows(), target.cols());
  for (Eigen::Index i = 0; i < angles.size(); ++i) angles.data()[i] = std::polar(1.0, 2.0 * M_PI * rng.uniform());
  CMatD prev = CMatD::Zero(target.rows(), target.cols());
  const double accel = opts.momentum / (1.0 + opts.momentum);
  std::vector<double> signal;
  for (int it = 0; it < opts.iters; ++it) {
    signal = istft(target.cast<std::complex<double>>().cwiseProduct(angles), length);
    CMatD rebuilt = stft(signal);
    rebuilt.conservativeResize(target.rows(), Eigen::NoChange);
    CMatD next = rebuilt - accel * prev;
    for (Eigen::Index i = 0; i < next.size(); ++i) {
      const double m = std::abs(next.data()[i]);
      angles.data()[i] = m > 1e-16 ? next.data()[i] / m : std::complex<double>(1.0, 0.0);
    }
    prev = std::move(rebuilt);
  }
  signal = istft(target.cast<std::complex<double>>().cwiseProduct(angles), length);
  AudioClip out;
  out.samples.resize(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i)
    out.samples[i] = std::isfinite(signal[i]) ? std::clamp(signal[i], -1.0, 1.0) : 0.0;
  return out;
}

namespace detail {

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::atomic<unsigned> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("rapgen_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace detail

// Runs `external_cmd IN.mel OUT.wav` through the shell. The command must read
// a MEL1 file and write a mono 44.1 kHz WAV.
inline AudioClip vocoder_ingest(const MelSpectrogram& mel, const std::string& external_cmd) {
  require(!external_cmd.empty(), "vocoder_ingest: empty command");
  const auto dir = detail::scratch_dir("vocoder");
  const auto in = dir / "in.mel";
  const auto out = dir / "out.wav";
  const auto log = dir / "vocoder.log";
  io::write_mel(in, mel);
  const std::string cmd = external_cmd + " " + detail::shell_quote(in.string()) + " " +
                          detail::shell_quote(out.string()) + " > " + detail::shell_quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::string diag;
  if (std::filesystem::exists(log)) diag = io::read_file(log);
  auto fail = [&](const std::string& why) {
    std::filesystem::remove_all(dir);
    throw ExternalToolError("vocoder: " + why, diag);
  };
  if (status != 0) fail("command exited with status " + std::to_string(status));
  if (!std::filesystem::exists(out)) fail("command produced no output file");
  AudioClip clip;
  try {
    clip = io::read_wav(out);
  } catch (const Error& e) {
    fail(std::string("unreadable output: ") + e.what());
  }
  std::filesystem::remove_all(dir);
  if (clip.sample_rate_hz != kSampleRate) throw ExternalToolError("vocoder: output is not 44.1 kHz", diag);
  return clip;
}

}  // namespace rapgen
