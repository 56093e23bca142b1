#pragma once

// Objective metrics on ingested transcripts and embeddings, plus the
// accompaniment/vocal beat-alignment analysis.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "rapgen/common.hpp"
#include "rapgen/types.hpp"

namespace rapgen {

// Lowercase, strip punctuation, split on whitespace.
inline std::vector<std::string> normalize_words(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (unsigned char c : text) {
    if (std::isspace(c))
      clean += ' ';
    else if (!std::ispunct(c))
      clean += static_cast<char>(std::tolower(c));
  }
  std::istringstream in(clean);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

inline std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  require(!ref.empty(), "wer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

inline double wer_text(const std::string& ref, const std::string& hyp) {
  return wer(normalize_words(ref), normalize_words(hyp));
}

inline double secs(const VecD& a, const VecD& b) {
  require(a.size() == b.size(), "secs: dimension mismatch");
  require(a.allFinite() && b.allFinite(), "secs: non-finite embedding");
  const double na = a.norm(), nb = b.norm();
  require(na > 0.0 && nb > 0.0, "secs: zero-norm embedding");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

struct EmbeddingSet {
  MatD vectors;  // [n x d]
  std::string source;
};

namespace detail {

inline MatD psd_sqrt(const MatD& s) {
  Eigen::SelfAdjointEigenSolver<MatD> es(0.5 * (s + s.transpose()));
  const VecD root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

inline double trace_sqrt_psd(const MatD& s) {
  Eigen::SelfAdjointEigenSolver<MatD> es(0.5 * (s + s.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace detail

// Unbiased (n - 1) covariance.
inline MatD covariance(const MatD& x) {
  require(x.rows() >= 2, "covariance: need at least two rows");
  const MatD centred = x.rowwise() - x.colwise().mean();
  return centred.transpose() * centred / static_cast<double>(x.rows() - 1);
}

inline double frechet_distance(const VecD& mu_a, const MatD& s_a, const VecD& mu_b, const MatD& s_b) {
  // tr (S_a S_b)^1/2 = tr (A^1/2 S_b A^1/2)^1/2, which is symmetric PSD.
  const MatD ra = detail::psd_sqrt(s_a);
  const double cross = detail::trace_sqrt_psd(ra * s_b * ra);
  return (mu_a - mu_b).squaredNorm() + s_a.trace() + s_b.trace() - 2.0 * cross;
}

inline double fad(const EmbeddingSet& a, const EmbeddingSet& b) {
  require(a.vectors.cols() == b.vectors.cols(), "fad: embedding dimension mismatch");
  require(a.vectors.rows() >= 2 && b.vectors.rows() >= 2, "fad: need at least two embeddings per set");
  require(a.vectors.allFinite() && b.vectors.allFinite(), "fad: non-finite embedding");
  const VecD mu_a = a.vectors.colwise().mean().transpose();
  const VecD mu_b = b.vectors.colwise().mean().transpose();
  return frechet_distance(mu_a, covariance(a.vectors), mu_b, covariance(b.vectors));
}

// Energy distance 2 E|X - Y| - E|X - X'| - E|Y - Y'| between two point
// sets (V-statistic form: the self terms include zero diagonals).
inline double energy_distance(const MatD& x, const MatD& y) {
  require(x.cols() == y.cols(), "energy_distance: dimension mismatch");
  require(x.rows() >= 1 && y.rows() >= 1, "energy_distance: empty sample");
  auto mean_dist = [](const MatD& a, const MatD& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) s += (b.rowwise() - a.row(i)).rowwise().norm().sum();
    return s / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
  };
  return 2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y);
}

inline constexpr double kKldEpsilon = 1e-8;

// Mean over rows of KL(p || q) after adding epsilon to every bin and
// renormalising both rows.
inline double kld(const MatD& p, const MatD& q, double eps = kKldEpsilon) {
  require(p.rows() == q.rows() && p.cols() == q.cols(), "kld: shape mismatch");
  require(p.rows() >= 1 && p.cols() >= 1, "kld: empty posterior matrix");
  auto check = [](const MatD& m, const char* name) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      require(m.row(r).allFinite() && m.row(r).minCoeff() >= 0.0,
              std::string("kld: ") + name + " row has negative or non-finite entries");
      require(std::abs(m.row(r).sum() - 1.0) <= 1e-6, std::string("kld: ") + name + " row does not sum to 1");
    }
  };
  check(p, "p");
  check(q, "q");
  const double z = 1.0 + eps * static_cast<double>(p.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    double row = 0.0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double ps = (p(r, c) + eps) / z, qs = (q(r, c) + eps) / z;
      row += ps * std::log(ps / qs);
    }
    total += std::max(row, 0.0);
  }
  return total / static_cast<double>(p.rows());
}

// ---------------------------------------------------------------- beats

inline constexpr double kBeatTolerance = 0.07;

struct BeatOptions {
  double tolerance_s = kBeatTolerance;
  int smooth_frames = 3;
  double min_gap_s = 0.1;
};

struct AlignmentReport {
  std::vector<double> beat_times_s;
  std::vector<double> onset_times_s;
  double aligned_fraction = 0.0;
  double tolerance_s = kBeatTolerance;
  std::vector<double> accomp_energy;  // per hop, smoothed
  std::vector<double> vocal_energy;
  double frame_rate_hz = kMelFrameRate;

  // time, accompaniment energy, vocal energy, marker
  std::string plot_data() const;
};

// Fraction of onsets within `tolerance_s` of some beat. Zero when there are
// no onsets.
inline double aligned_fraction(const std::vector<double>& onsets, std::vector<double> beats, double tolerance_s) {
  require(tolerance_s >= 0.0, "aligned_fraction: negative tolerance");
  if (onsets.empty() || beats.empty()) return 0.0;
  std::sort(beats.begin(), beats.end());
  std::size_t hit = 0;
  for (double t : onsets) {
    auto it = std::lower_bound(beats.begin(), beats.end(), t);
    double best = std::numeric_limits<double>::infinity();
    if (it != beats.end()) best = *it - t;
    if (it != beats.begin()) best = std::min(best, t - *std::prev(it));
    if (best <= tolerance_s) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(onsets.size());
}

namespace detail {

inline std::vector<double> energy_envelope(const AudioClip& clip, int smooth) {
  const std::size_t frames = clip.samples.size() / kHop;
  std::vector<double> e(frames, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    double s = 0.0;
    for (std::size_t i = f * kHop; i < (f + 1) * kHop; ++i) s += clip.samples[i] * clip.samples[i];
    e[f] = s / kHop;
  }
  if (smooth <= 1) return e;
  std::vector<double> out(frames, 0.0);
  const int half = smooth / 2;
  for (std::size_t f = 0; f < frames; ++f) {
    double s = 0.0;
    int n = 0;
    for (int d = -half; d <= half; ++d) {
      const auto j = static_cast<std::ptrdiff_t>(f) + d;
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(frames)) continue;
      s += e[static_cast<std::size_t>(j)];
      ++n;
    }
    out[f] = s / n;
  }
  return out;
}

// Local maxima above the curve's mean, at least `gap` frames apart. Within a
// plateau the earliest frame wins.
inline std::vector<std::size_t> pick_peaks(const std::vector<double>& x, int gap) {
  std::vector<std::size_t> peaks;
  if (x.empty()) return peaks;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (x[i] <= mean || x[i] <= 0.0) continue;
    bool peak = true;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - gap); j < i && peak; ++j) peak = x[i] > x[j];
    for (std::ptrdiff_t j = i + 1; j <= std::min(n - 1, i + gap) && peak; ++j) peak = x[i] >= x[j];
    if (peak) peaks.push_back(static_cast<std::size_t>(i));
  }
  return peaks;
}

}  // namespace detail

inline AlignmentReport beat_alignment_report(const AudioClip& accomp, const AudioClip& vocal,
                                             const BeatOptions& opts = {}) {
  require(accomp.sample_rate_hz == kSampleRate && vocal.sample_rate_hz == kSampleRate,
          "beat_alignment_report: clips must be 44.1 kHz");
  require(accomp.samples.size() >= static_cast<std::size_t>(kHop) &&
              vocal.samples.size() >= static_cast<std::size_t>(kHop),
          "beat_alignment_report: clip shorter than one hop");
  require(opts.tolerance_s >= 0.0, "beat_alignment_report: negative tolerance");
  AlignmentReport r;
  r.tolerance_s = opts.tolerance_s;
  r.accomp_energy = detail::energy_envelope(accomp, opts.smooth_frames);
  r.vocal_energy = detail::energy_envelope(vocal, opts.smooth_frames);
  const int gap = std::max(1, static_cast<int>(std::lround(opts.min_gap_s * kMelFrameRate)));
  for (auto f : detail::pick_peaks(r.accomp_energy, gap)) r.beat_times_s.push_back(f / kMelFrameRate);
  std::vector<double> flux(r.vocal_energy.size(), 0.0);
  for (std::size_t f = 1; f < flux.size(); ++f) flux[f] = std::max(0.0, r.vocal_energy[f] - r.vocal_energy[f - 1]);
  if (!flux.empty()) flux[0] = std::max(0.0, r.vocal_energy[0]);
  for (auto f : detail::pick_peaks(flux, gap)) r.onset_times_s.push_back(f / kMelFrameRate);
  r.aligned_fraction = aligned_fraction(r.onset_times_s, r.beat_times_s, r.tolerance_s);
  return r;
}

inline std::string AlignmentReport::plot_data() const {
  std::ostringstream out;
  out.precision(9);
  out << "time_s\taccomp_energy\tvocal_energy\tmarker\n";
  const std::size_t n = std::max(accomp_energy.size(), vocal_energy.size());
  auto has = [&](const std::vector<double>& times, std::size_t f) {
    for (double t : times)
      if (std::lround(t * frame_rate_hz) == static_cast<long>(f)) return true;
    return false;
  };
  for (std::size_t f = 0; f < n; ++f) {
    const bool beat = has(beat_times_s, f), onset = has(onset_times_s, f);
    out << f / frame_rate_hz << '\t' << (f < accomp_energy.size() ? accomp_energy[f] : 0.0) << '\t'
        << (f < vocal_energy.size() ? vocal_energy[f] : 0.0) << '\t'
        << (beat && onset ? "beat+onset" : beat ? "beat" : onset ? "onset" : "-") << '\n';
  }
  return out.str();
}

}  // namespace rapgen
