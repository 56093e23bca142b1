#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "rapgen/types.hpp"

namespace rapgen {

struct KMeansOptions {
  int k = 64;
  std::uint64_t seed = 0;
  int max_iters = 100;
  // Fit on a random subset of this many frames; 0 uses every frame.
  Eigen::Index subsample = 0;
};

struct KMeansResult {
  Codebook codebook;
  std::vector<double> objective_history;  // after each assignment step
  int iterations = 0;
};

namespace detail {

// Index of the nearest row of `centroids`; ties go to the lowest index.
inline int nearest_centroid(const Eigen::Ref<const RowVec<double>>& x, const MatD& centroids, double* dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
    const double d = (centroids.row(j) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace detail

// k-means++ seeding followed by Lloyd iterations.
inline KMeansResult fit_kmeans_detailed(const FeatureMatrix& features, const KMeansOptions& opts) {
  require(opts.k >= 1, "fit_kmeans: k must be >= 1");
  require(features.frames.allFinite(), "fit_kmeans: non-finite input");
  require(features.length() >= opts.k, "fit_kmeans: fewer frames than clusters");
  Rng rng(opts.seed);

  MatD data;
  if (opts.subsample > 0 && opts.subsample < features.length()) {
    require(opts.subsample >= opts.k, "fit_kmeans: subsample smaller than k");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(features.length()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    idx.resize(static_cast<std::size_t>(opts.subsample));
    std::sort(idx.begin(), idx.end());
    data.resize(opts.subsample, features.dim());
    for (std::size_t i = 0; i < idx.size(); ++i) data.row(static_cast<Eigen::Index>(i)) = features.frames.row(idx[i]);
  } else {
    data = features.frames;
  }
  const Eigen::Index n = data.rows();
  const Eigen::Index dim = data.cols();

  MatD centroids(opts.k, dim);
  centroids.row(0) = data.row(rng.integer(0, n - 1));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (data.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < opts.k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.integer(0, n - 1);
    }
    centroids.row(c) = data.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (data.row(i) - centroids.row(c)).squaredNorm());
  }

  KMeansResult result;
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int iter = 0; iter < std::max(opts.max_iters, 1); ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = detail::nearest_centroid(data.row(i), centroids, &dist[i]);
      changed = changed || a != assign[i];
      assign[i] = a;
      objective += dist[i];
    }
    result.objective_history.push_back(objective);
    result.iterations = iter + 1;
    if (!changed && iter > 0) break;

    MatD sums = MatD::Zero(opts.k, dim);
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(opts.k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += data.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < opts.k; ++c) {
      if (counts[c] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
      } else {
        // Empty cluster: move it onto the worst-served frame.
        const auto worst = std::distance(dist.begin(), std::max_element(dist.begin(), dist.end()));
        centroids.row(c) = data.row(worst);
        dist[worst] = 0.0;
      }
    }
  }
  result.codebook = Codebook{std::move(centroids), opts.seed};
  return result;
}

inline Codebook fit_kmeans(const FeatureMatrix& features, int k, std::uint64_t seed, int max_iters = 100) {
  return fit_kmeans_detailed(features, KMeansOptions{k, seed, max_iters, 0}).codebook;
}

// Nearest-centroid assignment. The returned vocabulary reserves one extra
// id (k) for end-of-sequence.
inline TokenSequence tokenize(const FeatureMatrix& features, const Codebook& codebook) {
  require(codebook.k() >= 1, "tokenize: empty codebook");
  require(features.dim() == codebook.dim(), "tokenize: feature dimension does not match codebook");
  require(features.frames.allFinite(), "tokenize: non-finite input");
  TokenSequence seq;
  seq.frame_rate_hz = features.frame_rate_hz;
  seq.vocab = static_cast<int>(codebook.k()) + 1;
  seq.ids.resize(static_cast<std::size_t>(features.length()));
  for (Eigen::Index i = 0; i < features.length(); ++i)
    seq.ids[i] = detail::nearest_centroid(features.frames.row(i), codebook.centroids);
  return seq;
}

// Output length for resampling `n` frames from `source_hz` to `target_hz`.
inline Eigen::Index resampled_length(Eigen::Index n, double source_hz, double target_hz) {
  return static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * target_hz / source_hz));
}

// Source index feeding output frame j: the source frame whose span covers
// the centre of output frame j, floor((j + 0.5) * source/target), clamped
// to [0, n-1].
inline std::vector<int> resample_index_map(Eigen::Index n, Eigen::Index out_len, double source_hz, double target_hz) {
  std::vector<int> map(static_cast<std::size_t>(out_len));
  if (n == 0) return {};
  for (Eigen::Index j = 0; j < out_len; ++j) {
    const auto src = static_cast<Eigen::Index>(std::floor((static_cast<double>(j) + 0.5) * source_hz / target_hz));
    map[j] = static_cast<int>(std::clamp<Eigen::Index>(src, 0, n - 1));
  }
  return map;
}

// Nearest-neighbour embedding lookup at the target frame rate.
inline AlignedConditionFrames interpolate_tokens(const TokenSequence& tokens, const MatD& embedding_table,
                                                 double target_rate_hz) {
  require(tokens.frame_rate_hz > 0.0 && target_rate_hz > 0.0, "interpolate_tokens: rates must be positive");
  AlignedConditionFrames out;
  out.frame_rate_hz = target_rate_hz;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index len = n == 0 ? 0 : resampled_length(n, tokens.frame_rate_hz, target_rate_hz);
  out.frames.resize(len, embedding_table.cols());
  const auto map = resample_index_map(n, len, tokens.frame_rate_hz, target_rate_hz);
  for (Eigen::Index j = 0; j < len; ++j) {
    const int id = tokens.ids[static_cast<std::size_t>(map[j])];
    require(id >= 0 && id < embedding_table.rows(), "interpolate_tokens: token id outside embedding table");
    out.frames.row(j) = embedding_table.row(id);
  }
  return out;
}

}  // namespace rapgen
