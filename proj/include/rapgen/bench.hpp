#pragma once

// Planted-rhythm benchmark: the vocal token at frame t is an onset token iff
// accompaniment frame t + K_true is a beat, so only a model that sees K_true
// frames of future accompaniment can place onsets reliably.

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rapgen/cfm.hpp"
#include "rapgen/lm.hpp"
#include "rapgen/lyrics.hpp"
#include "rapgen/metrics.hpp"

namespace rapgen {

struct ToySpec {
  int n_frames = 100;
  int beat_period_frames = 10;
  int k_true = 5;
  int vocab = 16;  // vocal tokens, EOS excluded
  int feature_dim = 8;
  double noise_std = 0.3;
  int onset_lo = 0;  // onset band [onset_lo, onset_hi]
  int onset_hi = 3;
  // Inter-beat intervals are period + U{-jitter, jitter}; with jitter > 0 the
  // first beat lands uniformly in [0, period).
  int beat_jitter = 0;

  int band_size() const { return onset_hi - onset_lo + 1; }
  bool in_band(int token) const { return token >= onset_lo && token <= onset_hi; }

  void validate() const {
    require(n_frames >= 1, "ToySpec: n_frames must be >= 1");
    require(beat_period_frames >= 2, "ToySpec: beat_period_frames must be >= 2");
    require(k_true >= 0 && k_true < n_frames, "ToySpec: K_true must lie in [0, n_frames)");
    require(vocab >= 4, "ToySpec: vocab must be >= 4");
    require(feature_dim >= 1, "ToySpec: feature_dim must be >= 1");
    require(noise_std >= 0.0, "ToySpec: noise_std must be >= 0");
    require(onset_lo >= 0 && onset_lo <= onset_hi && onset_hi < vocab, "ToySpec: onset band outside vocab");
    require(band_size() < vocab, "ToySpec: onset band must leave non-onset tokens");
    require(beat_jitter >= 0 && beat_jitter < beat_period_frames - 1, "ToySpec: beat_jitter must be < period - 1");
  }
};

struct ToyPair {
  FeatureMatrix accomp;        // [n_frames x feature_dim]
  TokenSequence vocal;         // n_frames tokens
  LyricsTokens lyrics;         // 1, onset band indices + 2 in order, 1
  std::vector<int> beats;      // beat frames in [0, n_frames + K_true)
  std::vector<int> onsets;     // frames t with t + K_true a beat
};

inline std::vector<int> beat_schedule(const ToySpec& spec, Rng& rng) {
  std::vector<int> beats;
  int b = spec.beat_jitter > 0 ? static_cast<int>(rng.integer(0, spec.beat_period_frames - 1)) : 0;
  while (b < spec.n_frames + spec.k_true) {
    beats.push_back(b);
    b += spec.beat_period_frames + static_cast<int>(rng.integer(-spec.beat_jitter, spec.beat_jitter));
  }
  return beats;
}

inline ToyPair gen_toy_pair(const ToySpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ToyPair p;
  p.beats = beat_schedule(spec, rng);
  std::vector<char> is_beat(static_cast<std::size_t>(spec.n_frames + spec.k_true), 0);
  for (int b : p.beats) is_beat[static_cast<std::size_t>(b)] = 1;

  // Beat frames carry +1 on the first half of the channels, -1 on the rest.
  RowVec<double> pattern(spec.feature_dim);
  for (int d = 0; d < spec.feature_dim; ++d) pattern(d) = d < (spec.feature_dim + 1) / 2 ? 1.0 : -1.0;
  p.accomp.frame_rate_hz = kSslFrameRate;
  p.accomp.frames = MatD::Zero(spec.n_frames, spec.feature_dim);
  for (int t = 0; t < spec.n_frames; ++t) {
    if (is_beat[static_cast<std::size_t>(t)]) p.accomp.frames.row(t) = pattern;
    if (spec.noise_std > 0.0)
      for (int d = 0; d < spec.feature_dim; ++d) p.accomp.frames(t, d) += rng.normal(0.0, spec.noise_std);
  }

  p.vocal.vocab = spec.vocab + 1;  // EOS is the last id
  p.vocal.frame_rate_hz = kSslFrameRate;
  p.lyrics.vocab = spec.band_size() + 2;
  p.lyrics.ids.push_back(LyricsVocab::kBoundary);
  const int off_count = spec.vocab - spec.band_size();
  for (int t = 0; t < spec.n_frames; ++t) {
    if (is_beat[static_cast<std::size_t>(t + spec.k_true)]) {
      const int tok = spec.onset_lo + static_cast<int>(rng.integer(0, spec.band_size() - 1));
      p.vocal.ids.push_back(tok);
      p.onsets.push_back(t);
      p.lyrics.ids.push_back(tok - spec.onset_lo + 2);
    } else {
      int tok = static_cast<int>(rng.integer(0, off_count - 1));
      if (tok >= spec.onset_lo) tok += spec.band_size();
      p.vocal.ids.push_back(tok);
    }
  }
  p.lyrics.ids.push_back(LyricsVocab::kBoundary);
  return p;
}

// Paired accompaniment features and vocal tokens drawn from the benchmark
// generator, standing in for real feature extraction.
inline std::pair<FeatureMatrix, TokenSequence> synth_features(const ToySpec& spec, std::uint64_t seed) {
  auto p = gen_toy_pair(spec, seed);
  return {std::move(p.accomp), std::move(p.vocal)};
}

// Fraction of beat-coupled frames (t + K_true a beat, t < n_frames) where the
// prediction has an onset-band token within +-1 frame. Vacuously 1 when no
// frame is coupled.
inline double alignment_score(const TokenSequence& pred, const ToySpec& spec, const std::vector<int>& beats) {
  require(pred.ids.size() <= static_cast<std::size_t>(spec.n_frames), "alignment_score: prediction too long");
  const auto len = static_cast<int>(pred.ids.size());
  int coupled = 0, hit = 0;
  for (int b : beats) {
    const int t = b - spec.k_true;
    if (t < 0 || t >= spec.n_frames) continue;
    ++coupled;
    for (int u = std::max(0, t - 1); u <= std::min(len - 1, t + 1); ++u)
      if (spec.in_band(pred.ids[static_cast<std::size_t>(u)])) {
        ++hit;
        break;
      }
  }
  return coupled == 0 ? 1.0 : static_cast<double>(hit) / coupled;
}

// Periodic schedule; only meaningful with beat_jitter = 0.
inline double alignment_score(const TokenSequence& pred, const ToySpec& spec) {
  require(spec.beat_jitter == 0, "alignment_score: jittered specs need the pair's beat list");
  Rng unused(0);
  return alignment_score(pred, spec, beat_schedule(spec, unused));
}

// ---------------------------------------------------------------- ablation

struct AblationBudget {
  int steps = 2000;
  double lr = 1e-3;
  int eval_examples = 8;
  double temperature = 1.0;
};

struct AblationRow {
  std::string label;
  int shift_k = 0;
  bool trained_with_accomp = true;
  bool inference_with_accomp = true;
  std::vector<double> seed_scores;  // surviving seeds
  int diverged = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct AblationTable {
  ToySpec spec;
  AblationBudget budget;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;

  const AblationRow* find(const std::string& label) const {
    for (const auto& r : rows)
      if (r.label == label) return &r;
    return nullptr;
  }

  std::string text() const {
    std::ostringstream out;
    out << std::left << std::setw(30) << "model" << std::setw(5) << "K" << std::setw(10) << "train_acc"
        << std::setw(10) << "infer_acc" << std::setw(10) << "mean" << std::setw(10) << "std" << "n/diverged\n";
    out << std::fixed << std::setprecision(4);
    for (const auto& r : rows)
      out << std::setw(30) << r.label << std::setw(5) << r.shift_k << std::setw(10)
          << (r.trained_with_accomp ? "yes" : "no") << std::setw(10) << (r.inference_with_accomp ? "yes" : "no")
          << std::setw(10) << r.mean << std::setw(10) << r.std << r.seed_scores.size() << "/" << r.diverged << "\n";
    return out.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows)
      rows_j.push_back({{"label", r.label},
                        {"shift_k", r.shift_k},
                        {"trained_with_accomp", r.trained_with_accomp},
                        {"inference_with_accomp", r.inference_with_accomp},
                        {"seed_scores", r.seed_scores},
                        {"diverged", r.diverged},
                        {"mean", r.mean},
                        {"std", r.std}});
    return {{"seeds", seeds}, {"rows", rows_j}};
  }
};

// Tiny LM shaped for a benchmark spec; the shift is left at K_true.
inline LMConfig bench_lm_config(const ToySpec& spec) {
  LMConfig c;
  c.layers = 2;
  c.hidden = 64;
  c.intermediate = 128;
  c.heads = 4;
  c.speaker_dim = 8;
  c.shift_k = spec.k_true;
  c.semantic_vocab = spec.vocab + 1;
  c.lyrics_vocab = spec.band_size() + 2;
  c.accomp_dim = spec.feature_dim;
  c.max_len = 1 + (spec.n_frames + 2) + (spec.n_frames + 1);
  c.ref_mels = 8;
  c.ref_widths = {16, 8};
  return c;
}

namespace detail {

inline LmExample toy_example(const ToySpec& spec, std::uint64_t seed, const MelSpectrogram& ref) {
  auto p = gen_toy_pair(spec, seed);
  LmExample ex;
  ex.lyrics = std::move(p.lyrics);
  ex.semantic = std::move(p.vocal.ids);
  ex.accomp = std::move(p.accomp);
  ex.reference = ref;
  return ex;
}

inline AblationRow make_row(std::string label, int k, bool train_acc, bool infer_acc) {
  AblationRow r;
  r.label = std::move(label);
  r.shift_k = k;
  r.trained_with_accomp = train_acc;
  r.inference_with_accomp = infer_acc;
  return r;
}

inline void summarize(AblationRow& r) {
  const auto n = static_cast<double>(r.seed_scores.size());
  if (n == 0) return;
  double s = 0.0;
  for (double v : r.seed_scores) s += v;
  r.mean = s / n;
  double ss = 0.0;
  for (double v : r.seed_scores) ss += (v - r.mean) * (v - r.mean);
  r.std = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
}

}  // namespace detail

struct TrainedToyModel {
  std::unique_ptr<SemanticLM<float>> model;
  MelSpectrogram reference;
  std::vector<double> losses;
};

// Trains one tiny LM on freshly generated pairs, one pair per step.
inline TrainedToyModel train_toy_lm(const ToySpec& spec, const LMConfig& cfg, const AblationBudget& budget,
                                    std::uint64_t seed) {
  TrainedToyModel out;
  out.model = std::make_unique<SemanticLM<float>>(cfg, derive_seed(seed, "init"));
  Rng ref_rng(derive_seed(seed, "reference"));
  out.reference.frames = ref_rng.normal_matrix<double>(4, cfg.ref_mels);
  LmTrainOptions opts;
  opts.adam.lr = budget.lr;
  opts.grad_accum = 1;
  opts.seed = derive_seed(seed, "masks");
  LmTrainer<float> trainer(*out.model, opts);
  const auto data_seed = derive_seed(seed, "train-data");
  for (int step = 0; step < budget.steps; ++step)
    out.losses.push_back(trainer.train_step({detail::toy_example(spec, data_seed + step, out.reference)}));
  return out;
}

// Mean alignment over held-out pairs; `masked` zeroes the accompaniment.
inline double evaluate_toy_lm(const SemanticLM<float>& model, const MelSpectrogram& reference, const ToySpec& spec,
                              const AblationBudget& budget, std::uint64_t seed, bool masked) {
  double total = 0.0;
  const auto eval_seed = derive_seed(seed, "eval-data");
  for (int e = 0; e < budget.eval_examples; ++e) {
    auto p = gen_toy_pair(spec, eval_seed + e);
    if (masked) p.accomp.frames.setZero();
    SamplingOptions so;
    so.temperature = budget.temperature;
    so.top_k = 0;
    so.seed = derive_seed(seed, "sample") + e;
    so.max_steps = spec.n_frames;
    auto pred = generate_semantic(model, p.lyrics, p.accomp, reference, so);
    total += alignment_score(pred, spec, p.beats);
  }
  return total / budget.eval_examples;
}

// Each config is trained per seed and scored with and without accompaniment.
// With `never_conditioned`, an extra row trains the first K = K_true config
// with the accompaniment always masked and scores it without accompaniment.
inline AblationTable run_shift_ablation(const ToySpec& spec, const std::vector<LMConfig>& model_cfgs,
                                        const AblationBudget& budget, const std::vector<std::uint64_t>& seeds,
                                        bool never_conditioned = true) {
  spec.validate();
  require(model_cfgs.size() >= 2, "run_shift_ablation: need at least two model configs");
  require(seeds.size() >= 3, "run_shift_ablation: need at least three seeds");
  require(budget.steps >= 1 && budget.eval_examples >= 1, "run_shift_ablation: empty budget");
  for (const auto& c : model_cfgs) {
    c.validate();
    require(c.shift_k == 0 || c.shift_k == spec.k_true, "run_shift_ablation: K must be 0 or K_true");
    require(c.accomp_dim == spec.feature_dim && c.semantic_vocab == spec.vocab + 1 &&
                c.lyrics_vocab == spec.band_size() + 2,
            "run_shift_ablation: model config does not match the toy spec");
  }
  AblationTable table;
  table.spec = spec;
  table.budget = budget;
  table.seeds = seeds;

  auto run = [&](const LMConfig& cfg, const std::string& tag, AblationRow& with_acc, AblationRow* masked) {
    for (auto seed : seeds) {
      const auto run_seed = derive_seed(seed, tag);
      try {
        auto trained = train_toy_lm(spec, cfg, budget, run_seed);
        with_acc.seed_scores.push_back(evaluate_toy_lm(*trained.model, trained.reference, spec, budget, run_seed,
                                                       !with_acc.inference_with_accomp));
        if (masked)
          masked->seed_scores.push_back(
              evaluate_toy_lm(*trained.model, trained.reference, spec, budget, run_seed, true));
      } catch (const NumericalError&) {
        ++with_acc.diverged;
        if (masked) ++masked->diverged;
      }
    }
  };

  for (const auto& cfg : model_cfgs) {
    const std::string k = "K=" + std::to_string(cfg.shift_k);
    auto a = detail::make_row(k + " acco", cfg.shift_k, true, true);
    auto m = detail::make_row(k + " masked-inference", cfg.shift_k, true, false);
    run(cfg, k + "|" + std::to_string(cfg.hidden) + "|" + std::to_string(cfg.layers), a, &m);
    detail::summarize(a);
    detail::summarize(m);
    table.rows.push_back(std::move(a));
    table.rows.push_back(std::move(m));
  }
  if (never_conditioned) {
    for (const auto& cfg : model_cfgs) {
      if (cfg.shift_k != spec.k_true) continue;
      LMConfig nc = cfg;
      nc.mask_full_prob = 1.0;
      auto r = detail::make_row("never-conditioned", nc.shift_k, false, false);
      run(nc, "never", r, nullptr);
      detail::summarize(r);
      table.rows.push_back(std::move(r));
      break;
    }
  }
  return table;
}

// Eight isotropic Gaussians on a circle, the usual 2-D flow-matching toy.
struct GaussianRing {
  int modes = 8;
  double radius = 5.0;
  double variance = 0.1;

  MatD sample(Eigen::Index n, Rng& rng) const {
    require(modes >= 1 && radius >= 0.0 && variance >= 0.0, "GaussianRing: bad parameters");
    MatD x(n, 2);
    const double sd = std::sqrt(variance);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = 2.0 * M_PI * static_cast<double>(rng.integer(0, modes - 1)) / modes;
      x(i, 0) = radius * std::cos(a) + sd * rng.normal();
      x(i, 1) = radius * std::sin(a) + sd * rng.normal();
    }
    return x;
  }
};

struct FlowToyBudget {
  int hidden = 64;
  int layers = 3;
  int time_dim = 16;
  int batch = 256;
  int steps = 2000;
  double lr = 1e-3;
  int sample_steps = 20;
  Eigen::Index eval_samples = 2000;
};

// Trains a point flow on the ring and returns the energy distance between
// generated and fresh true samples.
inline double flow_toy_energy_distance(const GaussianRing& ring, const FlowToyBudget& b, std::uint64_t seed) {
  PointFlowField<double> field(2, b.hidden, b.layers, b.time_dim, derive_seed(seed, "flow-init"));
  nn::AdamOptions opts;
  opts.lr = b.lr;
  nn::Adam<double> adam(field.params(), opts);
  Rng rng(derive_seed(seed, "flow-train"));
  for (int s = 0; s < b.steps; ++s) {
    ad::backward(field.loss(ring.sample(b.batch, rng), CFMConfig{}.sigma_min, rng));
    adam.step();
  }
  const MatD generated = field.sample(b.eval_samples, b.sample_steps, derive_seed(seed, "flow-sample"));
  Rng truth(derive_seed(seed, "flow-truth"));
  return energy_distance(generated, ring.sample(b.eval_samples, truth));
}

}  // namespace rapgen
