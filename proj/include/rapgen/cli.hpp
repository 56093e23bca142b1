#pragma once

// Command-line front end. `run_cli` parses arguments, runs one subcommand
// and maps failures to exit codes: 0 ok, 2 invalid input, 3 external tool,
// 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rapgen/bench.hpp"
#include "rapgen/checkpoint.hpp"
#include "rapgen/config.hpp"
#include "rapgen/featurization.hpp"
#include "rapgen/lyrics.hpp"
#include "rapgen/metrics.hpp"
#include "rapgen/rapbank.hpp"
#include "rapgen/spectral.hpp"

namespace rapgen::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- small helpers

inline std::string fmt(double v, int digits = 6) {
  if (v == 0.0) v = 0.0;  // no "-0"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
  return s;
}

inline std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t value, const RunConfig& rc) {
  if (flag && flag->count()) return value;
  if (rc.seed) return *rc.seed;
  throw InvalidInput("a seed is required: pass --seed or set \"seed\" in the config");
}

inline RunConfig maybe_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

inline void write_token_file(const fs::path& path, const TokenSequence& t) {
  const json j{{"vocab", t.vocab}, {"frame_rate_hz", t.frame_rate_hz}, {"ids", t.ids}};
  io::write_file(path, j.dump() + "\n");
}

inline TokenSequence read_token_file(const fs::path& path) {
  const auto j = parse_json_text(io::read_file(path), path.string());
  detail::check_keys(j, {"vocab", "frame_rate_hz", "ids"}, path.string());
  TokenSequence t;
  try {
    t.vocab = j.at("vocab").get<int>();
    t.frame_rate_hz = j.at("frame_rate_hz").get<double>();
    t.ids = j.at("ids").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  require(t.frame_rate_hz > 0.0, path.string() + ": frame rate must be positive");
  t.validate();
  return t;
}

// Re-throws a library error with a "<command>[<stage>]" prefix, keeping its
// exit code.
template <class F>
auto staged(const std::string& command, const std::string& stage, F&& f) -> decltype(f()) {
  const std::string tag = command + "[" + stage + "]: ";
  try {
    return f();
  } catch (const ExternalToolError& e) {
    throw ExternalToolError(tag + e.what(), e.diagnostics());
  } catch (const NumericalError& e) {
    throw NumericalError(tag + e.what());
  } catch (const InvalidInput& e) {
    throw InvalidInput(tag + e.what());
  } catch (const json::exception& e) {
    throw InvalidInput(tag + e.what());
  } catch (const fs::filesystem_error& e) {
    throw InvalidInput(tag + e.what());
  }
}

// ---------------------------------------------------------------- pipeline / stats

inline int cmd_pipeline(const fs::path& manifest, const fs::path& out_dir, std::uint64_t seed,
                        const RunConfig& rc, const std::string& thresholds_path, bool write_audio, std::ostream& out) {
  PipelineOptions opts;
  opts.segmentation = rc.segmentation;
  opts.thresholds = rc.thresholds;
  if (!thresholds_path.empty())
    opts.thresholds = thresholds_from_json(parse_json_text(io::read_file(thresholds_path), thresholds_path));
  opts.seed = seed;
  opts.write_audio = write_audio;
  const auto result = run_pipeline(manifest, out_dir, opts);
  out << "segments\t" << result.segments.size() << "\n";
  out << result.stats.to_json().dump(2) << "\n";
  return 0;
}

inline int cmd_stats(const fs::path& segments, const fs::path& out_dir, std::ostream& out) {
  const auto report = dataset_stats(segments);
  write_stats(report, out_dir);
  out << report.to_json().dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- tokenizer

inline int cmd_tokenizer_fit(const std::vector<std::string>& feature_files, int k, int max_iters,
                             Eigen::Index subsample, std::uint64_t seed, const fs::path& out_dir, std::ostream& out) {
  require(!feature_files.empty(), "tokenizer-fit: no feature files");
  std::vector<FeatureMatrix> feats;
  Eigen::Index rows = 0;
  for (const auto& f : feature_files) {
    feats.push_back(io::read_features(f));
    require(feats.back().dim() == feats.front().dim(), "tokenizer-fit: feature dimension differs in " + f);
    rows += feats.back().length();
  }
  FeatureMatrix all;
  all.frame_rate_hz = feats.front().frame_rate_hz;
  all.frames.resize(rows, feats.front().dim());
  Eigen::Index at = 0;
  for (const auto& f : feats) {
    all.frames.middleRows(at, f.length()) = f.frames;
    at += f.length();
  }
  KMeansOptions opts;
  opts.k = k;
  opts.seed = seed;
  opts.max_iters = max_iters;
  opts.subsample = subsample;
  const auto fit = fit_kmeans_detailed(all, opts);
  fs::create_directories(out_dir / "tokens");
  io::write_codebook(out_dir / "codebook.kmc", fit.codebook);
  for (std::size_t i = 0; i < feats.size(); ++i)
    write_token_file(out_dir / "tokens" / (fs::path(feature_files[i]).stem().string() + ".tok.json"),
                     tokenize(feats[i], fit.codebook));
  out << "k\t" << k << "\niterations\t" << fit.iterations << "\nobjective\t"
      << full(fit.objective_history.empty() ? 0.0 : fit.objective_history.back()) << "\n";
  return 0;
}

// ---------------------------------------------------------------- training

struct TrainRow {
  std::string id;
  std::string lyrics;
  fs::path tokens, accomp, mel, reference;
  Subset subset = Subset::Basic;
};

inline std::vector<TrainRow> read_train_rows(const fs::path& path, bool lm) {
  std::istringstream in(io::read_file(path));
  std::vector<TrainRow> rows;
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(n);
    const auto j = parse_json_text(line, where);
    detail::check_keys(j, {"id", "lyrics", "tokens_path", "accomp_path", "mel_path", "reference_path", "subset"},
                       where);
    TrainRow r;
    try {
      r.id = j.at("id").get<std::string>();
      r.tokens = resolve(j.at("tokens_path").get<std::string>());
      r.reference = resolve(j.at("reference_path").get<std::string>());
      r.subset = subset_from_string(j.at("subset").get<std::string>());
      if (lm) {
        r.lyrics = j.at("lyrics").get<std::string>();
        r.accomp = resolve(j.at("accomp_path").get<std::string>());
      } else {
        r.mel = resolve(j.at("mel_path").get<std::string>());
      }
    } catch (const json::exception& e) {
      throw InvalidInput(where + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  require(!rows.empty(), path.string() + ": no training rows");
  return rows;
}

inline std::vector<Subset> parse_curriculum(const std::vector<std::string>& names) {
  require(!names.empty(), "curriculum: no stages");
  std::vector<Subset> stages;
  for (const auto& n : names) {
    const auto s = subset_from_string(n);
    require(s != Subset::Rejected, "curriculum: Rejected is not a training subset");
    require(stages.empty() || s > stages.back(), "curriculum: stages must go from broader to stricter subsets");
    stages.push_back(s);
  }
  return stages;
}

struct TrainPlan {
  std::vector<Subset> stages;
  int steps_per_stage = 1;
  int batch_size = 1;
  int grad_accum = 1;
  std::uint64_t seed = 0;

  long long total_steps() const { return static_cast<long long>(stages.size()) * steps_per_stage; }
};

// Runs optimizer steps [start, end). Stage s trains on rows whose subset is
// at least stages[s]; batches are drawn from a per-step seed so a resumed run
// sees the same data.
template <class Ex, class Step, class StageEnd>
void drive_training(const TrainPlan& plan, const std::vector<Ex>& examples, const std::vector<Subset>& subsets,
                    long long start, long long end, std::ostream& log, Step&& step, StageEnd&& stage_end) {
  for (long long g = start; g < end; ++g) {
    const auto stage_idx = static_cast<std::size_t>(g / plan.steps_per_stage);
    const Subset stage = plan.stages[stage_idx];
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < examples.size(); ++i)
      if (subsets[i] >= stage) pool.push_back(i);
    require(!pool.empty(), "train: no rows in subset " + to_string(stage));
    Rng pick(derive_seed(plan.seed, "batch:" + std::to_string(g)));
    double total = 0.0;
    for (int m = 0; m < plan.grad_accum; ++m) {
      std::vector<Ex> batch;
      for (int b = 0; b < plan.batch_size; ++b)
        batch.push_back(examples[pool[static_cast<std::size_t>(pick.integer(0, static_cast<std::int64_t>(pool.size()) - 1))]]);
      double loss = 0.0;
      try {
        loss = step(batch);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (stage " + to_string(stage) + ", step " + std::to_string(g + 1) +
                             ")");
      }
      total += loss;
    }
    log << g + 1 << '\t' << to_string(stage) << '\t' << full(total / plan.grad_accum) << '\n';
    if ((g + 1) % plan.steps_per_stage == 0) stage_end(stage, g + 1);
  }
}

struct TrainArgs {
  std::string stage;  // "lm" or "cfm"
  fs::path data, out_dir, resume;
  std::uint64_t seed = 0;
  RunConfig rc;
  long long max_steps = 0;  // <= 0: run to the end of the curriculum
};

inline json plan_json(const TrainPlan& p, const std::vector<std::string>& curriculum) {
  return {{"seed", p.seed},
          {"curriculum", curriculum},
          {"steps_per_stage", p.steps_per_stage},
          {"batch_size", p.batch_size},
          {"grad_accum", p.grad_accum}};
}

inline void check_resume_plan(const json& meta, const json& expect, const fs::path& where) {
  for (const auto& [k, v] : expect.items())
    require(meta.contains(k) && meta.at(k) == v, where.string() + ": resume state has a different " + k);
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  require(a.stage == "lm" || a.stage == "cfm", "train: stage must be lm or cfm");
  const bool lm = a.stage == "lm";
  TrainPlan plan;
  plan.stages = parse_curriculum(a.rc.train.curriculum);
  plan.steps_per_stage = a.rc.train.steps_per_stage;
  plan.batch_size = a.rc.train.batch_size;
  plan.grad_accum = a.rc.train.grad_accum;
  plan.seed = a.seed;
  const json plan_meta = plan_json(plan, a.rc.train.curriculum);
  const auto rows = read_train_rows(a.data, lm);
  std::vector<Subset> subsets;
  for (const auto& r : rows) subsets.push_back(r.subset);
  nn::AdamOptions adam;
  adam.lr = a.rc.train.lr;
  adam.clip_norm = a.rc.train.clip_norm;

  fs::create_directories(a.out_dir);
  std::ostringstream log;
  log << "step\tstage\tloss\n";
  long long start = 0;
  const fs::path ckpt = a.out_dir / (a.stage + ".ckpt");
  const fs::path state = a.out_dir / (a.stage + ".state");
  long long end = plan.total_steps();

  auto finish = [&](long long reached) {
    io::write_file(a.out_dir / "loss.tsv", log.str());
    out << "stage\t" << a.stage << "\nsteps\t" << reached << "/" << plan.total_steps() << "\ncheckpoint\t"
        << ckpt.string() << "\n";
  };

  if (lm) {
    std::vector<LmExample> examples;
    const auto vocab = LyricsVocab::characters();
    for (const auto& r : rows) {
      LmExample ex;
      ex.lyrics = vocab.encode_text(r.lyrics);
      ex.semantic = read_token_file(r.tokens).ids;
      ex.accomp = io::read_features(r.accomp);
      ex.reference = io::read_mel(r.reference);
      require(ex.accomp.length() == static_cast<Eigen::Index>(ex.semantic.size()),
              "train lm: " + r.id + ": accompaniment and token lengths differ");
      examples.push_back(std::move(ex));
    }
    std::unique_ptr<SemanticLM<float>> model;
    if (a.resume.empty()) {
      model = std::make_unique<SemanticLM<float>>(a.rc.lm, derive_seed(a.seed, "lm-init"));
    } else {
      model = load_lm<float>(a.resume / "lm.ckpt");
      require(to_json(model->config()) == to_json(a.rc.lm), "train lm: resume checkpoint config differs from --config");
    }
    require(model->config().lyrics_vocab >= vocab.size(), "train lm: lm.lyrics_vocab smaller than the lyrics alphabet");
    LmTrainOptions topts;
    topts.adam = adam;
    topts.grad_accum = 1;
    topts.seed = derive_seed(a.seed, "lm-masks");
    LmTrainer<float> trainer(*model, topts);
    if (!a.resume.empty()) {
      const auto meta = load_train_state(a.resume / "lm.state", trainer.adam(), trainer.rng());
      check_resume_plan(meta, plan_meta, a.resume / "lm.state");
      start = meta.at("step").get<long long>();
    }
    if (a.max_steps > 0) end = std::min(end, start + a.max_steps);
    auto save = [&](long long reached) {
      save_lm(ckpt, *model);
      json meta = plan_meta;
      meta["step"] = reached;
      save_train_state(state, trainer.adam(), trainer.rng(), meta);
    };
    drive_training(
        plan, examples, subsets, start, end, log,
        [&](const std::vector<LmExample>& b) { return trainer.train_step(b); },
        [&](Subset s, long long) { save_lm(a.out_dir / ("lm_" + to_string(s) + ".ckpt"), *model); });
    save(end);
    finish(end);
    return 0;
  }

  std::vector<CfmExample> examples;
  for (const auto& r : rows) {
    CfmExample ex;
    const auto tok = read_token_file(r.tokens);
    ex.tokens = tok.ids;
    ex.token_rate_hz = tok.frame_rate_hz;
    ex.mel = io::read_mel(r.mel);
    ex.reference = io::read_mel(r.reference);
    require(!ex.tokens.empty(), "train cfm: " + r.id + ": empty token file");
    examples.push_back(std::move(ex));
  }
  std::unique_ptr<SemanticToMel<float>> model;
  if (a.resume.empty()) {
    model = std::make_unique<SemanticToMel<float>>(a.rc.cfm, derive_seed(a.seed, "cfm-init"));
    double sum = 0.0, sq = 0.0, n = 0.0;
    for (const auto& ex : examples) {
      sum += ex.mel.frames.sum();
      sq += ex.mel.frames.squaredNorm();
      n += static_cast<double>(ex.mel.frames.size());
    }
    require(n > 0, "train cfm: empty mel data");
    model->norm().mean = sum / n;
    const double var = sq / n - model->norm().mean * model->norm().mean;
    model->norm().std = var > 1e-12 ? std::sqrt(var) : 1.0;
  } else {
    model = load_cfm<float>(a.resume / "cfm.ckpt");
    require(to_json(model->config()) == to_json(a.rc.cfm), "train cfm: resume checkpoint config differs from --config");
  }
  CfmTrainer<float> trainer(*model, adam, 1, derive_seed(a.seed, "cfm-noise"));
  if (!a.resume.empty()) {
    const auto meta = load_train_state(a.resume / "cfm.state", trainer.adam(), trainer.rng());
    check_resume_plan(meta, plan_meta, a.resume / "cfm.state");
    start = meta.at("step").get<long long>();
  }
  if (a.max_steps > 0) end = std::min(end, start + a.max_steps);
  drive_training(
      plan, examples, subsets, start, end, log, [&](const std::vector<CfmExample>& b) { return trainer.train_step(b); },
      [&](Subset s, long long) { save_cfm(a.out_dir / ("cfm_" + to_string(s) + ".ckpt"), *model); });
  save_cfm(ckpt, *model);
  json meta = plan_meta;
  meta["step"] = end;
  save_train_state(state, trainer.adam(), trainer.rng(), meta);
  finish(end);
  return 0;
}

// ---------------------------------------------------------------- generation

struct GenerateArgs {
  fs::path lyrics, accomp, reference, lm_ckpt, cfm_ckpt, out_wav;
  std::uint64_t seed = 0;
  GenerateConfig gen;
};

inline MelSpectrogram crop_reference(const MelSpectrogram& ref, double seconds) {
  const auto frames = static_cast<Eigen::Index>(std::llround(seconds * ref.frame_rate_hz));
  if (seconds <= 0.0 || ref.length() <= frames) return ref;
  MelSpectrogram out = ref;
  out.frames = ref.frames.topRows(std::max<Eigen::Index>(frames, 1));
  return out;
}

inline int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const std::string c = "generate";
  auto text = staged(c, "lyrics", [&] { return io::read_file(a.lyrics); });
  auto accomp = staged(c, "accompaniment", [&] { return io::read_features(a.accomp); });
  auto reference = staged(c, "reference", [&] {
    auto r = io::read_mel(a.reference);
    require(r.length() >= 1, "empty reference mel");
    return crop_reference(r, a.gen.reference_seconds);
  });
  auto lm = staged(c, "load-lm", [&] { return load_lm<float>(a.lm_ckpt); });
  auto cfm = staged(c, "load-cfm", [&] { return load_cfm<float>(a.cfm_ckpt); });
  staged(c, "compat", [&] {
    require(lm->config().semantic_vocab == cfm->config().semantic_vocab,
            "LM and mel-decoder checkpoints use different semantic vocabularies");
    require(reference.n_mels() == lm->config().ref_mels && reference.n_mels() == cfm->config().n_mels,
            "reference mel channel count does not match the checkpoints");
    require(accomp.dim() == lm->config().accomp_dim, "accompaniment dimension does not match the LM");
  });
  const auto vocab = LyricsVocab::characters();
  const auto lyrics = staged(c, "lyrics", [&] {
    require(lm->config().lyrics_vocab >= vocab.size(), "LM lyrics vocabulary is smaller than the lyrics alphabet");
    auto t = vocab.encode_text(text);
    t.vocab = lm->config().lyrics_vocab;
    return t;
  });

  SamplingOptions so;
  so.temperature = a.gen.temperature;
  so.top_k = a.gen.top_k;
  so.max_steps = a.gen.max_steps;
  so.seed = derive_seed(a.seed, "semantic");
  const auto tokens = staged(c, "semantic", [&] {
    auto t = generate_semantic(*lm, lyrics, accomp, reference, so);
    if (t.ids.empty()) throw NumericalError("the LM emitted end-of-sequence before any token");
    return t;
  });
  const auto noise_seed = derive_seed(a.seed, "mel-noise");
  const auto mel = staged(c, "mel", [&] {
    auto m = cfm->sample(tokens.ids, tokens.frame_rate_hz, cfm->encode_reference(reference), a.gen.cfm_steps,
                         noise_seed);
    if (!m.frames.allFinite()) throw NumericalError("non-finite mel frames");
    return m;
  });
  GriffinLimOptions gl;
  gl.iters = a.gen.gl_iters;
  gl.seed = derive_seed(a.seed, "griffin-lim");
  const auto audio = staged(c, "vocoder", [&] {
    return a.gen.vocoder_cmd.empty() ? griffin_lim_invert(mel, gl) : vocoder_ingest(mel, a.gen.vocoder_cmd);
  });
  staged(c, "write", [&] {
    if (a.out_wav.has_parent_path()) fs::create_directories(a.out_wav.parent_path());
    io::write_wav(a.out_wav, audio);
    const json report{{"lyrics_tokens", lyrics.ids.size()},
                      {"semantic_tokens", tokens.ids.size()},
                      {"semantic_truncated", tokens.truncated},
                      {"semantic_seconds", tokens.ids.size() / tokens.frame_rate_hz},
                      {"mel_frames", mel.length()},
                      {"mel_seconds", mel.length() / kMelFrameRate},
                      {"audio_samples", audio.samples.size()},
                      {"audio_seconds", audio.duration_s()},
                      {"reference_frames", reference.length()},
                      {"vocoder", a.gen.vocoder_cmd.empty() ? std::string("griffin-lim") : a.gen.vocoder_cmd},
                      {"seed", a.seed},
                      {"seeds", {{"semantic", so.seed}, {"mel_noise", noise_seed}, {"griffin_lim", gl.seed}}},
                      {"wav_fnv1a64", hex64(fnv1a64(io::read_file(a.out_wav)))}};
    io::write_file(a.out_wav.string() + ".json", report.dump(2) + "\n");
    out << report.dump(2) << "\n";
  });
  return 0;
}

inline int cmd_vocode(const fs::path& mel_path, const fs::path& out_wav, const std::string& vocoder_cmd, int gl_iters,
                      std::uint64_t seed, std::ostream& out) {
  const auto mel = io::read_mel(mel_path);
  GriffinLimOptions gl;
  gl.iters = gl_iters;
  gl.seed = derive_seed(seed, "griffin-lim");
  const auto audio = vocoder_cmd.empty() ? griffin_lim_invert(mel, gl) : vocoder_ingest(mel, vocoder_cmd);
  io::write_wav(out_wav, audio);
  out << "samples\t" << audio.samples.size() << "\nseconds\t" << fmt(audio.duration_s()) << "\n";
  return 0;
}

// ---------------------------------------------------------------- bench

inline int cmd_bench_ablation(const ToySpec& spec, int n_seeds, std::uint64_t seed, int steps, int eval_examples,
                              const fs::path& out_dir, std::ostream& out) {
  require(n_seeds >= 3, "bench ablation: need at least 3 seeds");
  AblationBudget budget;
  if (steps > 0) budget.steps = steps;
  if (eval_examples > 0) budget.eval_examples = eval_examples;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(seed + static_cast<std::uint64_t>(i));
  auto with_k = bench_lm_config(spec);
  auto without = with_k;
  without.shift_k = 0;
  const auto table = run_shift_ablation(spec, {with_k, without}, budget, seeds);
  out << table.text();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    io::write_file(out_dir / "ablation.txt", table.text());
    json j = table.to_json();
    j["spec"] = to_json(spec);
    j["steps"] = budget.steps;
    io::write_file(out_dir / "ablation.json", j.dump(2) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------- entry point

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"rapgen: lyrics-and-accompaniment conditioned rap vocal generation toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::uint64_t seed_value = 0;
  std::string out_dir;
  auto common = [&](CLI::App* sub, bool need_out) {
    sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    auto* s = sub->add_option("--seed", seed_value, "global seed for this command");
    auto* o = sub->add_option("--out", out_dir, "output directory or file");
    if (need_out) o->required();
    return s;
  };

  // pipeline run
  auto* pipeline = app.add_subcommand("pipeline", "dataset pipeline");
  pipeline->require_subcommand(1);
  auto* pipeline_run = pipeline->add_subcommand("run", "segment, score and bucket songs from a manifest");
  std::string manifest, thresholds;
  bool no_audio = false;
  pipeline_run->add_option("--manifest", manifest, "song manifest (JSON lines)")->required();
  pipeline_run->add_option("--thresholds", thresholds, "subset thresholds JSON");
  pipeline_run->add_flag("--no-audio", no_audio, "skip writing sliced audio");
  auto* pipeline_seed = common(pipeline_run, true);

  // stats
  auto* stats = app.add_subcommand("stats", "statistics over a segment manifest");
  std::string segments;
  stats->add_option("--segments", segments, "segments.jsonl")->required();
  common(stats, true);

  // tokenizer-fit
  auto* tok = app.add_subcommand("tokenizer-fit", "fit a k-means codebook and tokenize feature files");
  std::vector<std::string> feature_files;
  int k = 64, max_iters = 100;
  long long subsample = 0;
  tok->add_option("--features", feature_files, "FMX1 feature files")->required();
  tok->add_option("--k", k, "number of clusters");
  tok->add_option("--max-iters", max_iters, "Lloyd iterations");
  tok->add_option("--subsample", subsample, "fit on this many random frames (0 = all)");
  auto* tok_seed = common(tok, true);

  // train
  auto* train = app.add_subcommand("train", "train the semantic LM or the mel decoder");
  std::string train_stage, train_data, resume, curriculum;
  long long max_steps = 0;
  int steps_override = 0;
  train->add_option("stage", train_stage, "lm or cfm")->required()->check(CLI::IsMember({"lm", "cfm"}));
  train->add_option("--data", train_data, "training rows (JSON lines)")->required();
  train->add_option("--resume", resume, "directory holding a previous run's checkpoint and state");
  train->add_option("--curriculum", curriculum, "comma-separated subsets, e.g. Basic,Standard,Premium");
  train->add_option("--steps", steps_override, "optimizer steps per curriculum stage");
  train->add_option("--max-steps", max_steps, "stop after this many optimizer steps in this invocation");
  auto* train_seed = common(train, true);

  // generate
  auto* gen = app.add_subcommand("generate", "lyrics + accompaniment + reference -> waveform");
  GenerateArgs ga;
  std::string vocoder_cmd;
  int gl_iters = 0, gen_max_steps = -1;
  gen->add_option("--lyrics", ga.lyrics, "lyrics text file")->required();
  gen->add_option("--accomp", ga.accomp, "accompaniment features (FMX1)")->required();
  gen->add_option("--reference", ga.reference, "reference log-mel (MEL1)")->required();
  gen->add_option("--lm", ga.lm_ckpt, "semantic LM checkpoint")->required();
  gen->add_option("--cfm", ga.cfm_ckpt, "mel decoder checkpoint")->required();
  gen->add_option("--vocoder-cmd", vocoder_cmd, "external vocoder command (default: Griffin-Lim)");
  gen->add_option("--gl-iters", gl_iters, "Griffin-Lim iterations");
  gen->add_option("--max-steps", gen_max_steps, "semantic token budget");
  auto* gen_seed = common(gen, true);

  // eval
  auto* eval = app.add_subcommand("eval", "objective metrics");
  eval->require_subcommand(1);
  std::string a_path, b_path, plot;
  double tolerance = kBeatTolerance;
  auto* ev_wer = eval->add_subcommand("wer", "word error rate between two text files");
  ev_wer->add_option("--ref", a_path)->required();
  ev_wer->add_option("--hyp", b_path)->required();
  auto* ev_secs = eval->add_subcommand("secs", "mean cosine similarity of paired embedding rows (FMX1)");
  ev_secs->add_option("--a", a_path)->required();
  ev_secs->add_option("--b", b_path)->required();
  auto* ev_fad = eval->add_subcommand("fad", "Frechet distance between embedding sets (FMX1)");
  ev_fad->add_option("--a", a_path)->required();
  ev_fad->add_option("--b", b_path)->required();
  auto* ev_kld = eval->add_subcommand("kld", "mean KL divergence of posterior rows (FMX1)");
  ev_kld->add_option("--p", a_path)->required();
  ev_kld->add_option("--q", b_path)->required();
  auto* ev_beats = eval->add_subcommand("beats", "beat / onset alignment of accompaniment and vocal WAVs");
  ev_beats->add_option("--accomp", a_path)->required();
  ev_beats->add_option("--vocal", b_path)->required();
  ev_beats->add_option("--tolerance", tolerance, "seconds");
  ev_beats->add_option("--plot", plot, "write plot-data columns here");

  // bench ablation
  auto* bench = app.add_subcommand("bench", "synthetic benchmark");
  bench->require_subcommand(1);
  auto* ablation = bench->add_subcommand("ablation", "accompaniment shift ablation");
  std::string spec_path;
  int n_seeds = 5, bench_steps = 0, eval_examples = 0;
  ablation->add_option("--spec", spec_path, "ToySpec JSON");
  ablation->add_option("--seeds", n_seeds, "number of seeds");
  ablation->add_option("--steps", bench_steps, "training steps per model");
  ablation->add_option("--eval-examples", eval_examples, "held-out pairs per model");
  auto* bench_seed = common(ablation, false);

  // vocode
  auto* vocode = app.add_subcommand("vocode", "log-mel (MEL1) -> WAV");
  std::string mel_path;
  vocode->add_option("--mel", mel_path)->required();
  vocode->add_option("--vocoder-cmd", vocoder_cmd, "external vocoder command (default: Griffin-Lim)");
  vocode->add_option("--gl-iters", gl_iters, "Griffin-Lim iterations");
  auto* vocode_seed = common(vocode, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig rc = maybe_config(config_path);
    if (pipeline_run->parsed())
      return cmd_pipeline(manifest, out_dir, resolve_seed(pipeline_seed, seed_value, rc), rc, thresholds, !no_audio,
                          out);
    if (stats->parsed()) return cmd_stats(segments, out_dir, out);
    if (tok->parsed())
      return cmd_tokenizer_fit(feature_files, k, max_iters, subsample, resolve_seed(tok_seed, seed_value, rc), out_dir,
                               out);
    if (train->parsed()) {
      require(!config_path.empty(), "train: --config is required");
      TrainArgs ta;
      ta.stage = train_stage;
      ta.data = train_data;
      ta.out_dir = out_dir;
      ta.resume = resume;
      ta.seed = resolve_seed(train_seed, seed_value, rc);
      ta.rc = rc;
      ta.max_steps = max_steps;
      if (!curriculum.empty()) {
        ta.rc.train.curriculum.clear();
        std::stringstream ss(curriculum);
        for (std::string s; std::getline(ss, s, ',');) ta.rc.train.curriculum.push_back(s);
      }
      if (steps_override > 0) ta.rc.train.steps_per_stage = steps_override;
      return cmd_train(ta, out);
    }
    if (gen->parsed()) {
      ga.out_wav = out_dir;
      ga.seed = resolve_seed(gen_seed, seed_value, rc);
      ga.gen = rc.generate;
      if (!vocoder_cmd.empty()) ga.gen.vocoder_cmd = vocoder_cmd;
      if (gl_iters > 0) ga.gen.gl_iters = gl_iters;
      if (gen_max_steps >= 0) ga.gen.max_steps = gen_max_steps;
      return cmd_generate(ga, out);
    }
    if (ev_wer->parsed()) {
      out << "wer\t" << fmt(wer_text(io::read_file(a_path), io::read_file(b_path))) << "\n";
      return 0;
    }
    if (ev_secs->parsed()) {
      const auto a = io::read_features(a_path), b = io::read_features(b_path);
      require(a.length() == b.length() && a.length() >= 1, "eval secs: files must hold the same number of rows");
      double s = 0.0;
      for (Eigen::Index i = 0; i < a.length(); ++i)
        s += secs(a.frames.row(i).transpose(), b.frames.row(i).transpose());
      out << "secs\t" << fmt(s / a.length()) << "\n";
      return 0;
    }
    if (ev_fad->parsed()) {
      out << "fad\t" << fmt(fad({io::read_features(a_path).frames, a_path}, {io::read_features(b_path).frames, b_path}))
          << "\n";
      return 0;
    }
    if (ev_kld->parsed()) {
      out << "kld\t" << fmt(kld(io::read_features(a_path).frames, io::read_features(b_path).frames)) << "\n";
      return 0;
    }
    if (ev_beats->parsed()) {
      BeatOptions bo;
      bo.tolerance_s = tolerance;
      const auto r = beat_alignment_report(io::read_wav(a_path), io::read_wav(b_path), bo);
      out << "beats\t" << r.beat_times_s.size() << "\nonsets\t" << r.onset_times_s.size() << "\ntolerance_s\t"
          << fmt(r.tolerance_s) << "\naligned_fraction\t" << fmt(r.aligned_fraction) << "\n";
      if (!plot.empty()) io::write_file(plot, r.plot_data());
      return 0;
    }
    if (ablation->parsed()) {
      ToySpec spec = rc.toy;
      if (!spec_path.empty()) spec = toy_spec_from_json(parse_json_text(io::read_file(spec_path), spec_path));
      return cmd_bench_ablation(spec, n_seeds, resolve_seed(bench_seed, seed_value, rc), bench_steps, eval_examples,
                                out_dir, out);
    }
    if (vocode->parsed())
      return cmd_vocode(mel_path, out_dir, vocoder_cmd.empty() ? rc.generate.vocoder_cmd : vocoder_cmd,
                        gl_iters > 0 ? gl_iters : rc.generate.gl_iters, resolve_seed(vocode_seed, seed_value, rc), out);
  } catch (const ExternalToolError& e) {
    err << "error: " << e.what() << "\n";
    if (!e.diagnostics().empty()) err << "--- tool output ---\n" << e.diagnostics() << "\n";
    return e.exit_code();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << "error: no command\n";
  return 2;
}

}  // namespace rapgen::cli
