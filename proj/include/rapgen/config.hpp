#pragma once

// Strict JSON run configuration. Every section is optional and overrides
// defaults field by field; unknown keys are rejected.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rapgen/bench.hpp"
#include "rapgen/cfm.hpp"
#include "rapgen/lm.hpp"
#include "rapgen/rapbank.hpp"

namespace rapgen {

struct TrainConfig {
  int steps_per_stage = 100;  // optimizer steps per curriculum stage
  int batch_size = 1;
  int grad_accum = 1;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::vector<std::string> curriculum{"Basic"};
};

struct GenerateConfig {
  double temperature = 0.9;
  int top_k = 40;
  int max_steps = 0;
  int cfm_steps = 20;
  int gl_iters = 60;
  double reference_seconds = 3.0;
  std::string vocoder_cmd;  // empty: Griffin-Lim
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  LMConfig lm;
  CFMConfig cfm;
  ToySpec toy;
  SubsetThresholds thresholds;
  SegmentationOptions segmentation;
  TrainConfig train;
  GenerateConfig generate;
};

namespace config_detail {

template <class F>
void fields(LMConfig& c, F&& f) {
  f("layers", c.layers);
  f("hidden", c.hidden);
  f("intermediate", c.intermediate);
  f("heads", c.heads);
  f("speaker_dim", c.speaker_dim);
  f("shift_k", c.shift_k);
  f("semantic_vocab", c.semantic_vocab);
  f("lyrics_vocab", c.lyrics_vocab);
  f("accomp_dim", c.accomp_dim);
  f("mask_full_prob", c.mask_full_prob);
  f("max_len", c.max_len);
  f("ref_mels", c.ref_mels);
  f("ref_widths", c.ref_widths);
}

template <class F>
void fields(CFMConfig& c, F&& f) {
  f("sigma_min", c.sigma_min);
  f("sample_steps", c.sample_steps);
  f("n_mels", c.n_mels);
  f("speaker_dim", c.speaker_dim);
  f("input_dim", c.input_dim);
  f("intermediate_dim", c.intermediate_dim);
  f("down_blocks", c.down_blocks);
  f("mid_blocks", c.mid_blocks);
  f("up_blocks", c.up_blocks);
  f("transformers_per_block", c.transformers_per_block);
  f("heads", c.heads);
  f("ff_mult", c.ff_mult);
  f("time_dim", c.time_dim);
  f("semantic_vocab", c.semantic_vocab);
  f("ref_widths", c.ref_widths);
  f("segment_seconds", c.segment_seconds);
}

template <class F>
void fields(ToySpec& s, F&& f) {
  f("n_frames", s.n_frames);
  f("beat_period_frames", s.beat_period_frames);
  f("k_true", s.k_true);
  f("vocab", s.vocab);
  f("feature_dim", s.feature_dim);
  f("noise_std", s.noise_std);
  f("onset_lo", s.onset_lo);
  f("onset_hi", s.onset_hi);
  f("beat_jitter", s.beat_jitter);
}

template <class F>
void fields(SegmentationOptions& s, F&& f) {
  f("merge_gap_s", s.merge_gap_s);
  f("threshold_mean_s", s.threshold_mean_s);
  f("threshold_std_s", s.threshold_std_s);
  f("min_len_s", s.min_len_s);
}

template <class F>
void fields(TrainConfig& t, F&& f) {
  f("steps_per_stage", t.steps_per_stage);
  f("batch_size", t.batch_size);
  f("grad_accum", t.grad_accum);
  f("lr", t.lr);
  f("clip_norm", t.clip_norm);
  f("curriculum", t.curriculum);
}

template <class F>
void fields(GenerateConfig& g, F&& f) {
  f("temperature", g.temperature);
  f("top_k", g.top_k);
  f("max_steps", g.max_steps);
  f("cfm_steps", g.cfm_steps);
  f("gl_iters", g.gl_iters);
  f("reference_seconds", g.reference_seconds);
  f("vocoder_cmd", g.vocoder_cmd);
}

template <class S>
json to_json_fields(const S& s) {
  json j = json::object();
  fields(const_cast<S&>(s), [&](const char* name, const auto& v) { j[name] = v; });
  return j;
}

template <class S>
void from_json_fields(const json& j, S& s, const std::string& where) {
  std::set<std::string> names;
  fields(s, [&](const char* name, auto&) { names.insert(name); });
  detail::check_keys(j, names, where);
  fields(s, [&](const char* name, auto& v) {
    if (!j.contains(name)) return;
    try {
      using V = std::decay_t<decltype(v)>;
      const auto& node = j.at(name);
      if constexpr (std::is_integral_v<V>)
        require(node.is_number_integer(), where + "." + name + ": expected an integer");
      v = node.get<V>();
    } catch (const json::exception& e) {
      throw InvalidInput(where + "." + name + ": " + e.what());
    }
  });
}

}  // namespace config_detail

inline json to_json(const LMConfig& c) { return config_detail::to_json_fields(c); }
inline json to_json(const CFMConfig& c) { return config_detail::to_json_fields(c); }
inline json to_json(const ToySpec& s) { return config_detail::to_json_fields(s); }
inline json to_json(const SegmentationOptions& s) { return config_detail::to_json_fields(s); }
inline json to_json(const TrainConfig& t) { return config_detail::to_json_fields(t); }
inline json to_json(const GenerateConfig& g) { return config_detail::to_json_fields(g); }

inline LMConfig lm_config_from_json(const json& j) {
  LMConfig c;
  config_detail::from_json_fields(j, c, "lm");
  c.validate();
  return c;
}

inline CFMConfig cfm_config_from_json(const json& j) {
  CFMConfig c;
  config_detail::from_json_fields(j, c, "cfm");
  c.validate();
  return c;
}

inline ToySpec toy_spec_from_json(const json& j) {
  ToySpec s;
  config_detail::from_json_fields(j, s, "toy");
  s.validate();
  return s;
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput(origin + ": " + e.what());
  }
}

inline RunConfig run_config_from_json(const json& j) {
  detail::check_keys(j, {"seed", "lm", "cfm", "toy", "thresholds", "segmentation", "train", "generate"}, "config");
  RunConfig rc;
  if (j.contains("seed")) {
    require(j.at("seed").is_number_unsigned(), "config.seed: expected a non-negative integer");
    rc.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("lm")) rc.lm = lm_config_from_json(j.at("lm"));
  if (j.contains("cfm")) rc.cfm = cfm_config_from_json(j.at("cfm"));
  if (j.contains("toy")) rc.toy = toy_spec_from_json(j.at("toy"));
  if (j.contains("thresholds")) rc.thresholds = thresholds_from_json(j.at("thresholds"));
  if (j.contains("segmentation")) config_detail::from_json_fields(j.at("segmentation"), rc.segmentation, "segmentation");
  if (j.contains("train")) config_detail::from_json_fields(j.at("train"), rc.train, "train");
  if (j.contains("generate")) config_detail::from_json_fields(j.at("generate"), rc.generate, "generate");
  require(rc.train.steps_per_stage >= 1 && rc.train.batch_size >= 1 && rc.train.grad_accum >= 1,
          "config.train: step, batch and accumulation counts must be >= 1");
  require(rc.train.lr > 0.0, "config.train: lr must be positive");
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(parse_json_text(io::read_file(path), path.string()));
}

inline json to_json(const RunConfig& rc) {
  json j{{"lm", to_json(rc.lm)},
         {"cfm", to_json(rc.cfm)},
         {"toy", to_json(rc.toy)},
         {"thresholds", to_json(rc.thresholds)},
         {"segmentation", to_json(rc.segmentation)},
         {"train", to_json(rc.train)},
         {"generate", to_json(rc.generate)}};
  if (rc.seed) j["seed"] = *rc.seed;
  return j;
}

}  // namespace rapgen
