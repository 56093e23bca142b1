#pragma once

// Model and optimizer-state files. Model files carry their configuration
// (and, for the mel decoder, the mel normalization) in the JSON metadata so
// they load without any other input.

#include <filesystem>
#include <memory>
#include <string>

#include "rapgen/config.hpp"

namespace rapgen {

namespace ckpt_detail {

inline json read_meta(const std::string& bytes, const std::string& origin, const std::string& kind) {
  const json meta = parse_json_text(nn::checkpoint_meta(bytes, origin), origin + " metadata");
  require(meta.is_object() && meta.value("kind", std::string()) == kind,
          origin + ": expected a '" + kind + "' checkpoint");
  return meta;
}

}  // namespace ckpt_detail

template <class T>
void save_lm(const std::filesystem::path& path, const SemanticLM<T>& model) {
  const json meta{{"kind", "lm"}, {"config", to_json(model.config())}};
  io::write_file(path, nn::encode_checkpoint(model.params(), meta.dump()));
}

template <class T>
std::unique_ptr<SemanticLM<T>> load_lm(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  const auto meta = ckpt_detail::read_meta(bytes, path.string(), "lm");
  auto model = std::make_unique<SemanticLM<T>>(lm_config_from_json(meta.at("config")), 0);
  nn::decode_checkpoint_into(bytes, model->params(), path.string());
  return model;
}

template <class T>
void save_cfm(const std::filesystem::path& path, const SemanticToMel<T>& model) {
  const json meta{{"kind", "cfm"},
                  {"config", to_json(model.config())},
                  {"mel_norm", {{"mean", model.norm().mean}, {"std", model.norm().std}}}};
  io::write_file(path, nn::encode_checkpoint(model.params(), meta.dump()));
}

template <class T>
std::unique_ptr<SemanticToMel<T>> load_cfm(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  const auto meta = ckpt_detail::read_meta(bytes, path.string(), "cfm");
  auto model = std::make_unique<SemanticToMel<T>>(cfm_config_from_json(meta.at("config")), 0);
  nn::decode_checkpoint_into(bytes, model->params(), path.string());
  try {
    model->norm().mean = meta.at("mel_norm").at("mean").get<double>();
    model->norm().std = meta.at("mel_norm").at("std").get<double>();
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": bad mel_norm metadata: " + e.what());
  }
  require(model->norm().std > 0.0, path.string() + ": mel_norm std must be positive");
  return model;
}

// Optimizer moments, step counter and sampler state, plus caller fields.
template <class T>
void save_train_state(const std::filesystem::path& path, nn::Adam<T>& adam, const Rng& rng, json extra) {
  nn::ParamStore<T> moments;
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    moments.add("m." + std::to_string(i), adam.first_moments()[i]);
    moments.add("v." + std::to_string(i), adam.second_moments()[i]);
  }
  extra["kind"] = "train-state";
  extra["adam_steps"] = adam.steps();
  extra["rng"] = rng.state();
  io::write_file(path, nn::encode_checkpoint(moments, extra.dump()));
}

template <class T>
json load_train_state(const std::filesystem::path& path, nn::Adam<T>& adam, Rng& rng) {
  const auto bytes = io::read_file(path);
  const auto meta = ckpt_detail::read_meta(bytes, path.string(), "train-state");
  nn::ParamStore<T> moments;
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    moments.add("m." + std::to_string(i), adam.first_moments()[i]);
    moments.add("v." + std::to_string(i), adam.second_moments()[i]);
  }
  nn::decode_checkpoint_into(bytes, moments, path.string());
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    adam.first_moments()[i] = moments.get("m." + std::to_string(i)).value();
    adam.second_moments()[i] = moments.get("v." + std::to_string(i)).value();
  }
  try {
    adam.set_steps(meta.at("adam_steps").get<long long>());
    rng.set_state(meta.at("rng").get<std::string>());
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": bad train-state metadata: " + e.what());
  }
  return meta;
}

}  // namespace rapgen
