#pragma once

#include <random>
#include <string>

#include "lbm/act/model.hpp"
#include "lbm/act/rtg.hpp"
#include "lbm/act/tokenizer.hpp"
#include "lbm/core/hash.hpp"
#include "lbm/nn/checkpoint.hpp"

namespace lbm::act {

// Everything inference needs: weights, tokenizer, normalization, RTG schedule.
struct ActBundle {
  ActModel<float> model;
  Tokenizer tokenizer;
  Normalizer normalizer;
  RtgSchedule rtg;
  std::uint64_t roster_hash = market::roster_hash();
  nlohmann::json provenance = nlohmann::json::object();  // config hash, seed, training stats
};

inline nlohmann::json bundle_meta(const ActBundle& b) {
  return {{"kind", "act"},
          {"model", to_json(b.model.cfg)},
          {"tokenizer", b.tokenizer.to_json()},
          {"normalizer", b.normalizer.to_json()},
          {"rtg", {{"max_return", b.rtg.max_return}, {"scale", b.rtg.scale}, {"w", b.rtg.w}}},
          {"roster_hash", hex64(b.roster_hash)},
          {"provenance", b.provenance}};
}

inline void save_act_bundle(const std::string& path, ActBundle& b, const nn::AdamW<float>* opt = nullptr) {
  nn::save_checkpoint(path, bundle_meta(b), b.model.params(), opt);
}

inline ActBundle load_act_bundle(const std::string& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  if (meta.value("kind", std::string{}) != "act")
    throw MissingArtifact("act checkpoint '" + path + "' has kind '" + meta.value("kind", std::string{}) + "'");
  ActBundle b;
  std::mt19937_64 rng(0);
  b.model = ActModel<float>(act_config_from_json(meta.at("model")), rng);
  b.tokenizer = Tokenizer::from_json(meta.at("tokenizer"));
  b.normalizer = Normalizer::from_json(meta.at("normalizer"));
  const auto& r = meta.at("rtg");
  b.rtg.max_return = r.at("max_return");
  b.rtg.scale = r.at("scale");
  b.rtg.w = r.at("w");
  b.roster_hash = std::stoull(meta.at("roster_hash").get<std::string>(), nullptr, 16);
  b.provenance = meta.value("provenance", nlohmann::json::object());
  nn::load_checkpoint(path, b.model.params());
  return b;
}

}  // namespace lbm::act
