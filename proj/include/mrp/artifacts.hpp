#pragma once

#include <string>

#include "mrp/backbone.hpp"
#include "mrp/checkpoint.hpp"
#include "mrp/mrp_head.hpp"

namespace mrp {

inline nlohmann::json backbone_config_json(const BackboneConfig& c) {
  return {{"d_model", c.d_model},     {"n_heads", c.n_heads},   {"n_layers", c.n_layers},
          {"vocab_size", c.vocab_size}, {"block_size", c.block_size}, {"max_len", c.max_len},
          {"norm_eps", c.norm_eps},   {"positional", c.positional}};
}

inline BackboneConfig backbone_config_from(const nlohmann::json& j) {
  BackboneConfig c;
  c.d_model = j.at("d_model").get<std::int64_t>();
  c.n_heads = j.at("n_heads").get<std::int64_t>();
  c.n_layers = j.at("n_layers").get<std::int64_t>();
  c.vocab_size = j.at("vocab_size").get<std::int64_t>();
  c.block_size = j.at("block_size").get<std::int64_t>();
  c.max_len = j.at("max_len").get<std::int64_t>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.positional = j.at("positional").get<std::string>();
  c.validate();
  return c;
}

inline Checkpoint backbone_checkpoint(const BackboneParams& p, const BackboneConfig& cfg, nlohmann::json extra = {}) {
  Checkpoint ck;
  ck.meta["kind"] = "backbone";
  ck.meta["config"] = backbone_config_json(cfg);
  if (!extra.is_null()) ck.meta["train"] = std::move(extra);
  append_tensors(ck, p.named());
  return ck;
}

struct LoadedBackbone {
  BackboneConfig config;
  BackboneParams params;
};

inline LoadedBackbone backbone_from(const Checkpoint& ck) {
  require(ck.meta.value("kind", "") == "backbone", ErrorKind::invalid_config, "checkpoint does not hold a backbone");
  LoadedBackbone out{backbone_config_from(ck.meta.at("config")), {}};
  out.params = BackboneParams::init(out.config, 0);
  assign_tensors(ck, out.params.named());
  out.params.set_trainable(false);
  return out;
}

inline LoadedBackbone load_backbone(const std::string& path) { return backbone_from(load_checkpoint(path)); }

inline Checkpoint mrp_checkpoint(const MrpHead& head, const std::string& backbone_hash, nlohmann::json extra = {}) {
  Checkpoint ck;
  ck.meta["kind"] = "mrp";
  ck.meta["config"] = {{"depth", head.config.depth},
                       {"sigma_init", head.config.sigma_init},
                       {"unroll", head.config.unroll},
                       {"reveal_k", head.config.reveal_k},
                       {"objective", to_string(head.config.objective)}};
  ck.meta["backbone_hash"] = backbone_hash;
  if (!extra.is_null()) ck.meta["train"] = std::move(extra);
  append_tensors(ck, head.params.named());
  return ck;
}

inline MrpHead mrp_from(const Checkpoint& ck, std::int64_t d_model) {
  require(ck.meta.value("kind", "") == "mrp", ErrorKind::invalid_config, "checkpoint does not hold an MRP head");
  const auto& j = ck.meta.at("config");
  MrpHead head;
  head.config.depth = j.at("depth").get<std::int64_t>();
  head.config.sigma_init = j.at("sigma_init").get<double>();
  head.config.unroll = j.at("unroll").get<std::int64_t>();
  head.config.reveal_k = j.at("reveal_k").get<std::int64_t>();
  head.config.objective = parse_objective(j.at("objective").get<std::string>());
  head.params = MrpParams::init(head.config, d_model, 0);
  assign_tensors(ck, head.params.named());
  for (auto& t : head.params.tensors()) t.set_requires_grad(false);
  return head;
}

inline MrpHead load_mrp(const std::string& path, std::int64_t d_model) { return mrp_from(load_checkpoint(path), d_model); }

// Parameters as a save/load cycle leaves them (f32 storage).
inline void round_params_to_f32(const NamedTensors& named) {
  for (auto [_, t] : named) round_to_f32(t.mutable_value());
}

}  // namespace mrp
