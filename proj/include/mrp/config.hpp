#pragma once

#include <cstdlib>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrp/backbone.hpp"
#include "mrp/bench.hpp"
#include "mrp/checkpoint.hpp"
#include "mrp/inference.hpp"
#include "mrp/mrp_head.hpp"
#include "mrp/training.hpp"

namespace mrp {

struct DataConfig {
  std::int64_t count = 50000;
  std::int64_t max_operand = 99;
  std::int64_t min_operand = 0;
  std::string ops = "+-";
  std::int64_t eval_count = 500;
  std::int64_t eval_min_operand = 10;
  std::string eval_ops = "+";
};

struct MeasureConfig {
  std::int64_t min_blocks = 200;
  std::int64_t max_blocks_per_prompt = 4;
  std::int64_t max_prompt_len = 64;
  std::int64_t shuffles = 1000;
  std::int64_t lipschitz_trials = 10000;
};

struct SweepConfig {
  std::vector<double> taus = default_taus();
  std::vector<std::int64_t> ks = default_ks();
  std::vector<std::string> modes = {"direct", "spec"};
  std::vector<std::int64_t> depths = {1, 2, 3, 4, 8};
};

struct PathConfig {
  std::string data = "data/train.tsv";
  std::string eval_data;  // empty -> generated from data settings
  std::string backbone = "artifacts/backbone.mrpc";
  std::string mrp = "artifacts/mrp.mrpc";
  std::string out_dir = "out";
};

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  DataConfig data;
  BackboneConfig backbone;
  MrpConfig mrp;
  TrainConfig train_backbone;
  TrainConfig train_mrp;
  DecodeConfig decode;
  MeasureConfig measure;
  SweepConfig sweep;
  PathConfig paths;

  RunConfig() {
    train_backbone.epochs = 4;
    train_mrp.epochs = 1;
  }

  Layout layout() const { return layout_for(data.max_operand, backbone.block_size); }

  void validate() const {
    backbone.validate();
    mrp.validate();
    train_backbone.validate();
    train_mrp.validate();
    decode.validate();
    require(threads >= 1, ErrorKind::invalid_config, "threads must be >= 1");
    require(backbone.vocab_size == vocab().size(), ErrorKind::invalid_config, "vocab_size must match the vocabulary");
    require(data.count >= 0 && data.eval_count >= 0, ErrorKind::invalid_config, "counts must be >= 0");
    require(!sweep.taus.empty() && !sweep.ks.empty(), ErrorKind::invalid_config, "sweep grid is empty");
    for (double t : sweep.taus) require(t > 0.0 && t <= 1.0, ErrorKind::invalid_config, "sweep tau outside (0, 1]");
    for (auto k : sweep.ks) require(k >= 0, ErrorKind::invalid_config, "sweep K must be >= 0");
    for (auto d : sweep.depths) require(d >= 1, ErrorKind::invalid_config, "sweep depth must be >= 1");
    for (const auto& m : sweep.modes) parse_mode(m);
    require(layout().length() <= backbone.max_len, ErrorKind::invalid_config, "task layout exceeds max_len");
  }
};

namespace detail {

// Reads keys of one JSON object and rejects any key left unread.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail(ErrorKind::invalid_config, "'" + where_ + "' must be a JSON object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) fail(ErrorKind::invalid_config, "unknown key '" + qualified(key) + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::invalid_config, "bad value for '" + qualified(key) + "'");
    }
  }

  const nlohmann::json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string qualified(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_train(const nlohmann::json& j, const std::string& where, TrainConfig& t) {
  ObjectReader r(j, where);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("peak_lr", t.peak_lr);
  r.get("min_lr", t.min_lr);
  r.get("weight_decay", t.weight_decay);
  r.get("grad_clip", t.grad_clip);
  r.get("t_kd", t.t_kd);
  r.get("step_weights", t.step_weights);
  std::string order = t.reveal_order == RevealOrder::confidence ? "confidence" : "lowest_index";
  r.get("reveal_order", order);
  if (order == "confidence")
    t.reveal_order = RevealOrder::confidence;
  else if (order == "lowest_index")
    t.reveal_order = RevealOrder::lowest_index;
  else
    fail(ErrorKind::invalid_config, "unknown reveal_order '" + order + "'");
  r.get("mask_pad_tail", t.corrupt.mask_pad_tail);
}

inline nlohmann::json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"peak_lr", t.peak_lr},
          {"min_lr", t.min_lr},
          {"weight_decay", t.weight_decay},
          {"grad_clip", t.grad_clip},
          {"t_kd", t.t_kd},
          {"step_weights", t.step_weights},
          {"reveal_order", t.reveal_order == RevealOrder::confidence ? "confidence" : "lowest_index"},
          {"mask_pad_tail", t.corrupt.mask_pad_tail}};
}

}  // namespace detail

// Fills `cfg` from a JSON document; keys not present keep their current values.
inline void apply_json(RunConfig& cfg, const nlohmann::json& j) {
  using detail::ObjectReader;
  ObjectReader root(j, "");
  root.get("seed", cfg.seed);
  root.get("threads", cfg.threads);
  if (auto* s = root.section("data")) {
    ObjectReader r(*s, "data");
    r.get("count", cfg.data.count);
    r.get("max_operand", cfg.data.max_operand);
    r.get("min_operand", cfg.data.min_operand);
    r.get("ops", cfg.data.ops);
    r.get("eval_count", cfg.data.eval_count);
    r.get("eval_min_operand", cfg.data.eval_min_operand);
    r.get("eval_ops", cfg.data.eval_ops);
  }
  if (auto* s = root.section("backbone")) {
    ObjectReader r(*s, "backbone");
    r.get("d_model", cfg.backbone.d_model);
    r.get("n_heads", cfg.backbone.n_heads);
    r.get("n_layers", cfg.backbone.n_layers);
    r.get("vocab_size", cfg.backbone.vocab_size);
    r.get("block_size", cfg.backbone.block_size);
    r.get("max_len", cfg.backbone.max_len);
    r.get("norm_eps", cfg.backbone.norm_eps);
    r.get("positional", cfg.backbone.positional);
  }
  if (auto* s = root.section("mrp")) {
    ObjectReader r(*s, "mrp");
    r.get("depth", cfg.mrp.depth);
    r.get("sigma_init", cfg.mrp.sigma_init);
    r.get("unroll", cfg.mrp.unroll);
    r.get("reveal_k", cfg.mrp.reveal_k);
    std::string obj = to_string(cfg.mrp.objective);
    r.get("objective", obj);
    cfg.mrp.objective = parse_objective(obj);
  }
  if (auto* s = root.section("train_backbone")) detail::read_train(*s, "train_backbone", cfg.train_backbone);
  if (auto* s = root.section("train_mrp")) detail::read_train(*s, "train_mrp", cfg.train_mrp);
  if (auto* s = root.section("decode")) {
    ObjectReader r(*s, "decode");
    std::string mode = to_string(cfg.decode.mode);
    r.get("mode", mode);
    cfg.decode.mode = parse_mode(mode);
    std::string policy = cfg.decode.policy.name();
    r.get("policy", policy);
    r.get("r", cfg.decode.policy.r);
    r.get("tau", cfg.decode.policy.tau);
    if (policy == "static")
      cfg.decode.policy.kind = Policy::Kind::static_count;
    else if (policy == "dynamic")
      cfg.decode.policy.kind = Policy::Kind::dynamic_threshold;
    else
      fail(ErrorKind::invalid_config, "unknown policy '" + policy + "' (expected static or dynamic)");
    r.get("k", cfg.decode.k);
    r.get("max_new_tokens", cfg.decode.max_new_tokens);
    r.get("strict_recompute_on_reject", cfg.decode.strict_recompute_on_reject);
  }
  if (auto* s = root.section("measure")) {
    ObjectReader r(*s, "measure");
    r.get("min_blocks", cfg.measure.min_blocks);
    r.get("max_blocks_per_prompt", cfg.measure.max_blocks_per_prompt);
    r.get("max_prompt_len", cfg.measure.max_prompt_len);
    r.get("shuffles", cfg.measure.shuffles);
    r.get("lipschitz_trials", cfg.measure.lipschitz_trials);
  }
  if (auto* s = root.section("sweep")) {
    ObjectReader r(*s, "sweep");
    r.get("taus", cfg.sweep.taus);
    r.get("ks", cfg.sweep.ks);
    r.get("modes", cfg.sweep.modes);
    r.get("depths", cfg.sweep.depths);
  }
  if (auto* s = root.section("paths")) {
    ObjectReader r(*s, "paths");
    r.get("data", cfg.paths.data);
    r.get("eval_data", cfg.paths.eval_data);
    r.get("backbone", cfg.paths.backbone);
    r.get("mrp", cfg.paths.mrp);
    r.get("out_dir", cfg.paths.out_dir);
  }
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"threads", c.threads},
      {"data",
       {{"count", c.data.count},
        {"max_operand", c.data.max_operand},
        {"min_operand", c.data.min_operand},
        {"ops", c.data.ops},
        {"eval_count", c.data.eval_count},
        {"eval_min_operand", c.data.eval_min_operand},
        {"eval_ops", c.data.eval_ops}}},
      {"backbone",
       {{"d_model", c.backbone.d_model},
        {"n_heads", c.backbone.n_heads},
        {"n_layers", c.backbone.n_layers},
        {"vocab_size", c.backbone.vocab_size},
        {"block_size", c.backbone.block_size},
        {"max_len", c.backbone.max_len},
        {"norm_eps", c.backbone.norm_eps},
        {"positional", c.backbone.positional}}},
      {"mrp",
       {{"depth", c.mrp.depth},
        {"sigma_init", c.mrp.sigma_init},
        {"unroll", c.mrp.unroll},
        {"reveal_k", c.mrp.reveal_k},
        {"objective", to_string(c.mrp.objective)}}},
      {"train_backbone", detail::train_json(c.train_backbone)},
      {"train_mrp", detail::train_json(c.train_mrp)},
      {"decode",
       {{"mode", to_string(c.decode.mode)},
        {"policy", c.decode.policy.name()},
        {"r", c.decode.policy.r},
        {"tau", c.decode.policy.tau},
        {"k", c.decode.k},
        {"max_new_tokens", c.decode.max_new_tokens},
        {"strict_recompute_on_reject", c.decode.strict_recompute_on_reject}}},
      {"measure",
       {{"min_blocks", c.measure.min_blocks},
        {"max_blocks_per_prompt", c.measure.max_blocks_per_prompt},
        {"max_prompt_len", c.measure.max_prompt_len},
        {"shuffles", c.measure.shuffles},
        {"lipschitz_trials", c.measure.lipschitz_trials}}},
      {"sweep", {{"taus", c.sweep.taus}, {"ks", c.sweep.ks}, {"modes", c.sweep.modes}, {"depths", c.sweep.depths}}},
      {"paths",
       {{"data", c.paths.data},
        {"eval_data", c.paths.eval_data},
        {"backbone", c.paths.backbone},
        {"mrp", c.paths.mrp},
        {"out_dir", c.paths.out_dir}}},
  };
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

inline RunConfig load_config_file(const std::string& path) {
  RunConfig cfg;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::invalid_config, path + ": " + e.what());
  }
  apply_json(cfg, j);
  return cfg;
}

inline constexpr std::uint64_t kEvalSeedTag = 0x6576616c;  // "eval"

inline GenOptions train_gen_options(const RunConfig& c) {
  GenOptions o;
  o.max_operand = c.data.max_operand;
  o.min_operand = c.data.min_operand;
  o.ops = c.data.ops;
  o.block_size = c.backbone.block_size;
  return o;
}

inline GenOptions eval_gen_options(const RunConfig& c) {
  GenOptions o = train_gen_options(c);
  o.min_operand = c.data.eval_min_operand;
  o.ops = c.data.eval_ops;
  return o;
}

// Held-out evaluation prompts: distinct, and never present in the training set.
inline std::vector<Example> eval_set(const RunConfig& c) {
  if (!c.paths.eval_data.empty()) return read_dataset(c.paths.eval_data, c.layout());
  return gen_distinct(mix_seed(c.seed, kEvalSeedTag), c.data.eval_count, eval_gen_options(c));
}

inline std::vector<Example> training_set(const RunConfig& c, std::int64_t count) {
  return gen_excluding(c.seed, count, train_gen_options(c), eval_set(c));
}

// MRP_SEED, when set, replaces the configured seed.
inline void apply_env(RunConfig& cfg) {
  if (const char* s = std::getenv("MRP_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0') fail(ErrorKind::invalid_config, std::string("MRP_SEED is not an integer: ") + s);
    cfg.seed = v;
  }
}

}  // namespace mrp
