#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mrp/backbone.hpp"

namespace mrp {

// What the head is trained to emit. `residual` predicts the change of the
// backbone state; `direct` predicts the next state outright (ablation).
enum class Objective { residual, direct };

inline std::string to_string(Objective o) { return o == Objective::residual ? "residual" : "direct"; }

inline Objective parse_objective(const std::string& s) {
  if (s == "residual") return Objective::residual;
  if (s == "direct") return Objective::direct;
  fail(ErrorKind::invalid_config, "unknown objective '" + s + "' (expected residual or direct)");
}

struct MrpConfig {
  std::int64_t depth = 3;
  double sigma_init = 0.2;
  std::int64_t unroll = 2;    // K_train
  std::int64_t reveal_k = 1;  // ground-truth reveals per block per unrolled step
  Objective objective = Objective::residual;

  void validate() const {
    require(depth >= 1, ErrorKind::invalid_config, "MRP depth must be >= 1");
    require(sigma_init > 0.0, ErrorKind::invalid_config, "sigma_init must be positive");
    require(unroll >= 1, ErrorKind::invalid_config, "unroll must be >= 1");
    require(reveal_k >= 1, ErrorKind::invalid_config, "reveal_k must be >= 1");
  }
};

struct MrpParams {
  Tensor w_fuse;  // 2d x d
  Tensor b_fuse;  // d
  std::vector<TransformerLayer> layers;
  Tensor out_norm;
  Tensor w_out;   // d x d, zero at init so the untrained head emits no correction

  static MrpParams init(const MrpConfig& cfg, std::int64_t d_model, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    MrpParams p;
    p.w_fuse = normal_param({2 * d_model, d_model}, cfg.sigma_init, rng);
    p.b_fuse = const_param({d_model}, 0.0);
    for (std::int64_t i = 0; i < cfg.depth; ++i)
      p.layers.push_back(TransformerLayer::init(d_model, rng, cfg.sigma_init, cfg.sigma_init));
    p.out_norm = const_param({d_model}, 1.0);
    p.w_out = const_param({d_model, d_model}, 0.0);
    return p;
  }

  NamedTensors named() const {
    NamedTensors out;
    out.emplace_back("w_fuse", w_fuse);
    out.emplace_back("b_fuse", b_fuse);
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect("layers." + std::to_string(i) + ".", out);
    out.emplace_back("out_norm", out_norm);
    out.emplace_back("w_out", w_out);
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (auto& [_, t] : named()) out.push_back(t);
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (auto& [_, t] : named()) n += t.numel();
    return n;
  }
};

struct MrpHead {
  MrpConfig config;
  MrpParams params;
};

struct ResidualOutput {
  Tensor delta_hidden;  // rows x d
  Tensor delta_logits;  // rows x V, always delta_hidden . W_lm
};

// Fuses token+position embeddings of the (post-reveal) sequences with the
// running hidden state, runs the trunk, and maps through the shared LM head.
inline ResidualOutput mrp_forward(std::span<const SequenceState> xs, const Tensor& h, const MrpHead& head,
                                  const BackboneParams& backbone, const BackboneConfig& bcfg) {
  check_batch(xs, bcfg);
  const auto n = static_cast<std::int64_t>(xs.size());
  const std::int64_t L = xs.front().length();
  if (!(h.rows() == n * L && h.cols() == bcfg.d_model)) fail(ErrorKind::invalid_shape,
          "hidden state " + shape_str(h.shape()) + " is not row-aligned with the sequences");
  const auto mask = attention_mask(L, xs.front().block_size, xs.front().prompt_len);
  const auto& p = head.params;
  Tensor z = add_row_bias(matmul(concat_cols(embed_inputs(xs, backbone.tok_emb, backbone.pos_emb), h), p.w_fuse),
                          p.b_fuse);
  for (const auto& layer : p.layers) z = layer.forward(z, n, bcfg.n_heads, mask, bcfg.norm_eps);
  Tensor delta_h = matmul(rmsnorm(z, p.out_norm, bcfg.norm_eps), p.w_out);
  Tensor delta_l = matmul(delta_h, backbone.lm_head);
  return {delta_h, delta_l};
}

inline ResidualOutput mrp_forward(const SequenceState& x, const Tensor& h, const MrpHead& head,
                                  const BackboneParams& backbone, const BackboneConfig& bcfg) {
  return mrp_forward(std::span<const SequenceState>(&x, 1), h, head, backbone, bcfg);
}

// Head as seen by the decoders: (sequence, running hidden) -> (delta_h, delta_logits).
using ResidualFn = std::function<std::pair<Array, Array>(const SequenceState&, const Array&)>;

inline ResidualFn make_residual_fn(const MrpHead& head, const BackboneParams& backbone, const BackboneConfig& bcfg) {
  return [&head, &backbone, &bcfg](const SequenceState& x, const Array& h) {
    NoGradGuard guard;
    auto out = mrp_forward(x, Tensor(h), head, backbone, bcfg);
    return std::pair<Array, Array>{out.delta_hidden.value(), out.delta_logits.value()};
  };
}

// Residual heads add onto the running state; direct heads replace it.
inline void accumulate(Array& run_h, Array& run_logits, const Array& delta_h, const Array& delta_logits,
                       Objective objective = Objective::residual) {
  require(run_h.same_shape(delta_h) && run_logits.same_shape(delta_logits), ErrorKind::invalid_shape,
          "accumulate: shape mismatch");
  if (objective == Objective::direct) {
    run_h = delta_h;
    run_logits = delta_logits;
    return;
  }
  run_h += delta_h;
  run_logits += delta_logits;
}

}  // namespace mrp
