#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mrp/layers.hpp"
#include "mrp/sequence.hpp"

namespace mrp {

struct BackboneConfig {
  std::int64_t d_model = 64;
  std::int64_t n_heads = 4;
  std::int64_t n_layers = 4;
  std::int64_t vocab_size = 44;
  std::int64_t block_size = 8;
  std::int64_t max_len = 128;
  double norm_eps = 1e-6;
  std::string positional = "learned";

  void validate() const {
    require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, ErrorKind::invalid_config,
            "d_model must be a positive multiple of n_heads");
    require(n_layers >= 1, ErrorKind::invalid_config, "n_layers must be >= 1");
    require(vocab_size > 4 && vocab_size <= 64, ErrorKind::invalid_config, "vocab_size must be in (4, 64]");
    require(block_size >= 1 && max_len % block_size == 0, ErrorKind::invalid_config,
            "block_size must divide max_len");
    require(norm_eps > 0.0, ErrorKind::invalid_config, "norm_eps must be positive");
    require(positional == "learned", ErrorKind::invalid_config, "only learned positional embeddings are supported");
  }
};

// Row-major L x L allow-matrix: a query attends to every key in its own block
// and in earlier blocks.
inline std::vector<char> attention_mask(std::int64_t L, std::int64_t B, std::int64_t prompt_len) {
  require(B >= 1 && prompt_len >= 0 && prompt_len <= L, ErrorKind::invalid_config, "bad attention-mask arguments");
  if (!((L - prompt_len) % B == 0)) fail(ErrorKind::invalid_config,
          "response region of length " + std::to_string(L - prompt_len) + " is not a multiple of block size " +
              std::to_string(B));
  std::vector<char> mask(static_cast<std::size_t>(L * L));
  for (std::int64_t q = 0; q < L; ++q)
    for (std::int64_t k = 0; k < L; ++k)
      mask[q * L + k] = block_index(k, prompt_len, B) <= block_index(q, prompt_len, B) ? 1 : 0;
  return mask;
}

struct BackboneParams {
  Tensor tok_emb;   // V x d, row kMask is the mask embedding
  Tensor pos_emb;   // max_len x d
  std::vector<TransformerLayer> layers;
  Tensor final_norm;
  Tensor lm_head;   // d x V, no bias

  static BackboneParams init(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const std::int64_t d = cfg.d_model;
    const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double out_std = in_std / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    BackboneParams p;
    p.tok_emb = normal_param({cfg.vocab_size, d}, 1.0, rng);
    p.pos_emb = normal_param({cfg.max_len, d}, 1.0, rng);
    for (std::int64_t i = 0; i < cfg.n_layers; ++i) p.layers.push_back(TransformerLayer::init(d, rng, in_std, out_std));
    p.final_norm = const_param({d}, 1.0);
    p.lm_head = normal_param({d, cfg.vocab_size}, 0.02, rng);
    return p;
  }

  NamedTensors named() const {
    NamedTensors out;
    out.emplace_back("tok_emb", tok_emb);
    out.emplace_back("pos_emb", pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect("layers." + std::to_string(i) + ".", out);
    out.emplace_back("final_norm", final_norm);
    out.emplace_back("lm_head", lm_head);
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (auto& [_, t] : named()) out.push_back(t);
    return out;
  }

  // Toggles gradient tracking on every backbone tensor (handles share nodes).
  void set_trainable(bool on) const {
    for (auto [_, t] : named()) t.set_requires_grad(on);
  }
};

struct ForwardOutput {
  Tensor hidden;  // (N*L) x d, post final norm
  Tensor logits;  // (N*L) x V
};

inline void check_batch(std::span<const SequenceState> xs, const BackboneConfig& cfg) {
  require(!xs.empty(), ErrorKind::invalid_shape, "empty batch");
  const auto& x0 = xs.front();
  if (!(x0.length() <= cfg.max_len)) fail(ErrorKind::invalid_shape,
          "sequence length " + std::to_string(x0.length()) + " exceeds max_len " + std::to_string(cfg.max_len));
  for (const auto& x : xs) {
    require(x.length() == x0.length() && x.prompt_len == x0.prompt_len && x.block_size == x0.block_size,
            ErrorKind::invalid_shape, "batched sequences must share one layout");
    require(x.ids.size() == x.masked.size(), ErrorKind::contract_violation, "ids/masked length mismatch");
    for (std::int64_t i = 0; i < x.length(); ++i) {
      if (!(x.ids[i] >= 0 && x.ids[i] < cfg.vocab_size)) fail(ErrorKind::invalid_shape,
              "token id " + std::to_string(x.ids[i]) + " out of vocabulary");
      if (!((x.masked[i] != 0) == (x.ids[i] == kMask))) fail(ErrorKind::contract_violation,
              "mask flag disagrees with id at position " + std::to_string(i));
    }
  }
}

// Token plus positional embedding of a packed batch.
inline Tensor embed_inputs(std::span<const SequenceState> xs, const Tensor& tok_emb, const Tensor& pos_emb) {
  const std::int64_t L = xs.front().length();
  std::vector<int> ids, pos;
  ids.reserve(xs.size() * static_cast<std::size_t>(L));
  for (const auto& x : xs)
    for (std::int64_t i = 0; i < L; ++i) {
      ids.push_back(x.ids[i]);
      pos.push_back(static_cast<int>(i));
    }
  return add(embedding(tok_emb, ids), embedding(pos_emb, pos));
}

// Batched forward over sequences sharing one layout.
inline ForwardOutput forward(std::span<const SequenceState> xs, const BackboneParams& params,
                             const BackboneConfig& cfg) {
  check_batch(xs, cfg);
  const auto& x0 = xs.front();
  const auto mask = attention_mask(x0.length(), x0.block_size, x0.prompt_len);
  const auto n = static_cast<std::int64_t>(xs.size());
  Tensor h = embed_inputs(xs, params.tok_emb, params.pos_emb);
  for (const auto& layer : params.layers) h = layer.forward(h, n, cfg.n_heads, mask, cfg.norm_eps);
  Tensor hidden = rmsnorm(h, params.final_norm, cfg.norm_eps);
  Tensor logits = matmul(hidden, params.lm_head);
  return {hidden, logits};
}

inline ForwardOutput forward(const SequenceState& x, const BackboneParams& params, const BackboneConfig& cfg) {
  return forward(std::span<const SequenceState>(&x, 1), params, cfg);
}

// Untracked single-sequence forward returning plain arrays.
inline std::pair<Array, Array> forward_values(const SequenceState& x, const BackboneParams& params,
                                              const BackboneConfig& cfg) {
  NoGradGuard guard;
  auto out = forward(x, params, cfg);
  return {out.hidden.value(), out.logits.value()};
}

// Per-row embedding distances between two token sequences; zero where equal.
inline std::vector<double> embedding_row_distances(const SequenceState& a, const SequenceState& b,
                                                   const BackboneParams& params) {
  require(a.length() == b.length(), ErrorKind::invalid_shape, "perturbation_norm: sequences differ in length");
  const Array& e = params.tok_emb.value();
  std::vector<double> dist(static_cast<std::size_t>(a.length()), 0.0);
  for (std::int64_t i = 0; i < a.length(); ++i) {
    if (a.ids[i] == b.ids[i]) continue;
    auto ra = e.row(a.ids[i]);
    auto rb = e.row(b.ids[i]);
    double s = 0.0;
    for (std::size_t c = 0; c < ra.size(); ++c) s += (rb[c] - ra[c]) * (rb[c] - ra[c]);
    dist[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  return dist;
}

// Frobenius norm of the token-embedding difference between two states.
inline double perturbation_norm(const SequenceState& a, const SequenceState& b, const BackboneParams& params) {
  double s = 0.0;
  for (double d : embedding_row_distances(a, b, params)) s += d * d;
  return std::sqrt(s);
}

}  // namespace mrp
