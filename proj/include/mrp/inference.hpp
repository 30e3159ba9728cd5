#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "mrp/corpus.hpp"
#include "mrp/diffusion.hpp"
#include "mrp/mrp_head.hpp"

namespace mrp {

enum class DecodeMode { baseline, direct, speculative };

inline std::string to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::baseline: return "baseline";
    case DecodeMode::direct: return "direct";
    case DecodeMode::speculative: return "spec";
  }
  return "?";
}

inline DecodeMode parse_mode(const std::string& s) {
  if (s == "baseline" || s == "base") return DecodeMode::baseline;
  if (s == "direct") return DecodeMode::direct;
  if (s == "spec" || s == "speculative") return DecodeMode::speculative;
  fail(ErrorKind::invalid_config, "unknown decode mode '" + s + "' (expected baseline, direct or spec)");
}

struct DecodeConfig {
  DecodeMode mode = DecodeMode::baseline;
  Policy policy = Policy::fixed(1);
  std::int64_t k = 0;  // MRP rounds per backbone forward
  std::int64_t max_new_tokens = 8;
  // Speculative mode: drop the reused verification forward when any draft was rejected.
  bool strict_recompute_on_reject = false;

  void validate() const {
    policy.validate();
    require(k >= 0, ErrorKind::invalid_config, "K must be >= 0");
    require(max_new_tokens >= 1, ErrorKind::invalid_config, "max_new_tokens must be >= 1");
  }
};

// The MRP side of decoding: the head's forward plus how its output combines.
struct ResidualModel {
  ResidualFn fn;
  Objective objective = Objective::residual;
};

namespace detail {

inline void require_fresh_block(const SequenceState& x) {
  require(!x.finished(), ErrorKind::contract_violation, "no block left to decode");
  auto [lo, hi] = x.block_range(x.current_block);
  require(x.masked_in_block(x.current_block) == hi - lo, ErrorKind::contract_violation,
          "current block is not fully masked");
}

inline void note_reveals(StepRecord& rec, const Confidence& chosen) {
  for (const auto& e : chosen) {
    rec.revealed.push_back(e.position);
    rec.revealed_tokens.push_back(e.token);
  }
}

}  // namespace detail

// Backbone forward, policy unmask, then K rounds of head correction each
// followed by a policy unmask on the corrected logits. No verification.
inline SequenceState direct_decode_block(const BackboneFn& f, const ResidualModel& g, SequenceState x,
                                         const DecodeConfig& cfg, DecodeStats* stats = nullptr,
                                         DecodeTrace* trace = nullptr, const TraceOptions& topt = {}) {
  cfg.validate();
  detail::require_fresh_block(x);
  const int block = x.current_block;
  DecodeStats local;
  auto in_block = [&] { return !x.finished() && x.current_block == block; };
  while (in_block()) {
    auto [h, logits] = f(x);
    ++local.backbone_forwards;
    Confidence chosen = select(confidence_of(logits, x), cfg.policy);
    StepRecord rec{StepKind::backbone, false, x, h, logits, {}, {}, {}, {}, {}};
    detail::note_reveals(rec, chosen);
    x = reveal(std::move(x), chosen);
    local.tokens_generated += static_cast<std::int64_t>(chosen.size());
    push_record(trace, topt, std::move(rec));

    for (std::int64_t round = 1; round <= cfg.k && in_block(); ++round) {
      auto [dh, dl] = g.fn(x, h);
      ++local.mrp_forwards;
      accumulate(h, logits, dh, dl, g.objective);
      chosen = select(confidence_of(logits, x), cfg.policy);
      StepRecord mrec{StepKind::mrp, false, x, h, logits, {}, {}, {}, {}, {}};
      detail::note_reveals(mrec, chosen);
      x = reveal(std::move(x), chosen);
      local.tokens_generated += static_cast<std::int64_t>(chosen.size());
      push_record(trace, topt, std::move(mrec));
    }
  }
  local.block_steps.push_back(local.backbone_forwards);
  if (stats) *stats += local;
  return x;
}

struct Verdict {
  std::vector<std::int64_t> accepted;
  std::vector<std::int64_t> rejected;
};

// Position-wise check of drafts against the verification logits: a draft
// stands iff the backbone's argmax at its row equals the drafted token.
inline Verdict verify(std::span<const DraftRecord> drafts, const Array& verify_logits,
                      std::span<const std::int64_t> policy_revealed = {}) {
  Verdict v;
  std::vector<std::int64_t> seen;
  for (const auto& d : drafts) {
    if (!(std::find(policy_revealed.begin(), policy_revealed.end(), d.position) == policy_revealed.end())) fail(ErrorKind::contract_violation,
            "draft at position " + std::to_string(d.position) + " was already unmasked by the policy");
    if (!(std::find(seen.begin(), seen.end(), d.position) == seen.end())) fail(ErrorKind::contract_violation,
            "position " + std::to_string(d.position) + " drafted twice");
    require(d.position >= 0 && d.position < verify_logits.rows(), ErrorKind::invalid_shape, "draft out of range");
    seen.push_back(d.position);
    (argmax_row(verify_logits.row(d.position)) == d.token ? v.accepted : v.rejected).push_back(d.position);
  }
  return v;
}

// Reusable backbone output carried between speculative iterations.
struct CachedForward {
  SequenceState input;
  Array hidden;
  Array logits;
};

// Backbone forward (or reuse of the previous verification), policy unmask,
// K single-token drafts from the corrected logits, one verification forward,
// position-wise accept/reject. The verification output seeds the next
// iteration.
inline SequenceState spec_decode_block(const BackboneFn& f, const ResidualModel& g, SequenceState x,
                                       const DecodeConfig& cfg, DecodeStats* stats = nullptr,
                                       DecodeTrace* trace = nullptr, const TraceOptions& topt = {},
                                       std::optional<CachedForward>* carry = nullptr) {
  cfg.validate();
  detail::require_fresh_block(x);
  const int block = x.current_block;
  DecodeStats local;
  std::optional<CachedForward> cache;
  // The carried forward ran before the previous block was marked done, so only tokens and masks are compared.
  if (carry && *carry && (*carry)->input.ids == x.ids && (*carry)->input.masked == x.masked)
    cache = std::move(**carry);
  if (carry) carry->reset();
  auto in_block = [&] { return !x.finished() && x.current_block == block; };

  while (in_block()) {
    Array h, logits;
    if (cache) {
      h = std::move(cache->hidden);
      logits = std::move(cache->logits);
      cache.reset();
    } else {
      std::tie(h, logits) = f(x);
      ++local.backbone_forwards;
      push_record(trace, topt, StepRecord{StepKind::backbone, false, x, h, logits, {}, {}, {}, {}, {}});
    }
    const Confidence chosen = select(confidence_of(logits, x), cfg.policy);
    x = reveal(std::move(x), chosen);
    local.tokens_generated += static_cast<std::int64_t>(chosen.size());
    if (trace && topt.record && !trace->steps.empty()) detail::note_reveals(trace->steps.back(), chosen);

    std::vector<std::int64_t> policy_positions;
    for (const auto& e : chosen) policy_positions.push_back(e.position);

    // Drafting writes tokens into x without committing the block.
    std::vector<DraftRecord> drafts;
    for (std::int64_t round = 1; round <= cfg.k && x.current_block == block && x.masked_in_block(block) > 0;
         ++round) {
      auto [dh, dl] = g.fn(x, h);
      ++local.mrp_forwards;
      accumulate(h, logits, dh, dl, g.objective);
      const Confidence best = select_static(confidence_of(logits, x), 1);
      const auto& e = best.front();
      drafts.push_back({e.position, e.token, static_cast<int>(round), e.prob});
      StepRecord mrec{StepKind::mrp, false, x, h, logits, {}, {}, {drafts.back()}, {}, {}};
      x.ids[e.position] = e.token;
      x.masked[e.position] = 0;
      push_record(trace, topt, std::move(mrec));
    }
    local.drafts_proposed += static_cast<std::int64_t>(drafts.size());

    const bool block_open = x.masked_in_block(block) > 0;
    if (drafts.empty() && !block_open) break;  // policy finished the block; nothing to verify

    SequenceState verified_input = x;
    auto [vh, vl] = f(x);
    ++local.backbone_forwards;
    const Verdict verdict = verify(drafts, vl, policy_positions);
    for (auto p : verdict.rejected) {
      x.ids[p] = kMask;
      x.masked[p] = 1;
    }
    local.drafts_accepted += static_cast<std::int64_t>(verdict.accepted.size());
    local.tokens_generated += static_cast<std::int64_t>(verdict.accepted.size());
    advance_block(x);

    StepRecord vrec{StepKind::backbone, true, verified_input, vh, vl, {}, {}, drafts, verdict.accepted,
                    verdict.rejected};
    push_record(trace, topt, std::move(vrec));
    if (!(cfg.strict_recompute_on_reject && !verdict.rejected.empty()))
      cache = CachedForward{std::move(verified_input), std::move(vh), std::move(vl)};
  }
  if (carry && cache) *carry = std::move(cache);
  local.block_steps.push_back(local.backbone_forwards);
  if (stats) *stats += local;
  return x;
}

// Decodes every remaining block of x with the configured mode, stopping at EOS.
inline SequenceState decode(const BackboneFn& f, const ResidualModel* g, SequenceState x, const DecodeConfig& cfg,
                            DecodeStats* stats = nullptr, DecodeTrace* trace = nullptr,
                            const TraceOptions& topt = {}) {
  cfg.validate();
  if (!(cfg.mode == DecodeMode::baseline || g != nullptr)) fail(ErrorKind::invalid_config,
          to_string(cfg.mode) + " mode needs an MRP head");
  std::optional<CachedForward> carry;
  while (!x.finished()) {
    switch (cfg.mode) {
      case DecodeMode::baseline: x = denoise_block_baseline(f, std::move(x), cfg.policy, stats, trace, topt); break;
      case DecodeMode::direct: x = direct_decode_block(f, *g, std::move(x), cfg, stats, trace, topt); break;
      case DecodeMode::speculative:
        x = spec_decode_block(f, *g, std::move(x), cfg, stats, trace, topt, &carry);
        break;
    }
    pad_after_eos(x);
  }
  return x;
}

inline SequenceState direct_decode(const BackboneFn& f, const ResidualModel& g, SequenceState x,
                                   const DecodeConfig& cfg, DecodeStats* stats = nullptr,
                                   DecodeTrace* trace = nullptr) {
  DecodeConfig c = cfg;
  c.mode = DecodeMode::direct;
  return decode(f, &g, std::move(x), c, stats, trace);
}

inline SequenceState spec_decode(const BackboneFn& f, const ResidualModel& g, SequenceState x,
                                 const DecodeConfig& cfg, DecodeStats* stats = nullptr,
                                 DecodeTrace* trace = nullptr) {
  DecodeConfig c = cfg;
  c.mode = DecodeMode::speculative;
  return decode(f, &g, std::move(x), c, stats, trace);
}

// Prompt ids laid out for decoding: BOS + text, PAD-filled to prompt_len.
inline std::vector<int> prompt_ids(const std::string& prompt, std::int64_t prompt_len) {
  std::vector<int> ids{kBos};
  for (int id : vocab().tokenize(prompt)) ids.push_back(id);
  if (!(static_cast<std::int64_t>(ids.size()) <= prompt_len)) fail(ErrorKind::invalid_config,
          "prompt '" + prompt + "' is longer than the prompt region (" + std::to_string(prompt_len) + ")");
  ids.resize(static_cast<std::size_t>(prompt_len), kPad);
  return ids;
}

struct GenerateResult {
  std::string text;
  SequenceState state;
  DecodeStats stats;
};

inline GenerateResult generate(const BackboneFn& f, const ResidualModel* g, const std::string& prompt,
                               const Layout& layout, std::int64_t max_len, const DecodeConfig& cfg,
                               DecodeTrace* trace = nullptr, const TraceOptions& topt = {}) {
  const auto ids = prompt_ids(prompt, layout.prompt_len);
  const std::int64_t response = round_up(std::max<std::int64_t>(cfg.max_new_tokens, 1), layout.block_size);
  if (!(layout.prompt_len + response <= max_len)) fail(ErrorKind::invalid_config,
          "prompt plus response (" + std::to_string(layout.prompt_len + response) + ") exceeds max_len " +
              std::to_string(max_len));
  GenerateResult out;
  out.state = decode(f, g, make_decode_state(ids, response, layout.block_size), cfg, &out.stats, trace, topt);
  out.text = response_text(out.state);
  return out;
}

}  // namespace mrp
