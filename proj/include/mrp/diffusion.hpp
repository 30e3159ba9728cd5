#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mrp/ops.hpp"
#include "mrp/random.hpp"
#include "mrp/sequence.hpp"

namespace mrp {

// ---------------------------------------------------------------------------
// Corruption

struct CorruptOptions {
  // Masks the PAD tail of the response too, so training states match the
  // fully masked blocks seen at inference time.
  bool mask_pad_tail = true;
};

inline bool maskable(const SequenceState& x, std::int64_t i, const CorruptOptions& opt) {
  if (i < x.prompt_len) return false;
  return opt.mask_pad_tail || x.ids[i] != kPad;
}

// Masks each maskable response token independently with probability `rate`.
inline SequenceState corrupt_with_rate(const SequenceState& x0, double rate, Rng& rng,
                                       const CorruptOptions& opt = {}) {
  SequenceState x = x0;
  for (std::int64_t i = x.prompt_len; i < x.length(); ++i) {
    if (!maskable(x, i, opt) || x.masked[i]) continue;
    if (uniform01(rng) < rate) {
      x.ids[i] = kMask;
      x.masked[i] = 1;
    }
  }
  x.current_block = x.num_blocks();
  for (int b = x.first_response_block(); b < x.num_blocks(); ++b)
    if (x.masked_in_block(b) > 0) {
      x.current_block = b;
      break;
    }
  return x;
}

// Draws one masking rate u ~ Uniform(0, 1) for the sequence, then masks.
inline SequenceState corrupt(const SequenceState& x0, Rng& rng, const CorruptOptions& opt = {}) {
  const double u = uniform01(rng);
  return corrupt_with_rate(x0, u, rng, opt);
}

// ---------------------------------------------------------------------------
// Confidence and unmasking policies

struct ConfidenceEntry {
  std::int64_t position;
  double prob;
  int token;
};

using Confidence = std::vector<ConfidenceEntry>;

// Max softmax probability and argmax (lowest id on ties) of one logits row.
inline std::pair<double, int> max_prob(std::span<const double> logits_row) {
  std::vector<double> p(logits_row.size());
  softmax_row(logits_row, p);
  int best = 0;
  for (std::size_t v = 1; v < p.size(); ++v)
    if (p[v] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(v);
  return {p[static_cast<std::size_t>(best)], best};
}

inline int argmax_row(std::span<const double> row) {
  int best = 0;
  for (std::size_t v = 1; v < row.size(); ++v)
    if (row[v] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(v);
  return best;
}

// Confidence at the masked positions of the current block.
inline Confidence confidence_of(const Array& logits, const SequenceState& x) {
  require(logits.rows() == x.length(), ErrorKind::invalid_shape, "logits rows do not match sequence length");
  Confidence out;
  if (x.finished()) return out;
  auto [lo, hi] = x.block_range(x.current_block);
  for (std::int64_t i = lo; i < hi; ++i) {
    if (!x.masked[i]) continue;
    auto [p, tok] = max_prob(logits.row(i));
    out.push_back({i, p, tok});
  }
  return out;
}

struct Policy {
  enum class Kind { static_count, dynamic_threshold };
  Kind kind = Kind::static_count;
  std::int64_t r = 1;
  double tau = 1.0;

  static Policy fixed(std::int64_t r) { return {Kind::static_count, r, 1.0}; }
  static Policy threshold(double tau) { return {Kind::dynamic_threshold, 1, tau}; }

  void validate() const {
    if (kind == Kind::static_count)
      require(r >= 1, ErrorKind::invalid_config, "static policy needs r >= 1");
    else
      require(tau > 0.0 && tau <= 1.0, ErrorKind::invalid_config, "tau must lie in (0, 1]");
  }
  std::string name() const { return kind == Kind::static_count ? "static" : "dynamic"; }
  double param() const { return kind == Kind::static_count ? static_cast<double>(r) : tau; }
};

inline bool higher_confidence(const ConfidenceEntry& a, const ConfidenceEntry& b) {
  if (a.prob != b.prob) return a.prob > b.prob;
  return a.position < b.position;
}

// The min(r, n) most confident entries, ties to the lowest position; result in position order.
inline Confidence select_static(const Confidence& conf, std::int64_t r) {
  require(r >= 1, ErrorKind::invalid_config, "select_static needs r >= 1");
  Confidence sorted = conf;
  std::stable_sort(sorted.begin(), sorted.end(), higher_confidence);
  sorted.resize(std::min<std::size_t>(sorted.size(), static_cast<std::size_t>(r)));
  std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.position < b.position; });
  return sorted;
}

// Every entry strictly above tau; if none, the single most confident one.
inline Confidence select_dynamic(const Confidence& conf, double tau) {
  Confidence out;
  for (const auto& e : conf)
    if (e.prob > tau) out.push_back(e);
  if (out.empty() && !conf.empty()) out.push_back(*std::min_element(conf.begin(), conf.end(), higher_confidence));
  return out;
}

inline Confidence select(const Confidence& conf, const Policy& policy) {
  return policy.kind == Policy::Kind::static_count ? select_static(conf, policy.r) : select_dynamic(conf, policy.tau);
}

// Moves current_block past every block without masks.
inline void advance_block(SequenceState& x) {
  while (!x.finished() && x.masked_in_block(x.current_block) == 0) ++x.current_block;
}

inline SequenceState reveal(SequenceState x, std::span<const std::int64_t> positions, std::span<const int> tokens) {
  require(positions.size() == tokens.size(), ErrorKind::invalid_shape, "reveal: positions/tokens length mismatch");
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto i = positions[k];
    if (!(i >= 0 && i < x.length() && x.masked[i])) fail(ErrorKind::contract_violation,
            "reveal: position " + std::to_string(i) + " is not masked");
    require(tokens[k] != kMask, ErrorKind::contract_violation, "reveal: cannot reveal the mask token");
    x.ids[i] = tokens[k];
    x.masked[i] = 0;
  }
  advance_block(x);
  return x;
}

inline SequenceState reveal(SequenceState x, const Confidence& chosen) {
  std::vector<std::int64_t> pos;
  std::vector<int> tok;
  for (const auto& e : chosen) {
    pos.push_back(e.position);
    tok.push_back(e.token);
  }
  return reveal(std::move(x), pos, tok);
}

// ---------------------------------------------------------------------------
// Trace records

enum class StepKind { backbone, mrp };

struct DraftRecord {
  std::int64_t position;
  int token;
  int mrp_step;       // 1-based MRP round that drafted it
  double confidence;  // max softmax of the accumulated logits row
};

struct StepRecord {
  StepKind kind = StepKind::backbone;
  bool verification = false;  // backbone forward over a drafted sequence
  SequenceState input;        // state the forward ran on
  Array hidden;               // backbone h, or accumulated h after an MRP round
  Array logits;               // backbone logits, or accumulated logits after an MRP round
  std::vector<std::int64_t> revealed;
  std::vector<int> revealed_tokens;
  std::vector<DraftRecord> drafts;
  std::vector<std::int64_t> accepted;
  std::vector<std::int64_t> rejected;
};

struct DecodeTrace {
  std::vector<StepRecord> steps;

  std::int64_t count(StepKind kind) const {
    return std::count_if(steps.begin(), steps.end(), [kind](const StepRecord& s) { return s.kind == kind; });
  }
};

struct DecodeStats {
  std::int64_t backbone_forwards = 0;
  std::int64_t mrp_forwards = 0;
  std::int64_t tokens_generated = 0;
  std::int64_t drafts_proposed = 0;
  std::int64_t drafts_accepted = 0;
  std::vector<std::int64_t> block_steps;  // backbone forwards per decoded block

  DecodeStats& operator+=(const DecodeStats& o) {
    backbone_forwards += o.backbone_forwards;
    mrp_forwards += o.mrp_forwards;
    tokens_generated += o.tokens_generated;
    drafts_proposed += o.drafts_proposed;
    drafts_accepted += o.drafts_accepted;
    block_steps.insert(block_steps.end(), o.block_steps.begin(), o.block_steps.end());
    return *this;
  }
};

// Backbone as seen by the decoders: sequence -> (hidden, logits).
using BackboneFn = std::function<std::pair<Array, Array>(const SequenceState&)>;

struct TraceOptions {
  bool record = true;          // keep StepRecords at all
  bool record_tensors = true;  // keep h and logits in them
};

inline void push_record(DecodeTrace* trace, const TraceOptions& topt, StepRecord rec) {
  if (!trace || !topt.record) return;
  if (!topt.record_tensors) {
    rec.hidden = Array();
    rec.logits = Array();
  }
  trace->steps.push_back(std::move(rec));
}

// Backbone-only denoising of the current block until it is clean.
inline SequenceState denoise_block_baseline(const BackboneFn& f, SequenceState x, const Policy& policy,
                                            DecodeStats* stats = nullptr, DecodeTrace* trace = nullptr,
                                            const TraceOptions& topt = {}) {
  policy.validate();
  require(!x.finished(), ErrorKind::contract_violation, "no block left to decode");
  const int block = x.current_block;
  require(x.masked_in_block(block) == static_cast<std::int64_t>(x.block_range(block).second - x.block_range(block).first),
          ErrorKind::contract_violation, "current block is not fully masked");
  std::int64_t forwards = 0;
  while (!x.finished() && x.current_block == block) {
    auto [h, logits] = f(x);
    ++forwards;
    const Confidence chosen = select(confidence_of(logits, x), policy);
    StepRecord rec{StepKind::backbone, false, x, std::move(h), std::move(logits), {}, {}, {}, {}, {}};
    for (const auto& e : chosen) {
      rec.revealed.push_back(e.position);
      rec.revealed_tokens.push_back(e.token);
    }
    x = reveal(std::move(x), chosen);
    if (stats) stats->tokens_generated += static_cast<std::int64_t>(chosen.size());
    push_record(trace, topt, std::move(rec));
  }
  if (stats) {
    stats->backbone_forwards += forwards;
    stats->block_steps.push_back(forwards);
  }
  return x;
}

// True once an EOS sits anywhere in the decoded response.
inline bool response_has_eos(const SequenceState& x) {
  for (std::int64_t i = x.prompt_len; i < x.length(); ++i)
    if (!x.masked[i] && x.ids[i] == kEos) return true;
  return false;
}

// After EOS, later blocks are filled with PAD without running the model.
inline void pad_after_eos(SequenceState& x) {
  if (x.finished() || !response_has_eos(x)) return;
  auto [lo, hi] = x.block_range(x.current_block);
  if (x.masked_in_block(x.current_block) != hi - lo) return;  // only whole untouched blocks
  for (std::int64_t i = lo; i < x.length(); ++i) {
    x.ids[i] = kPad;
    x.masked[i] = 0;
  }
  x.current_block = x.num_blocks();
}

}  // namespace mrp
