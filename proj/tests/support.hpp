#pragma once

// Test helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "mrp/inference.hpp"
#include "mrp/ops.hpp"
#include "mrp/random.hpp"

namespace mrp::testing {

inline Array random_array(Shape shape, Rng& rng, double stddev = 1.0) {
  Array a(std::move(shape));
  for (double& v : a.span()) v = normal(rng, 0.0, stddev);
  return a;
}

// Weighted sum with fixed random weights, so every output entry matters.
inline Tensor probe(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(t, Tensor(random_array(t.shape(), rng))));
}

// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over every
// entry of every input, with central differences of step h.
inline double max_grad_rel_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                                 double h = 1e-5, double floor = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss_fn());
  double worst = 0.0;
  for (auto& t : inputs) {
    const Array analytic = t.grad();
    Array& w = t.mutable_value();
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      const double keep = w[i];
      double fp, fm;
      {
        NoGradGuard g;
        w[i] = keep + h;
        fp = loss_fn().item();
        w[i] = keep - h;
        fm = loss_fn().item();
      }
      w[i] = keep;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

// Oracle head built from a recorded baseline trace: at every state it returns
// the change that turns the running state into the recorded backbone output.
inline ResidualModel recorded_oracle(const DecodeTrace& trace, const Tensor& lm_head) {
  auto table = std::make_shared<std::vector<std::pair<SequenceState, std::pair<Array, Array>>>>();
  for (const auto& s : trace.steps) table->push_back({s.input, {s.hidden, s.logits}});
  ResidualFn fn = [table, &lm_head](const SequenceState& x, const Array& h) {
    for (const auto& [state, out] : *table)
      if (state == x) {
        NoGradGuard g;
        const Array run_logits = matmul(Tensor(h), lm_head).value();
        return std::pair<Array, Array>{out.first - h, out.second - run_logits};
      }
    fail(ErrorKind::contract_violation, "oracle has no record for this state");
  };
  return {fn, Objective::residual};
}

struct SoundnessReport {
  std::int64_t verifications = 0;
  std::int64_t accepted = 0;
  std::int64_t violations = 0;
};

// Replays every verification forward of a speculative trace: recorded logits
// must match a fresh forward, every accepted draft must be that forward's
// argmax and survive into the output, and every rejected draft must not be.
inline SoundnessReport replay_soundness(const BackboneFn& f, const DecodeTrace& trace, const SequenceState& out) {
  SoundnessReport rep;
  for (const auto& s : trace.steps) {
    if (!s.verification) continue;
    ++rep.verifications;
    const Array l = f(s.input).second;
    if (!(l == s.logits)) ++rep.violations;
    for (auto p : s.accepted) {
      ++rep.accepted;
      if (argmax_row(l.row(p)) != s.input.ids[p] || out.ids[p] != s.input.ids[p]) ++rep.violations;
    }
    for (auto p : s.rejected)
      if (argmax_row(l.row(p)) == s.input.ids[p]) ++rep.violations;
  }
  return rep;
}

// Response positions in whole blocks that were PAD-filled after EOS without decoding.
inline std::int64_t pad_filled_positions(const DecodeTrace& trace, const SequenceState& out) {
  std::int64_t n = 0;
  for (int b = out.first_response_block(); b < out.num_blocks(); ++b) {
    auto [lo, hi] = out.block_range(b);
    bool all_pad = true;
    for (auto i = lo; i < hi; ++i) all_pad = all_pad && out.ids[i] == kPad;
    bool decoded = false;
    for (const auto& s : trace.steps) decoded = decoded || s.input.current_block == b;
    if (all_pad && !decoded) n += hi - lo;
  }
  return n;
}

}  // namespace mrp::testing
