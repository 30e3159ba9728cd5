#include <cmath>

#include "mrp/diffusion.hpp"
#include "test_util.hpp"

namespace mrp {
namespace {

Confidence make_conf(std::vector<double> probs) {
  Confidence c;
  for (std::size_t i = 0; i < probs.size(); ++i) c.push_back({static_cast<std::int64_t>(i), probs[i], 4});
  return c;
}

std::vector<std::int64_t> positions(const Confidence& c) {
  std::vector<std::int64_t> out;
  for (const auto& e : c) out.push_back(e.position);
  return out;
}

SequenceState response_state() {
  SequenceState x0 = testing::clean_state(3);
  x0.ids[10] = kPad;
  x0.ids[11] = kPad;
  return x0;
}

TEST(Corrupt, RateZeroIsIdentity) {
  Rng rng(1);
  const SequenceState x0 = response_state();
  const SequenceState x = corrupt_with_rate(x0, 0.0, rng);
  EXPECT_EQ(x.ids, x0.ids);
  EXPECT_EQ(x.masked_count(), 0);
}

TEST(Corrupt, RateOneMasksEveryResponseToken) {
  Rng rng(1);
  const SequenceState x0 = response_state();
  CorruptOptions strict;
  strict.mask_pad_tail = false;
  const SequenceState x = corrupt_with_rate(x0, 1.0, rng, strict);
  for (std::int64_t i = 0; i < x.length(); ++i) {
    const bool expect = i >= x.prompt_len && x0.ids[i] != kPad;
    EXPECT_EQ(static_cast<bool>(x.masked[i]), expect) << i;
  }
  const SequenceState all = corrupt_with_rate(x0, 1.0, rng);
  EXPECT_EQ(all.masked_count(), all.length() - all.prompt_len);
  check_state(all);
}

TEST(Corrupt, HalfRateIsBinomial) {
  Rng rng(42);
  const SequenceState x0 = testing::clean_state(5);
  const std::int64_t per = x0.length() - x0.prompt_len;
  const int trials = 10000;
  std::int64_t masked = 0;
  for (int t = 0; t < trials; ++t) masked += corrupt_with_rate(x0, 0.5, rng).masked_count();
  const double n = static_cast<double>(per) * trials;
  const double sigma = std::sqrt(n * 0.25);
  EXPECT_LT(std::abs(static_cast<double>(masked) - 0.5 * n), 3.0 * sigma);
}

TEST(Corrupt, PromptNeverMaskedAndStateValid) {
  Rng rng(7);
  const SequenceState x0 = testing::clean_state(9);
  for (int t = 0; t < 200; ++t) {
    const SequenceState x = corrupt(x0, rng);
    check_state(x);
    for (std::int64_t i = 0; i < x.prompt_len; ++i) EXPECT_FALSE(x.masked[i]);
    for (int b = x.first_response_block(); b < x.current_block; ++b) EXPECT_EQ(x.masked_in_block(b), 0);
  }
}

TEST(Confidence, PeakedRow) {
  SequenceState x = testing::masked_state(1, 2, 1);
  Array logits(Shape{3, 3}, 0.0);
  logits.at(1, 0) = 10.0;
  const Confidence c = confidence_of(logits, x);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].token, 0);
  EXPECT_NEAR(c[0].prob, std::exp(10.0) / (std::exp(10.0) + 2.0), 1e-15);
  EXPECT_NEAR(c[0].prob, 0.9999, 1e-4);
}

TEST(Confidence, UniformRowTiesToLowestToken) {
  SequenceState x = testing::masked_state(1, 1, 1);
  const Confidence c = confidence_of(Array(Shape{2, 4}, 0.0), x);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].prob, 0.25);
  EXPECT_EQ(c[0].token, 0);
}

TEST(Confidence, OnlyMaskedPositionsOfCurrentBlock) {
  SequenceState x = testing::masked_state(2, 4, 2);
  x = reveal(x, std::vector<std::int64_t>{3}, std::vector<int>{5});
  const Confidence c = confidence_of(Array(Shape{x.length(), 6}, 0.0), x);
  EXPECT_EQ(positions(c), (std::vector<std::int64_t>{2, 4, 5}));
}

TEST(Confidence, ProbabilitiesInUnitInterval) {
  Rng rng(4);
  SequenceState x = testing::masked_state(2, 4, 1);
  for (int t = 0; t < 100; ++t) {
    for (const auto& e : confidence_of(testing::random_array({x.length(), 10}, rng, 30.0), x)) {
      EXPECT_GT(e.prob, 0.0);
      EXPECT_LE(e.prob, 1.0);
    }
  }
}

TEST(SelectStatic, Examples) {
  EXPECT_EQ(positions(select_static(make_conf({0.9, 0.3, 0.8}), 2)), (std::vector<std::int64_t>{0, 2}));
  EXPECT_EQ(positions(select_static(make_conf({0.9, 0.3, 0.8}), 5)), (std::vector<std::int64_t>{0, 1, 2}));
  EXPECT_EQ(positions(select_static(make_conf({0.1, 0.5, 0.2, 0.5}), 1)), (std::vector<std::int64_t>{1}));
}

TEST(SelectDynamic, Examples) {
  EXPECT_EQ(positions(select_dynamic(make_conf({0.95, 0.5, 0.99}), 0.9)), (std::vector<std::int64_t>{0, 2}));
  EXPECT_EQ(positions(select_dynamic(make_conf({0.5, 0.6}), 0.9)), (std::vector<std::int64_t>{1}));
  EXPECT_EQ(positions(select_dynamic(make_conf({1.0, 1.0}), 1.0)), (std::vector<std::int64_t>{0}));
  EXPECT_TRUE(select_dynamic({}, 0.5).empty());
}

TEST(SelectDynamic, TauOneEqualsStaticOne) {
  Rng rng(8);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> probs;
    const auto n = 1 + uniform_index(rng, 8);
    for (std::uint64_t i = 0; i < n; ++i) probs.push_back(uniform_index(rng, 4) == 0 ? 1.0 : uniform01(rng));
    const Confidence c = make_conf(probs);
    EXPECT_EQ(positions(select_dynamic(c, 1.0)), positions(select_static(c, 1)));
  }
}

TEST(Reveal, EmptySetIsNoop) {
  const SequenceState x = testing::masked_state(2, 4, 2);
  EXPECT_EQ(reveal(x, std::vector<std::int64_t>{}, std::vector<int>{}), x);
}

TEST(Reveal, CountsAndBlockAdvance) {
  SequenceState x = testing::masked_state(2, 4, 2);
  const auto before = x.masked_count();
  SequenceState y = reveal(x, std::vector<std::int64_t>{2, 4}, std::vector<int>{5, 6});
  EXPECT_EQ(y.masked_count(), before - 2);
  EXPECT_EQ(y.current_block, 1);
  for (std::int64_t i = 0; i < x.length(); ++i)
    if (i != 2 && i != 4) {
      EXPECT_EQ(y.ids[i], x.ids[i]);
      EXPECT_EQ(y.masked[i], x.masked[i]);
    }
  y = reveal(y, std::vector<std::int64_t>{3, 5}, std::vector<int>{7, 8});
  EXPECT_EQ(y.current_block, 2);
  check_state(y);
}

TEST(Reveal, UnmaskedPositionIsContractViolation) {
  const SequenceState x = testing::masked_state(2, 4, 1);
  try {
    reveal(x, std::vector<std::int64_t>{0}, std::vector<int>{5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract_violation);
  }
}

// Backbone stub: logits that prefer a position-dependent token with a
// position-dependent margin, so confidences are distinct.
BackboneFn stub_backbone(std::int64_t V = 8) {
  return [V](const SequenceState& x) {
    Array h(Shape{x.length(), 2}, 0.0);
    Array l(Shape{x.length(), V}, 0.0);
    for (std::int64_t i = 0; i < x.length(); ++i) {
      const std::int64_t masked_before = [&] {
        std::int64_t n = 0;
        for (std::int64_t j = 0; j < i; ++j) n += x.masked[j];
        return n;
      }();
      l.at(i, 4 + i % 4) = 1.0 + 0.3 * static_cast<double>((i * 7) % 5) + 0.1 * static_cast<double>(masked_before);
    }
    return std::pair<Array, Array>{h, l};
  };
}

TEST(Baseline, StaticOneUsesBForwards) {
  for (std::int64_t B : {1, 2, 4, 8}) {
    DecodeStats stats;
    DecodeTrace trace;
    const SequenceState x = denoise_block_baseline(stub_backbone(), testing::masked_state(2, B, 1), Policy::fixed(1),
                                                   &stats, &trace);
    EXPECT_EQ(stats.backbone_forwards, B);
    EXPECT_EQ(trace.count(StepKind::backbone), B);
    EXPECT_EQ(stats.tokens_generated, B);
    EXPECT_TRUE(x.finished());
  }
}

TEST(Baseline, StaticBUsesOneForward) {
  DecodeStats stats;
  denoise_block_baseline(stub_backbone(), testing::masked_state(2, 4, 1), Policy::fixed(4), &stats);
  EXPECT_EQ(stats.backbone_forwards, 1);
}

TEST(Baseline, TauOneTraceEqualsStaticOne) {
  DecodeTrace a, b;
  const auto xa = denoise_block_baseline(stub_backbone(), testing::masked_state(3, 4, 2), Policy::fixed(1), nullptr, &a);
  const auto xb =
      denoise_block_baseline(stub_backbone(), testing::masked_state(3, 4, 2), Policy::threshold(1.0), nullptr, &b);
  EXPECT_EQ(xa, xb);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    EXPECT_EQ(a.steps[i].revealed, b.steps[i].revealed);
    EXPECT_EQ(a.steps[i].revealed_tokens, b.steps[i].revealed_tokens);
  }
}

TEST(Baseline, ProgressAndMonotoneReveals) {
  const BackboneConfig cfg = testing::tiny_backbone_config();
  const BackboneParams p = BackboneParams::init(cfg, 5);
  BackboneFn f = [&](const SequenceState& x) { return forward_values(x, p, cfg); };
  for (double tau : {0.05, 0.3, 1.0}) {
    DecodeTrace trace;
    SequenceState x = testing::masked_state(4, 4, 2);
    x = denoise_block_baseline(f, x, Policy::threshold(tau), nullptr, &trace);
    std::int64_t prev = trace.steps.front().input.masked_count() + 1;
    for (const auto& s : trace.steps) {
      EXPECT_LT(s.input.masked_count(), prev);
      prev = s.input.masked_count();
      for (std::int64_t i = 0; i < s.input.length(); ++i)
        if (!s.input.masked[i]) {
          EXPECT_EQ(s.input.ids[i], x.ids[i]);
        }
    }
    EXPECT_LE(static_cast<std::int64_t>(trace.steps.size()), 4);
  }
}

TEST(Baseline, RequiresFullyMaskedBlock) {
  SequenceState x = testing::masked_state(2, 4, 1);
  x = reveal(x, std::vector<std::int64_t>{2}, std::vector<int>{5});
  EXPECT_THROW(denoise_block_baseline(stub_backbone(), x, Policy::fixed(1)), Error);
}

TEST(PadAfterEos, FillsUntouchedBlocks) {
  SequenceState x = testing::masked_state(2, 2, 3);
  x = reveal(x, std::vector<std::int64_t>{2, 3}, std::vector<int>{5, kEos});
  pad_after_eos(x);
  EXPECT_TRUE(x.finished());
  for (std::int64_t i = 4; i < x.length(); ++i) EXPECT_EQ(x.ids[i], kPad);
  check_state(x);
}

}  // namespace
}  // namespace mrp
