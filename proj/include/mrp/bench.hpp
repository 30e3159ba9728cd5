#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mrp/backbone.hpp"
#include "mrp/corpus.hpp"
#include "mrp/inference.hpp"
#include "mrp/parallel.hpp"

namespace mrp {

// ---------------------------------------------------------------------------
// Block states under greedy one-token-per-step decoding

struct BlockStates {
  std::vector<std::int64_t> order;  // position revealed at step s = 1..B
  std::vector<Array> hidden;        // s = 0..B, rows of the block only
  std::vector<Array> logits;
  std::vector<std::vector<char>> masked;  // per state, per block row
};

struct CollectConfig {
  std::int64_t min_blocks = 200;
  std::int64_t max_blocks_per_prompt = 4;
  std::int64_t max_prompt_len = 64;  // longer prompts are skipped
  int threads = 1;
};

struct CollectedStates {
  std::vector<BlockStates> blocks;
  std::int64_t skipped_prompts = 0;
  bool partial = false;  // fewer blocks than min_blocks
};

inline Array take_rows(const Array& a, std::int64_t lo, std::int64_t hi) {
  Array out(Shape{hi - lo, a.cols()});
  std::copy(a.data() + lo * a.cols(), a.data() + hi * a.cols(), out.data());
  return out;
}

// Decodes each prompt with static r=1 and keeps (h, logits) of the current
// block at every state s = 0..B, including the clean state after the last reveal.
inline std::vector<BlockStates> block_states_for(const BackboneFn& f, SequenceState x,
                                                 std::int64_t max_blocks) {
  std::vector<BlockStates> out;
  while (!x.finished() && static_cast<std::int64_t>(out.size()) < max_blocks) {
    const int block = x.current_block;
    auto [lo, hi] = x.block_range(block);
    BlockStates bs;
    for (;;) {
      auto [h, logits] = f(x);
      bs.hidden.push_back(take_rows(h, lo, hi));
      bs.logits.push_back(take_rows(logits, lo, hi));
      bs.masked.emplace_back(x.masked.begin() + lo, x.masked.begin() + hi);
      if (x.current_block != block) break;
      const Confidence chosen = select_static(confidence_of(logits, x), 1);
      bs.order.push_back(chosen.front().position);
      x = reveal(std::move(x), chosen);
    }
    out.push_back(std::move(bs));
    pad_after_eos(x);
  }
  return out;
}

inline CollectedStates collect_block_states(const BackboneFn& f, std::span<const SequenceState> prompts,
                                            const CollectConfig& cfg) {
  std::vector<std::vector<BlockStates>> per_prompt(prompts.size());
  std::vector<char> skipped(prompts.size(), 0);
  parallel_for(static_cast<std::int64_t>(prompts.size()), cfg.threads, [&](std::int64_t i) {
    const auto& x = prompts[static_cast<std::size_t>(i)];
    if (x.prompt_len > cfg.max_prompt_len) {
      skipped[static_cast<std::size_t>(i)] = 1;
      return;
    }
    per_prompt[static_cast<std::size_t>(i)] = block_states_for(f, x, cfg.max_blocks_per_prompt);
  });
  CollectedStates out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    out.skipped_prompts += skipped[i];
    for (auto& b : per_prompt[i]) out.blocks.push_back(std::move(b));
  }
  out.partial = static_cast<std::int64_t>(out.blocks.size()) < cfg.min_blocks;
  return out;
}

// ---------------------------------------------------------------------------
// Residual magnitudes

struct ResidualCurve {
  std::string space;  // "logits" or "hidden"
  std::int64_t k = 0;
  double rms_residual = 0.0;
  double rms_reference = 0.0;
  std::int64_t n = 0;
};

// Mean RMS of X^(t+k) - X^(t) over (block, t) pairs per k, against the mean
// RMS of X^(s), s >= 1.
inline std::vector<ResidualCurve> measure_residuals(const CollectedStates& states) {
  std::vector<ResidualCurve> out;
  for (const char* space : {"logits", "hidden"}) {
    const bool use_logits = std::string(space) == "logits";
    std::map<std::int64_t, std::pair<double, std::int64_t>> acc;
    double ref_sum = 0.0;
    std::int64_t ref_n = 0;
    for (const auto& b : states.blocks) {
      const auto& xs = use_logits ? b.logits : b.hidden;
      const auto S = static_cast<std::int64_t>(xs.size()) - 1;
      for (std::int64_t s = 1; s <= S; ++s) {
        ref_sum += rms(xs[static_cast<std::size_t>(s)].span());
        ++ref_n;
      }
      for (std::int64_t k = 1; k <= S; ++k)
        for (std::int64_t t = 0; t + k <= S; ++t) {
          const Array d = xs[static_cast<std::size_t>(t + k)] - xs[static_cast<std::size_t>(t)];
          auto& [sum, n] = acc[k];
          sum += rms(d.span());
          ++n;
        }
    }
    const double ref = ref_n ? ref_sum / static_cast<double>(ref_n) : 0.0;
    for (const auto& [k, sn] : acc)
      out.push_back({space, k, sn.first / static_cast<double>(sn.second), ref, sn.second});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decay of successive residuals

// Logit change between consecutive states, over rows still masked in both.
// Steps with no such row are omitted.
inline std::vector<std::pair<double, double>> step_residual_norms(const BlockStates& b) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t s = 1; s < b.logits.size(); ++s) {
    std::vector<double> d;
    for (std::int64_t r = 0; r < b.logits[s].rows(); ++r) {
      if (!b.masked[s][static_cast<std::size_t>(r)]) continue;
      auto now = b.logits[s].row(r);
      auto prev = b.logits[s - 1].row(r);
      for (std::size_t c = 0; c < now.size(); ++c) d.push_back(now[c] - prev[c]);
    }
    if (!d.empty()) out.emplace_back(static_cast<double>(s), rms(d));
  }
  return out;
}

// Ranks starting at 1, ties get the mean rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[idx[m]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct RankCorrelation {
  double rho = 0.0;
  bool degenerate = false;  // one of the variables is constant
};

inline RankCorrelation spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::invalid_shape, "spearman: length mismatch");
  if (a.size() < 2) return {0.0, true};
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  auto constant = [](const std::vector<double>& r) { return std::adjacent_find(r.begin(), r.end(), std::not_equal_to<>()) == r.end(); };
  if (constant(ra) || constant(rb)) return {0.0, true};
  return {pearson(ra, rb), false};
}

struct DecayResult {
  double rho = 0.0;
  double p_value = 1.0;  // one-sided, H1: rho < 0
  std::int64_t n = 0;
  std::int64_t blocks = 0;
  bool degenerate = false;
};

// Spearman correlation between step index and residual norm pooled over
// blocks, with a permutation p-value that shuffles norms within each block.
inline DecayResult check_decay(const std::vector<std::vector<std::pair<double, double>>>& per_block,
                               std::int64_t shuffles = 1000, std::uint64_t seed = 0) {
  std::vector<double> steps, norms;
  std::vector<std::size_t> offsets{0};
  for (const auto& b : per_block) {
    for (auto [s, r] : b) {
      steps.push_back(s);
      norms.push_back(r);
    }
    offsets.push_back(steps.size());
  }
  DecayResult res;
  res.n = static_cast<std::int64_t>(steps.size());
  res.blocks = static_cast<std::int64_t>(per_block.size());
  const auto obs = spearman(steps, norms);
  res.rho = obs.rho;
  res.degenerate = obs.degenerate;
  if (obs.degenerate) return res;
  Rng rng(seed);
  std::int64_t as_extreme = 0;
  std::vector<double> perm = norms;
  for (std::int64_t i = 0; i < shuffles; ++i) {
    for (std::size_t b = 0; b + 1 < offsets.size(); ++b)
      for (std::size_t j = offsets[b + 1]; j > offsets[b] + 1; --j) {
        const std::size_t lo = offsets[b];
        std::swap(perm[j - 1], perm[lo + uniform_index(rng, j - lo)]);
      }
    if (spearman(steps, perm).rho <= obs.rho) ++as_extreme;
  }
  res.p_value = static_cast<double>(1 + as_extreme) / static_cast<double>(1 + shuffles);
  return res;
}

inline DecayResult check_decay(const CollectedStates& states, std::int64_t shuffles = 1000, std::uint64_t seed = 0) {
  std::vector<std::vector<std::pair<double, double>>> per_block;
  for (const auto& b : states.blocks) per_block.push_back(step_residual_norms(b));
  return check_decay(per_block, shuffles, seed);
}

// ---------------------------------------------------------------------------
// Softmax Lipschitz constant

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double tv_over_l2(std::span<const double> a, std::span<const double> b) {
  std::vector<double> pa(a.size()), pb(b.size());
  softmax_row(a, pa);
  softmax_row(b, pb);
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  if (d2 == 0.0) return 0.0;
  return total_variation(pa, pb) / std::sqrt(d2);
}

inline constexpr double kLipschitzBound = 0.5;
inline constexpr double kLipschitzSlack = 1e-9;

// Largest observed TV(softmax a, softmax b) / ||a - b||_2 over random pairs.
// Logit scales and perturbation sizes span several decades.
inline double check_softmax_lipschitz(std::int64_t trials, std::int64_t V, Rng& rng) {
  require(trials >= 1 && V >= 1, ErrorKind::invalid_config, "lipschitz check needs trials >= 1 and V >= 1");
  double worst = 0.0;
  std::vector<double> a(static_cast<std::size_t>(V)), b(static_cast<std::size_t>(V));
  for (std::int64_t t = 0; t < trials; ++t) {
    const double scale = std::pow(10.0, -2.0 + 4.0 * uniform01(rng));
    const double eps = std::pow(10.0, -4.0 + 5.0 * uniform01(rng));
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = scale * normal(rng, 0.0, 1.0);
      b[i] = a[i] + eps * normal(rng, 0.0, 1.0);
    }
    worst = std::max(worst, tv_over_l2(a, b));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Per-position contraction under reveals

struct Transition {
  std::int64_t revealed = 0;     // |R_t|
  std::int64_t length = 0;       // L
  double max_embed_dist = 0.0;   // max_j ||e_vj - e_MASK||
  std::vector<double> tv;        // per still-masked position of the block
  std::vector<double> logit_l2;  // ||delta logits row||_2, same positions
};

struct TheoryReport {
  double kappa_hat = 0.0;
  double d_max = 0.0;
  std::int64_t transitions = 0;
  std::int64_t tv_samples = 0;
  std::int64_t violations = 0;
  double mean_tv = 0.0;
  double max_tv = 0.0;
  double min_slack = 0.0;   // min over samples of bound - tv
  double mean_slack = 0.0;
  std::map<std::int64_t, std::pair<double, std::int64_t>> tv_by_reveal;  // |R_t| -> (mean tv, count)
};

// Consecutive backbone steps of one block in a baseline trace.
inline std::vector<Transition> transitions_of(const DecodeTrace& trace, const BackboneParams& params) {
  std::vector<Transition> out;
  const Array& e = params.tok_emb.value();
  for (std::size_t i = 0; i + 1 < trace.steps.size(); ++i) {
    const auto& a = trace.steps[i];
    const auto& b = trace.steps[i + 1];
    if (a.kind != StepKind::backbone || b.kind != StepKind::backbone) continue;
    if (a.input.current_block != b.input.current_block) continue;
    require(!a.logits.values().empty() && !b.logits.values().empty(), ErrorKind::contract_violation,
            "trace was recorded without tensors");
    Transition t;
    t.length = a.input.length();
    t.revealed = static_cast<std::int64_t>(a.revealed.size());
    for (std::size_t j = 0; j < a.revealed.size(); ++j) {
      auto rv = e.row(a.revealed_tokens[j]);
      auto rm = e.row(kMask);
      double s = 0.0;
      for (std::size_t c = 0; c < rv.size(); ++c) s += (rv[c] - rm[c]) * (rv[c] - rm[c]);
      t.max_embed_dist = std::max(t.max_embed_dist, std::sqrt(s));
    }
    auto [lo, hi] = b.input.block_range(b.input.current_block);
    for (std::int64_t p = lo; p < hi; ++p) {
      if (!b.input.masked[p]) continue;
      auto la = a.logits.row(p);
      auto lb = b.logits.row(p);
      std::vector<double> pa(la.size()), pb(lb.size());
      softmax_row(la, pa);
      softmax_row(lb, pb);
      double d2 = 0.0;
      for (std::size_t c = 0; c < la.size(); ++c) d2 += (lb[c] - la[c]) * (lb[c] - la[c]);
      t.tv.push_back(total_variation(pa, pb));
      t.logit_l2.push_back(std::sqrt(d2));
    }
    out.push_back(std::move(t));
  }
  return out;
}

// kappa_hat = max L * ||delta l_i||_2 / (|R_t| * max embedding distance);
// every TV is then checked against kappa_hat * |R_t| / L * that distance.
inline TheoryReport check_contraction(std::span<const Transition> ts) {
  require(!ts.empty(), ErrorKind::contract_violation, "check_contraction: no transitions");
  TheoryReport rep;
  rep.transitions = static_cast<std::int64_t>(ts.size());
  for (const auto& t : ts) {
    rep.d_max = std::max(rep.d_max, t.max_embed_dist);
    if (t.revealed == 0 || t.max_embed_dist == 0.0) continue;
    for (double l2 : t.logit_l2)
      rep.kappa_hat = std::max(rep.kappa_hat, static_cast<double>(t.length) * l2 /
                                                  (static_cast<double>(t.revealed) * t.max_embed_dist));
  }
  double tv_sum = 0.0, slack_sum = 0.0;
  rep.min_slack = std::numeric_limits<double>::infinity();
  for (const auto& t : ts) {
    const double bound =
        rep.kappa_hat * static_cast<double>(t.revealed) / static_cast<double>(t.length) * t.max_embed_dist;
    for (double tv : t.tv) {
      ++rep.tv_samples;
      tv_sum += tv;
      rep.max_tv = std::max(rep.max_tv, tv);
      slack_sum += bound - tv;
      rep.min_slack = std::min(rep.min_slack, bound - tv);
      if (tv > bound) ++rep.violations;
      auto& [m, n] = rep.tv_by_reveal[t.revealed];
      m += tv;
      ++n;
    }
  }
  if (rep.tv_samples) {
    rep.mean_tv = tv_sum / static_cast<double>(rep.tv_samples);
    rep.mean_slack = slack_sum / static_cast<double>(rep.tv_samples);
  } else {
    rep.min_slack = 0.0;
  }
  for (auto& [_, mn] : rep.tv_by_reveal) mn.first /= static_cast<double>(mn.second);
  return rep;
}

// ---------------------------------------------------------------------------
// Accuracy and throughput tables

struct GridCell {
  DecodeMode mode = DecodeMode::baseline;
  Policy policy = Policy::fixed(1);
  std::int64_t k = 0;
};

struct TableRow {
  std::string mode;
  std::string policy;
  double param = 0.0;
  std::int64_t k = 0;
  std::int64_t depth = 0;
  double accuracy = 0.0;
  double backbone_fpt = 0.0;
  double mrp_fpt = 0.0;
  double accept_rate = 0.0;
  double speedup = 1.0;
  DecodeStats stats;
};

struct CellResult {
  double accuracy = 0.0;
  DecodeStats stats;
  std::vector<SequenceState> outputs;
};

// Decodes every example from its prompt; per-prompt stats are summed in index order.
inline CellResult evaluate_cell(const BackboneFn& f, const ResidualModel* g, std::span<const Example> eval,
                                std::int64_t block_size, const DecodeConfig& cfg, int threads = 1) {
  std::vector<SequenceState> outs(eval.size());
  std::vector<DecodeStats> stats(eval.size());
  parallel_for(static_cast<std::int64_t>(eval.size()), threads, [&](std::int64_t i) {
    const auto u = static_cast<std::size_t>(i);
    const auto& ex = eval[u];
    const auto resp = static_cast<std::int64_t>(ex.response_ids.size());
    outs[u] = decode(f, g, make_decode_state(ex.prompt_ids, resp, block_size), cfg, &stats[u]);
  });
  CellResult res;
  for (auto& s : stats) res.stats += s;
  res.accuracy = exact_match_accuracy(outs, eval);
  res.outputs = std::move(outs);
  return res;
}

inline double per_token(std::int64_t count, std::int64_t tokens) {
  return tokens > 0 ? static_cast<double>(count) / static_cast<double>(tokens) : 0.0;
}

inline TableRow make_row(const GridCell& cell, std::int64_t depth, const CellResult& r) {
  TableRow row;
  row.mode = to_string(cell.mode);
  row.policy = cell.policy.name();
  row.param = cell.policy.param();
  row.k = cell.k;
  row.depth = cell.mode == DecodeMode::baseline ? 0 : depth;
  row.accuracy = r.accuracy;
  row.backbone_fpt = per_token(r.stats.backbone_forwards, r.stats.tokens_generated);
  row.mrp_fpt = per_token(r.stats.mrp_forwards, r.stats.tokens_generated);
  row.accept_rate = r.stats.drafts_proposed > 0 ? static_cast<double>(r.stats.drafts_accepted) /
                                                      static_cast<double>(r.stats.drafts_proposed)
                                                : 0.0;
  row.stats = r.stats;
  return row;
}

inline bool same_policy(const Policy& a, const Policy& b) {
  return a.kind == b.kind && (a.kind == Policy::Kind::static_count ? a.r == b.r : a.tau == b.tau);
}

// One row per grid cell. Speedup is the baseline's backbone forwards per
// token at the same policy over the cell's; missing baselines are evaluated.
// Settings other than mode, policy and K come from base.
inline std::vector<TableRow> run_table(const BackboneFn& f, const ResidualModel* g, std::span<const Example> eval,
                                       std::int64_t block_size, std::span<const GridCell> grid, std::int64_t depth,
                                       int threads = 1, const DecodeConfig& base = {}) {
  std::vector<TableRow> rows;
  std::vector<std::pair<Policy, double>> base_fpt;
  auto base_for = [&](const Policy& p) {
    for (auto& [bp, v] : base_fpt)
      if (same_policy(bp, p)) return v;
    DecodeConfig c = base;
    c.mode = DecodeMode::baseline;
    c.policy = p;
    c.k = 0;
    const auto r = evaluate_cell(f, nullptr, eval, block_size, c, threads);
    const double v = per_token(r.stats.backbone_forwards, r.stats.tokens_generated);
    base_fpt.emplace_back(p, v);
    return v;
  };
  for (const auto& cell : grid) {
    DecodeConfig c = base;
    c.mode = cell.mode;
    c.policy = cell.policy;
    c.k = cell.k;
    const auto r = evaluate_cell(f, cell.mode == DecodeMode::baseline ? nullptr : g, eval, block_size, c, threads);
    TableRow row = make_row(cell, depth, r);
    if (cell.mode == DecodeMode::baseline) {
      bool known = false;
      for (auto& [bp, v] : base_fpt) known = known || same_policy(bp, cell.policy);
      if (!known) base_fpt.emplace_back(cell.policy, row.backbone_fpt);
    }
    const double base = base_for(cell.policy);
    row.speedup = row.backbone_fpt > 0.0 ? base / row.backbone_fpt : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

// The threshold x K grid used by sweeps: baseline per tau plus each MRP mode at every K.
inline std::vector<GridCell> sweep_grid(std::span<const double> taus, std::span<const std::int64_t> ks,
                                        std::span<const DecodeMode> modes) {
  std::vector<GridCell> grid;
  for (double tau : taus) {
    grid.push_back({DecodeMode::baseline, Policy::threshold(tau), 0});
    for (auto mode : modes)
      if (mode != DecodeMode::baseline)
        for (auto k : ks) grid.push_back({mode, Policy::threshold(tau), k});
  }
  return grid;
}

inline const std::vector<double>& default_taus() {
  static const std::vector<double> t{0.9, 0.925, 0.95, 0.975, 1.0};
  return t;
}
inline const std::vector<std::int64_t>& default_ks() {
  static const std::vector<std::int64_t> k{0, 1, 2, 3};
  return k;
}

struct DepthEntry {
  std::int64_t depth = 0;
  const ResidualModel* model = nullptr;
};

inline std::vector<TableRow> depth_sweep(const BackboneFn& f, std::span<const DepthEntry> heads,
                                         std::span<const Example> eval, std::int64_t block_size,
                                         std::span<const GridCell> grid, int threads = 1,
                                         const DecodeConfig& base = {}) {
  std::vector<TableRow> rows;
  for (const auto& h : heads) {
    if (!(h.model != nullptr)) fail(ErrorKind::missing_artifact, "no MRP head for depth " + std::to_string(h.depth));
    auto part = run_table(f, h.model, eval, block_size, grid, h.depth, threads, base);
    rows.insert(rows.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV output

inline constexpr const char* kResidualsHeader = "space,k,rms_residual,rms_reference,n";
inline constexpr const char* kTableHeader = "mode,policy,param,K,depth,accuracy,backbone_fpt,mrp_fpt,accept_rate,speedup";
inline constexpr const char* kTheoryHeader = "metric,value,n,flag";

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct TheoryRow {
  std::string metric;
  double value = 0.0;
  std::int64_t n = 0;
  std::string flag;
};

inline std::string residuals_csv(std::span<const ResidualCurve> curves) {
  std::ostringstream os;
  os << kResidualsHeader << '\n';
  for (const auto& c : curves)
    os << c.space << ',' << c.k << ',' << fmt(c.rms_residual) << ',' << fmt(c.rms_reference) << ',' << c.n << '\n';
  return os.str();
}

inline std::string table_csv(std::span<const TableRow> rows) {
  std::ostringstream os;
  os << kTableHeader << '\n';
  for (const auto& r : rows)
    os << r.mode << ',' << r.policy << ',' << fmt(r.param) << ',' << r.k << ',' << r.depth << ',' << fmt(r.accuracy)
       << ',' << fmt(r.backbone_fpt) << ',' << fmt(r.mrp_fpt) << ',' << fmt(r.accept_rate) << ','
       << fmt(r.speedup) << '\n';
  return os.str();
}

inline std::string theory_csv(std::span<const TheoryRow> rows) {
  std::ostringstream os;
  os << kTheoryHeader << '\n';
  for (const auto& r : rows) os << r.metric << ',' << fmt(r.value) << ',' << r.n << ',' << r.flag << '\n';
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!(static_cast<bool>(out))) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  out << text;
  if (!(static_cast<bool>(out))) fail(ErrorKind::io, "write failed for '" + path + "'");
}

}  // namespace mrp
