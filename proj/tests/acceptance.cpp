// End-to-end acceptance run. Trains the toy backbone and the MRP heads (or
// loads them from the cache directory), then prints one PASS/FAIL line per
// criterion. Exit status is 0 only when every criterion passes.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>

#include "mrp/artifacts.hpp"
#include "mrp/bench.hpp"
#include "mrp/config.hpp"
#include "mrp/training.hpp"
#include "support.hpp"

#ifndef MRP_CLI_PATH
#error "MRP_CLI_PATH must point at the mrp executable"
#endif

namespace fs = std::filesystem;
using namespace mrp;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kSoftmaxExampleTol = 1e-15;
constexpr double kNumericsBudgetS = 60.0;
constexpr std::int64_t kLipschitzPairs = 10000;
constexpr double kLipschitzBudgetS = 10.0;
constexpr std::int64_t kReductionPrompts = 500;
constexpr double kReductionBudgetS = 300.0;
constexpr std::int64_t kOracleBlocks = 100;
constexpr double kAccuracyFloor = 0.95;
constexpr double kBackboneBudgetS = 1800.0;
constexpr std::int64_t kMinBlocks = 200;
constexpr std::int64_t kDecayShuffles = 1000;
constexpr double kDecayAlpha = 0.05;
constexpr int kSeeds = 3;
constexpr int kSeedsNeeded = 2;
constexpr double kSpecAccuracyBand = 0.02;
constexpr double kTrendRhoMin = 0.9 - 1e-12;  // Spearman with one adjacent inversion over 5 points is 0.9
constexpr std::uint64_t kCacheVersion = 1;    // bump when training code changes

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Line {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Line> results;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  results.push_back({id, name, pass, detail});
  std::cout << (pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << detail << std::endl;
}

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

void log(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

// ---------------------------------------------------------------------------
// Artifact cache

struct TrainedBackbone {
  LoadedBackbone model;
  std::string path;
  double train_seconds = 0.0;
  bool cached = false;
};

struct TrainedHead {
  MrpHead head;
  ResidualModel residual;
};

double read_seconds(const fs::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) return 0.0;
  return nlohmann::json::parse(in).value("train_seconds", 0.0);
}

void write_seconds(const fs::path& sidecar, double s) {
  write_text(sidecar.string(), nlohmann::json{{"train_seconds", s}}.dump() + "\n");
}

std::string key_of(const nlohmann::json& j) { return hex64(fnv1a(j.dump() + std::to_string(kCacheVersion))); }

TrainedBackbone backbone_for(const RunConfig& cfg, std::span<const Example> train, const fs::path& cache) {
  const nlohmann::json key{{"seed", cfg.seed},
                           {"data", to_json(cfg)["data"]},
                           {"backbone", to_json(cfg)["backbone"]},
                           {"train", detail::train_json(cfg.train_backbone)}};
  const fs::path path = cache / ("backbone_" + key_of(key) + ".mrpc");
  const fs::path sidecar = fs::path(path).replace_extension(".json");
  TrainedBackbone out;
  out.path = path.string();
  if (fs::exists(path) && fs::exists(sidecar)) {
    out.cached = true;
    out.train_seconds = read_seconds(sidecar);
    log("backbone from cache " + path.string());
  } else {
    log("training backbone (" + std::to_string(train.size()) + " examples)");
    TrainConfig t = cfg.train_backbone;
    t.seed = cfg.seed;
    const auto t0 = Clock::now();
    const auto res = train_backbone(train, cfg.backbone, t, [](const LogRow& r) {
      if (r.step % 2000 == 0) log("  backbone step " + std::to_string(r.step) + " loss " + num(r.loss));
    });
    out.train_seconds = seconds_since(t0);
    save_checkpoint(path.string(), backbone_checkpoint(res.params, cfg.backbone, detail::train_json(t)));
    write_seconds(sidecar, out.train_seconds);
  }
  out.model = load_backbone(path.string());
  return out;
}

std::unique_ptr<TrainedHead> head_for(const RunConfig& cfg, Objective objective, std::uint64_t seed,
                                      std::span<const Example> train, const TrainedBackbone& bb,
                                      const fs::path& cache) {
  MrpConfig m = cfg.mrp;
  m.objective = objective;
  TrainConfig t = cfg.train_mrp;
  t.seed = seed;
  const nlohmann::json key{{"backbone", file_hash(bb.path)},
                           {"data", to_json(cfg)["data"]},
                           {"mrp", {{"depth", m.depth}, {"unroll", m.unroll}, {"reveal_k", m.reveal_k},
                                    {"sigma_init", m.sigma_init}, {"objective", to_string(objective)}}},
                           {"train", detail::train_json(t)},
                           {"seed", seed}};
  const fs::path path = cache / ("mrp_" + to_string(objective) + "_s" + std::to_string(seed) + "_" + key_of(key) + ".mrpc");
  if (fs::exists(path)) {
    log("MRP head from cache " + path.string());
  } else {
    log("training " + to_string(objective) + " MRP head, seed " + std::to_string(seed));
    const auto res = train_mrp(train, bb.model.params, bb.model.config, m, t, [](const LogRow& r) {
      if (r.step % 1000 == 0) log("  mrp step " + std::to_string(r.step) + " loss " + num(r.loss));
    });
    save_checkpoint(path.string(), mrp_checkpoint(res.head, file_hash(bb.path), detail::train_json(t)));
  }
  auto out = std::make_unique<TrainedHead>();
  out->head = load_mrp(path.string(), bb.model.config.d_model);
  out->residual = {make_residual_fn(out->head, bb.model.params, bb.model.config), out->head.config.objective};
  return out;
}

std::vector<SequenceState> prompt_states(std::span<const Example> eval, std::int64_t block_size) {
  std::vector<SequenceState> xs;
  for (const auto& ex : eval)
    xs.push_back(make_decode_state(ex.prompt_ids, static_cast<std::int64_t>(ex.response_ids.size()), block_size));
  return xs;
}

// ---------------------------------------------------------------------------
// 1. Numerics

void criterion_numerics() {
  const auto t0 = Clock::now();
  Rng rng(11);
  auto param = [&](Shape s, double sd = 1.0) { return Tensor::parameter(testing::random_array(std::move(s), rng, sd)); };
  using testing::probe;
  std::map<std::string, double> worst;

  Tensor a = param({3, 4}), b = param({3, 4});
  worst["add"] = testing::max_grad_rel_error([&] { return probe(add(a, b), 1); }, {a, b});
  worst["sub"] = testing::max_grad_rel_error([&] { return probe(sub(a, b), 2); }, {a, b});
  worst["mul"] = testing::max_grad_rel_error([&] { return probe(mul(a, b), 3); }, {a, b});
  worst["scale"] = testing::max_grad_rel_error([&] { return probe(scale(a, -1.7), 4); }, {a});
  worst["sum"] = testing::max_grad_rel_error([&] { return mul(sum(a), sum(a)); }, {a});
  worst["mean"] = testing::max_grad_rel_error([&] { return mul(mean(a), sum(a)); }, {a});
  Tensor x = param({5, 3}), w = param({3, 4}), bias = param({4});
  worst["matmul+bias"] = testing::max_grad_rel_error([&] { return probe(add_row_bias(matmul(x, w), bias), 5); }, {x, w, bias});
  Tensor table = param({6, 3});
  const std::vector<int> ids{0, 5, 2, 2, 1};
  worst["embedding"] = testing::max_grad_rel_error([&] { return probe(embedding(table, ids), 6); }, {table});
  Tensor xn = param({4, 6}), gain = param({6});
  worst["rmsnorm"] = testing::max_grad_rel_error([&] { return probe(rmsnorm(xn, gain, 1e-6), 7); }, {xn, gain});
  Tensor xg = param({4, 5}, 2.0);
  worst["gelu"] = testing::max_grad_rel_error([&] { return probe(gelu(xg), 8); }, {xg});
  Tensor c1 = param({3, 2}), c2 = param({3, 4});
  worst["concat"] = testing::max_grad_rel_error([&] { return probe(concat_cols(c1, c2), 9); }, {c1, c2});
  Tensor xs = param({3, 5}, 2.0);
  worst["softmax"] = testing::max_grad_rel_error([&] { return probe(softmax_rows(xs), 10); }, {xs});
  Tensor zp = param({3, 5}), zq = param({3, 5});
  worst["kl_rows"] = testing::max_grad_rel_error([&] { return kl_rows(softmax_rows(zp), softmax_rows(zq)); }, {zp, zq});
  Tensor z = param({4, 5}, 2.0);
  const Array teacher = softmax_rows(testing::random_array({4, 5}, rng, 2.0));
  const std::vector<char> sel{1, 0, 1, 1};
  worst["kl_to_logits"] = testing::max_grad_rel_error([&] { return kl_to_logits(teacher, z, sel); }, {z});
  Tensor zc = param({4, 6}, 2.0);
  const std::vector<int> tgt{0, 3, 5, 1};
  worst["cross_entropy"] = testing::max_grad_rel_error([&] { return cross_entropy(zc, tgt, sel); }, {zc});
  Tensor q = param({12, 4}), k = param({12, 4}), v = param({12, 4});
  const auto amask = attention_mask(6, 2, 2);
  worst["attention"] = testing::max_grad_rel_error([&] { return probe(attention(q, k, v, 2, 2, amask), 12); }, {q, k, v});
  Rng init(2);
  TransformerLayer layer = TransformerLayer::init(4, init, 0.5, 0.5);
  Tensor xl = param({6, 4});
  NamedTensors named;
  layer.collect("", named);
  std::vector<Tensor> ins{xl};
  for (auto& [_, t] : named) ins.push_back(t);
  worst["transformer_layer"] =
      testing::max_grad_rel_error([&] { return probe(layer.forward(xl, 1, 2, amask, 1e-6), 13); }, ins);

  double max_err = 0.0;
  std::string max_op;
  for (const auto& [op, e] : worst)
    if (e >= max_err) {
      max_err = e;
      max_op = op;
    }

  const Array s1 = softmax_rows(Array::matrix(1, 2, {0.0, 0.0}));
  const Array s2 = softmax_rows(Array::matrix(1, 2, {0.0, std::log(2.0)}));
  const Array p37 = Array::matrix(1, 2, {0.3, 0.7});
  const bool examples = s1[0] == 0.5 && s1[1] == 0.5 && std::abs(s2[0] - 1.0 / 3.0) <= kSoftmaxExampleTol &&
                        std::abs(s2[1] - 2.0 / 3.0) <= kSoftmaxExampleTol && kl_rows(p37, p37) == 0.0 &&
                        std::abs(kl_rows(Array::matrix(1, 2, {1.0, 0.0}), Array::matrix(1, 2, {0.5, 0.5})) -
                                 std::log(2.0)) <= kSoftmaxExampleTol;
  const double secs = seconds_since(t0);
  report(1, "numerics", max_err < kGradTol && examples && secs < kNumericsBudgetS,
         std::to_string(worst.size()) + " ops, worst rel err " + num(max_err) + " (" + max_op + ") < " +
             num(kGradTol) + "; softmax/kl examples " + (examples ? "ok" : "WRONG") + "; " + num(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// 2. Lipschitz

void criterion_lipschitz() {
  const auto t0 = Clock::now();
  Rng rng(mix_seed(1, 0x6c6970));
  bool ok = true;
  std::string detail;
  for (std::int64_t V : {2, 16, 64}) {
    const double worst = check_softmax_lipschitz(kLipschitzPairs, V, rng);
    ok = ok && worst <= kLipschitzBound;
    detail += "V=" + std::to_string(V) + " max " + num(worst) + "; ";
  }
  const double secs = seconds_since(t0);
  report(2, "softmax 1/2-Lipschitz", ok && secs < kLipschitzBudgetS,
         detail + std::to_string(kLipschitzPairs) + " pairs each, " + num(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// 3. Reduction and verification soundness

void criterion_reduction(const BackboneFn& f, const ResidualModel& g, std::span<const SequenceState> prompts) {
  const auto t0 = Clock::now();
  std::int64_t mismatches = 0, runs = 0;
  for (const Policy& policy : {Policy::fixed(1), Policy::threshold(0.9), Policy::threshold(1.0)}) {
    DecodeConfig c;
    c.policy = policy;
    for (const auto& x : prompts) {
      DecodeStats sb, sd, ss;
      const auto xb = decode(f, nullptr, x, c, &sb);
      const auto xd = direct_decode(f, g, x, c, &sd);
      const auto xs = spec_decode(f, g, x, c, &ss);
      const bool same = xb.ids == xd.ids && xb.ids == xs.ids && sb.backbone_forwards == sd.backbone_forwards &&
                        sb.backbone_forwards == ss.backbone_forwards && sd.mrp_forwards == 0 && ss.mrp_forwards == 0;
      mismatches += same ? 0 : 1;
      ++runs;
    }
  }
  std::int64_t violations = 0, accepted = 0, verifications = 0, accounting = 0;
  TraceOptions topt;
  for (std::int64_t k : {1, 2, 3})
    for (const Policy& policy : {Policy::fixed(1), Policy::threshold(0.9)}) {
      DecodeConfig c;
      c.mode = DecodeMode::speculative;
      c.policy = policy;
      c.k = k;
      for (const auto& x : prompts) {
        DecodeStats st;
        DecodeTrace trace;
        const auto out = decode(f, &g, x, c, &st, &trace, topt);
        const auto rep = testing::replay_soundness(f, trace, out);
        violations += rep.violations;
        accepted += rep.accepted;
        verifications += rep.verifications;
        if (st.backbone_forwards != trace.count(StepKind::backbone) || rep.accepted != st.drafts_accepted) ++accounting;
      }
    }
  const double secs = seconds_since(t0);
  report(3, "reduction and verification soundness",
         mismatches == 0 && violations == 0 && accounting == 0 && secs < kReductionBudgetS,
         "K=0: " + std::to_string(mismatches) + "/" + std::to_string(runs) +
             " decodes differ from baseline; spec K=1..3: " + std::to_string(verifications) + " verifications, " +
             std::to_string(accepted) + " accepted drafts replayed, " + std::to_string(violations) + " violations, " +
             std::to_string(accounting) + " accounting errors; " + num(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// 4. Oracle fixed point

void criterion_oracle(const BackboneFn& f, const LoadedBackbone& bb, std::span<const SequenceState> prompts) {
  std::int64_t blocks = 0, mismatches = 0, saved = 0, base_forwards = 0;
  for (const auto& x : prompts) {
    if (blocks >= kOracleBlocks) break;
    DecodeTrace trace;
    DecodeStats sb;
    const auto xb = decode(f, nullptr, x, DecodeConfig{}, &sb, &trace);
    blocks += static_cast<std::int64_t>(sb.block_steps.size());
    const ResidualModel oracle = testing::recorded_oracle(trace, bb.params.lm_head);
    for (std::int64_t k : {1, 2, 3}) {
      DecodeConfig c;
      c.k = k;
      DecodeStats sd;
      if (direct_decode(f, oracle, x, c, &sd).ids != xb.ids) ++mismatches;
      base_forwards += sb.backbone_forwards;
      saved += sb.backbone_forwards - sd.backbone_forwards;
    }
  }
  report(4, "oracle residuals reproduce baseline", mismatches == 0 && blocks >= kOracleBlocks,
         std::to_string(blocks) + " blocks x K=1..3, " + std::to_string(mismatches) + " mismatches; oracle saved " +
             std::to_string(saved) + "/" + std::to_string(base_forwards) + " backbone forwards");
}

// ---------------------------------------------------------------------------
// 6, 7. Residual magnitudes and decay

void criteria_residuals(const BackboneFn& f, std::span<const SequenceState> prompts, std::uint64_t seed) {
  CollectConfig cc;
  cc.min_blocks = kMinBlocks;
  const auto states = collect_block_states(f, prompts, cc);
  const auto curves = measure_residuals(states);
  bool below = true, monotone = true;
  std::string detail;
  for (const char* space : {"logits", "hidden"}) {
    double prev = -1.0;
    std::string series;
    for (const auto& c : curves) {
      if (c.space != space) continue;
      below = below && c.rms_residual < c.rms_reference;
      monotone = monotone && c.rms_residual >= prev;
      prev = c.rms_residual;
      series += (series.empty() ? "" : " ") + num(c.rms_residual, 3);
      if (c.k == 1) series = "ref " + num(c.rms_reference, 3) + " | " + series;
    }
    detail += std::string(space) + " [" + series + "]; ";
  }
  const auto blocks = static_cast<std::int64_t>(states.blocks.size());
  report(6, "residual below reference and growing in k", below && monotone && blocks >= kMinBlocks,
         std::to_string(blocks) + " blocks; " + detail + "below " + (below ? "yes" : "NO") + ", non-decreasing " +
             (monotone ? "yes" : "NO"));

  const auto decay = check_decay(states, kDecayShuffles, mix_seed(seed, 0x646563));
  report(7, "successive residuals decay", decay.rho < 0.0 && decay.p_value < kDecayAlpha && decay.blocks >= kMinBlocks,
         "Spearman(step, RMS of logit change) = " + num(decay.rho) + ", one-sided permutation p = " +
             num(decay.p_value) + " (" + std::to_string(kDecayShuffles) + " within-block shuffles, " +
             std::to_string(decay.blocks) + " blocks, " + std::to_string(decay.n) + " steps)");
}

// ---------------------------------------------------------------------------
// 8. Residual vs direct objective

double direct_accuracy(const BackboneFn& f, const ResidualModel& g, std::span<const Example> eval, std::int64_t B,
                       std::int64_t k) {
  DecodeConfig c;
  c.mode = DecodeMode::direct;
  c.policy = Policy::fixed(1);
  c.k = k;
  return evaluate_cell(f, &g, eval, B, c).accuracy;
}

void criterion_objectives(const BackboneFn& f, std::span<const Example> eval, std::int64_t B,
                          const std::vector<std::unique_ptr<TrainedHead>>& res,
                          const std::vector<std::unique_ptr<TrainedHead>>& dir) {
  bool all_ge = true;
  int monotone_seeds = 0;
  std::string detail;
  for (int s = 0; s < kSeeds; ++s) {
    std::vector<double> gap;
    std::string r_str, d_str;
    bool ge = true;
    for (std::int64_t k = 1; k <= 4; ++k) {
      const double ar = direct_accuracy(f, res[static_cast<std::size_t>(s)]->residual, eval, B, k);
      const double ad = direct_accuracy(f, dir[static_cast<std::size_t>(s)]->residual, eval, B, k);
      if (k >= 2) ge = ge && ar >= ad;
      gap.push_back(ar - ad);
      r_str += (k > 1 ? "/" : "") + num(ar, 3);
      d_str += (k > 1 ? "/" : "") + num(ad, 3);
    }
    bool mono = true;
    for (std::size_t i = 1; i < gap.size(); ++i) mono = mono && gap[i] >= gap[i - 1];
    all_ge = all_ge && ge;
    monotone_seeds += mono ? 1 : 0;
    detail += "seed " + std::to_string(s + 1) + " res " + r_str + " dir " + d_str + (mono ? "" : " (gap not monotone)") + "; ";
  }
  report(8, "residual objective beats direct objective", all_ge && monotone_seeds >= kSeedsNeeded,
         detail + "accuracy at K=1..4, direct decoding, static r=1; res>=dir at K>=2 in all seeds: " +
             (all_ge ? "yes" : "NO") + ", gap non-decreasing in " + std::to_string(monotone_seeds) + "/" +
             std::to_string(kSeeds) + " seeds");
}

// ---------------------------------------------------------------------------
// 9, 10. Throughput tables

void criterion_orderings(const BackboneFn& f, const ResidualModel& g, std::span<const Example> eval, std::int64_t B,
                         std::int64_t depth) {
  std::vector<GridCell> grid{{DecodeMode::baseline, Policy::threshold(1.0), 0}};
  for (std::int64_t k = 0; k <= 4; ++k) grid.push_back({DecodeMode::direct, Policy::threshold(1.0), k});
  grid.push_back({DecodeMode::speculative, Policy::threshold(1.0), 3});
  const auto rows = run_table(f, &g, eval, B, grid, depth);
  const auto& base = rows[0];
  auto direct = [&](std::int64_t k) -> const TableRow& { return rows[static_cast<std::size_t>(1 + k)]; };
  const auto& spec = rows.back();
  const bool fpt_order = base.backbone_fpt == 1.0 && direct(1).backbone_fpt < 1.0 &&
                         direct(2).backbone_fpt < direct(1).backbone_fpt;
  bool acc_order = true;
  std::string accs;
  for (std::int64_t k = 0; k <= 4; ++k) {
    if (k > 0) acc_order = acc_order && direct(k).accuracy <= direct(k - 1).accuracy;
    accs += (k ? "/" : "") + num(direct(k).accuracy, 3);
  }
  const bool spec_ok = std::abs(spec.accuracy - base.accuracy) <= kSpecAccuracyBand + 1e-12 &&
                       spec.backbone_fpt < base.backbone_fpt;
  // Not part of the verdict: the same cell with a fresh forward after any rejection.
  DecodeConfig strict;
  strict.mode = DecodeMode::speculative;
  strict.policy = Policy::threshold(1.0);
  strict.k = 3;
  strict.strict_recompute_on_reject = true;
  const auto sr = evaluate_cell(f, &g, eval, B, strict);
  const double strict_fpt = per_token(sr.stats.backbone_forwards, sr.stats.tokens_generated);
  report(9, "tau=1 orderings", fpt_order && acc_order && spec_ok,
         "fpt base " + num(base.backbone_fpt) + ", direct K=1 " + num(direct(1).backbone_fpt) + ", K=2 " +
             num(direct(2).backbone_fpt) + (fpt_order ? "" : " (ORDER BROKEN)") + "; direct accuracy K=0..4 " + accs +
             (acc_order ? "" : " (INCREASES)") + "; spec K=3 accuracy " + num(spec.accuracy, 3) + " vs base " +
             num(base.accuracy, 3) + ", fpt " + num(spec.backbone_fpt) + ", accept rate " + num(spec.accept_rate, 3) +
             " (info: with strict recompute accuracy " + num(sr.accuracy, 3) + ", fpt " + num(strict_fpt) + ")");
}

void criterion_trend(const BackboneFn& f, const ResidualModel& g, std::span<const Example> eval, std::int64_t B,
                     std::int64_t depth) {
  const std::vector<double> taus{1.0, 0.975, 0.95, 0.925, 0.9};
  const std::vector<std::int64_t> ks{1, 2};
  const std::vector<DecodeMode> modes{DecodeMode::direct};
  const auto rows = run_table(f, &g, eval, B, sweep_grid(taus, ks, modes), depth);
  bool ok = true;
  std::string detail;
  for (auto k : ks) {
    std::vector<double> t, s;
    std::string series;
    for (const auto& r : rows)
      if (r.mode == "direct" && r.k == k) {
        t.push_back(r.param);
        s.push_back(r.speedup);
        series += (series.empty() ? "" : " ") + num(r.speedup, 4);
      }
    const auto rho = spearman(t, s);
    ok = ok && !rho.degenerate && rho.rho >= kTrendRhoMin;
    detail += "direct K=" + std::to_string(k) + " speedup at tau 1..0.9 [" + series + "] Spearman " + num(rho.rho, 3) + "; ";
  }
  report(10, "MRP speedup shrinks as tau decreases", ok, detail + "need >= 0.9 (one inversion)");
}

// ---------------------------------------------------------------------------
// 11. Determinism of the command line tool

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" MRP_CLI_PATH "' " + args + " >>cli_stdout.txt 2>>cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// File contents with the wall-clock column removed from training logs.
std::string comparable(const fs::path& p) {
  std::string text = read_file(p.string());
  if (p.filename().string().find("_log.csv") == std::string::npos) return text;
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

void criterion_determinism(const fs::path& cache) {
  const fs::path root = cache / "determinism";
  fs::remove_all(root);
  const std::string config = R"({"data": {"count": 1500, "eval_count": 40},
    "measure": {"min_blocks": 20, "shuffles": 50, "lipschitz_trials": 500},
    "sweep": {"taus": [1.0, 0.9], "ks": [0, 1, 2]}})";
  const std::vector<std::string> commands{
      "gen-data --out data/train.tsv --count 1500 --eval-out data/eval.tsv",
      "train-backbone --epochs 1 --out-dir out/train_backbone",
      "train-mrp --epochs 1 --out-dir out/train_mrp",
      "eval --mode spec --k 2 --out-dir out/eval",
      "measure --out-dir out/measure",
      "theory --out-dir out/theory",
      "sweep --out-dir out/sweep",
      "generate --prompt 12+34= --mode direct --k 2 --trace out/trace.mrpc",
  };
  int failures = 0;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    write_text((dir / "config.json").string(), config);
    for (const auto& c : commands) failures += run_cli(dir, c + " --config config.json --threads 1") != 0;
  }
  std::int64_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "cli_stderr.txt") continue;
    const fs::path rel = fs::relative(e.path(), root / "a");
    ++files;
    const fs::path other = root / "b" / rel;
    if (!fs::exists(other) || comparable(e.path()) != comparable(other)) {
      ++differing;
      log("differs: " + rel.string());
    }
  }
  report(11, "determinism", failures == 0 && differing == 0 && files > 0,
         std::to_string(commands.size()) + " commands run twice (" + std::to_string(failures) + " failed), " +
             std::to_string(files) + " output files compared, " + std::to_string(differing) + " differ");
}

}  // namespace

int main(int argc, char** argv) {
  fs::path cache = "acceptance_cache";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cache-dir" && i + 1 < argc) {
      cache = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--cache-dir DIR]\n";
      return 2;
    }
  }
  try {
    fs::create_directories(cache);
    criterion_numerics();
    criterion_lipschitz();

    RunConfig cfg;
    cfg.validate();
    const auto eval = eval_set(cfg);
    const auto train = training_set(cfg, cfg.data.count);
    const TrainedBackbone bb = backbone_for(cfg, train, cache);
    const std::int64_t B = bb.model.config.block_size;
    const BackboneFn f = [&](const SequenceState& x) { return forward_values(x, bb.model.params, bb.model.config); };
    const auto prompts = prompt_states(eval, B);

    DecodeConfig base;
    const double base_acc = evaluate_cell(f, nullptr, eval, B, base).accuracy;
    report(5, "backbone quality floor",
           base_acc >= kAccuracyFloor && bb.train_seconds <= kBackboneBudgetS,
           "baseline static r=1 exact match " + num(base_acc) + " on " + std::to_string(eval.size()) +
               " held-out prompts (floor " + num(kAccuracyFloor) + "); training took " + num(bb.train_seconds, 4) +
               " s" + (bb.cached ? " (cached)" : ""));

    criterion_oracle(f, bb.model, prompts);
    criteria_residuals(f, prompts, cfg.seed);

    std::vector<std::unique_ptr<TrainedHead>> res, dir;
    for (int s = 1; s <= kSeeds; ++s) {
      res.push_back(head_for(cfg, Objective::residual, static_cast<std::uint64_t>(s), train, bb, cache));
      dir.push_back(head_for(cfg, Objective::direct, static_cast<std::uint64_t>(s), train, bb, cache));
    }
    const ResidualModel& g = res.front()->residual;
    const std::int64_t depth = res.front()->head.config.depth;

    std::vector<SequenceState> reduction_prompts(prompts.begin(),
                                                 prompts.begin() + std::min<std::int64_t>(kReductionPrompts, static_cast<std::int64_t>(prompts.size())));
    criterion_reduction(f, g, reduction_prompts);
    criterion_objectives(f, eval, B, res, dir);
    criterion_orderings(f, g, eval, B, depth);
    criterion_trend(f, g, eval, B, depth);
    criterion_determinism(cache);
  } catch (const std::exception& e) {
    std::cout << "FAIL  aborted: " << e.what() << std::endl;
    return 1;
  }

  std::sort(results.begin(), results.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
  int passed = 0;
  std::cout << "\nsummary\n";
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.id << ". " << r.name << "\n";
    passed += r.pass ? 1 : 0;
  }
  std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
  return passed == static_cast<int>(results.size()) && results.size() == 11 ? 0 : 1;
}
