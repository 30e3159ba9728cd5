// mrp: data generation, training, decoding and measurement for block-diffusion
// language models with a multi-token residual prediction head.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "mrp/artifacts.hpp"
#include "mrp/bench.hpp"
#include "mrp/config.hpp"
#include "mrp/trace_io.hpp"

#ifndef MRP_VERSION
#define MRP_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace mrp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitAssertion = 4;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out_dir;
  std::optional<std::string> backbone;
  std::optional<std::string> mrp;
  std::optional<std::string> data;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "Seed (MRP_SEED overrides)");
  cmd->add_option("--threads", c.threads, "Worker threads; 1 is bit-reproducible");
  cmd->add_option("--out-dir", c.out_dir, "Directory for reports and manifests");
  cmd->add_option("--backbone", c.backbone, "Backbone checkpoint path");
  cmd->add_option("--mrp", c.mrp, "MRP head checkpoint path");
  cmd->add_option("--data", c.data, "Training dataset path");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config_file(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  if (c.out_dir) cfg.paths.out_dir = *c.out_dir;
  if (c.backbone) cfg.paths.backbone = *c.backbone;
  if (c.mrp) cfg.paths.mrp = *c.mrp;
  if (c.data) cfg.paths.data = *c.data;
  apply_env(cfg);
  return cfg;
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) fail(ErrorKind::missing_artifact, what + " '" + path + "' not found");
}

// Resolved config, version and input hashes next to the outputs.
void write_manifest(const RunConfig& cfg, const std::string& command, const std::vector<std::string>& inputs) {
  fs::create_directories(cfg.paths.out_dir);
  write_text((fs::path(cfg.paths.out_dir) / "config.json").string(), to_json(cfg).dump(2) + "\n");
  nlohmann::json m;
  m["version"] = MRP_VERSION;
  m["command"] = command;
  m["config_hash"] = config_hash(cfg);
  m["inputs"] = nlohmann::json::object();
  for (const auto& p : inputs)
    if (fs::exists(p)) m["inputs"][p] = file_hash(p);
  write_text((fs::path(cfg.paths.out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.paths.out_dir) / name).string();
}

BackboneFn backbone_fn(const LoadedBackbone& b) {
  return [&b](const SequenceState& x) { return forward_values(x, b.params, b.config); };
}

Policy policy_from(const std::string& kind, std::int64_t r, double tau) {
  if (kind == "static") return Policy::fixed(r);
  if (kind == "dynamic") return Policy::threshold(tau);
  fail(ErrorKind::invalid_config, "unknown policy '" + kind + "' (expected static or dynamic)");
}

void log_to(const std::string& path, const std::vector<LogRow>& rows, std::int64_t unroll) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write training log");
  write_log_csv(os, rows, unroll);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const std::string& out, std::int64_t count, const std::string& eval_out) {
  require(count >= 0, ErrorKind::invalid_config, "count must be >= 0");
  ensure_parent(out);
  const auto examples = count > 0 ? training_set(cfg, count) : std::vector<Example>{};
  write_dataset(out, examples);
  if (!eval_out.empty()) {
    ensure_parent(eval_out);
    write_dataset(eval_out, eval_set(cfg));
  }
  std::cout << examples.size() << "\n";
  return kExitOk;
}

int cmd_train_backbone(RunConfig cfg) {
  require_file(cfg.paths.data, "dataset");
  const auto examples = read_dataset(cfg.paths.data, cfg.layout());
  cfg.train_backbone.seed = cfg.seed;
  const auto res = train_backbone(examples, cfg.backbone, cfg.train_backbone, [](const LogRow& r) {
    if (r.step % 500 == 0) std::cerr << "step " << r.step << " loss " << r.loss << " lr " << r.lr << "\n";
  });
  ensure_parent(cfg.paths.backbone);
  save_checkpoint(cfg.paths.backbone,
                  backbone_checkpoint(res.params, cfg.backbone, detail::train_json(cfg.train_backbone)));
  write_manifest(cfg, "train-backbone", {cfg.paths.data, cfg.paths.backbone});
  log_to(out_path(cfg, "train_backbone_log.csv"), res.curve, 0);
  std::cerr << "saved " << cfg.paths.backbone << " (" << file_hash(cfg.paths.backbone) << ")\n";
  return kExitOk;
}

int cmd_train_mrp(RunConfig cfg) {
  require_file(cfg.paths.data, "dataset");
  require_file(cfg.paths.backbone, "backbone checkpoint");
  const auto examples = read_dataset(cfg.paths.data, cfg.layout());
  const auto backbone = load_backbone(cfg.paths.backbone);
  cfg.train_mrp.seed = cfg.seed;
  const auto res = train_mrp(examples, backbone.params, backbone.config, cfg.mrp, cfg.train_mrp, [](const LogRow& r) {
    if (r.step % 500 == 0) std::cerr << "step " << r.step << " loss " << r.loss << " lr " << r.lr << "\n";
  });
  ensure_parent(cfg.paths.mrp);
  save_checkpoint(cfg.paths.mrp,
                  mrp_checkpoint(res.head, file_hash(cfg.paths.backbone), detail::train_json(cfg.train_mrp)));
  write_manifest(cfg, "train-mrp", {cfg.paths.data, cfg.paths.backbone, cfg.paths.mrp});
  log_to(out_path(cfg, "train_mrp_log.csv"), res.curve, cfg.mrp.unroll);
  std::cerr << "saved " << cfg.paths.mrp << " (" << file_hash(cfg.paths.mrp) << ")\n";
  return kExitOk;
}

struct Models {
  LoadedBackbone backbone;
  std::optional<MrpHead> head;
  std::optional<ResidualModel> residual;
};

// The backbone always; the head only when the mode needs one.
std::unique_ptr<Models> load_models(const RunConfig& cfg, bool need_head) {
  require_file(cfg.paths.backbone, "backbone checkpoint");
  auto m = std::make_unique<Models>();
  m->backbone = load_backbone(cfg.paths.backbone);
  if (need_head) {
    require_file(cfg.paths.mrp, "MRP checkpoint");
    m->head = load_mrp(cfg.paths.mrp, m->backbone.config.d_model);
    m->residual = ResidualModel{make_residual_fn(*m->head, m->backbone.params, m->backbone.config),
                                m->head->config.objective};
  }
  return m;
}

int cmd_generate(const RunConfig& cfg, const std::string& prompt, bool verbose, const std::string& trace_path) {
  const bool need_head = cfg.decode.mode != DecodeMode::baseline;
  const auto models = load_models(cfg, need_head);
  DecodeTrace trace;
  TraceOptions topt;
  topt.record_tensors = !trace_path.empty();
  const auto f = backbone_fn(models->backbone);
  const auto out = generate(f, need_head ? &*models->residual : nullptr, prompt, cfg.layout(),
                            models->backbone.config.max_len, cfg.decode, &trace, topt);
  std::cout << out.text << "\n";
  if (verbose)
    for (std::size_t i = 0; i < trace.steps.size(); ++i) std::cerr << describe_step(trace.steps[i], i) << "\n";
  if (!trace_path.empty()) {
    ensure_parent(trace_path);
    save_trace(trace_path, trace);
  }
  const auto& s = out.stats;
  std::cerr << "backbone_forwards " << s.backbone_forwards << "\n"
            << "mrp_forwards " << s.mrp_forwards << "\n"
            << "tokens " << s.tokens_generated << "\n"
            << "forwards_per_token " << per_token(s.backbone_forwards, s.tokens_generated) << "\n";
  if (cfg.decode.mode == DecodeMode::speculative)
    std::cerr << "drafts " << s.drafts_proposed << " accepted " << s.drafts_accepted << " acceptance_rate "
              << (s.drafts_proposed ? static_cast<double>(s.drafts_accepted) / static_cast<double>(s.drafts_proposed)
                                    : 0.0)
              << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
  const bool need_head = cfg.decode.mode != DecodeMode::baseline;
  const auto models = load_models(cfg, need_head);
  const auto eval = eval_set(cfg);
  std::vector<GridCell> grid{{DecodeMode::baseline, cfg.decode.policy, 0}};
  if (need_head) grid.push_back({cfg.decode.mode, cfg.decode.policy, cfg.decode.k});
  const auto rows = run_table(backbone_fn(models->backbone), need_head ? &*models->residual : nullptr, eval,
                              models->backbone.config.block_size, grid, need_head ? models->head->config.depth : 0,
                              cfg.threads, cfg.decode);
  write_manifest(cfg, "eval", {cfg.paths.backbone, need_head ? cfg.paths.mrp : ""});
  write_text(out_path(cfg, "table.csv"), table_csv(rows));
  std::cout << table_csv(rows);
  return kExitOk;
}

std::vector<SequenceState> prompt_states(const std::vector<Example>& eval, std::int64_t block_size) {
  std::vector<SequenceState> xs;
  for (const auto& ex : eval)
    xs.push_back(make_decode_state(ex.prompt_ids, static_cast<std::int64_t>(ex.response_ids.size()), block_size));
  return xs;
}

CollectConfig collect_config(const RunConfig& cfg) {
  CollectConfig cc;
  cc.min_blocks = cfg.measure.min_blocks;
  cc.max_blocks_per_prompt = cfg.measure.max_blocks_per_prompt;
  cc.max_prompt_len = cfg.measure.max_prompt_len;
  cc.threads = cfg.threads;
  return cc;
}

int cmd_measure(const RunConfig& cfg) {
  const auto models = load_models(cfg, false);
  const auto prompts = prompt_states(eval_set(cfg), models->backbone.config.block_size);
  const auto states = collect_block_states(backbone_fn(models->backbone), prompts, collect_config(cfg));
  if (states.partial)
    std::cerr << "warning: only " << states.blocks.size() << " blocks collected (minimum "
              << cfg.measure.min_blocks << "); report is partial\n";
  if (states.skipped_prompts) std::cerr << "skipped " << states.skipped_prompts << " long prompts\n";
  const auto curves = measure_residuals(states);
  write_manifest(cfg, "measure", {cfg.paths.backbone});
  write_text(out_path(cfg, "residuals.csv"), residuals_csv(curves));
  std::cout << residuals_csv(curves);
  return kExitOk;
}

int cmd_sweep(const RunConfig& cfg, bool depth_sweep_mode, const std::string& pattern) {
  std::vector<DecodeMode> modes;
  for (const auto& m : cfg.sweep.modes) modes.push_back(parse_mode(m));
  const auto grid = sweep_grid(cfg.sweep.taus, cfg.sweep.ks, modes);
  const auto eval = eval_set(cfg);
  if (!depth_sweep_mode) {
    const auto models = load_models(cfg, true);
    const auto rows = run_table(backbone_fn(models->backbone), &*models->residual, eval,
                                models->backbone.config.block_size, grid, models->head->config.depth, cfg.threads,
                                cfg.decode);
    write_manifest(cfg, "sweep", {cfg.paths.backbone, cfg.paths.mrp});
    write_text(out_path(cfg, "table.csv"), table_csv(rows));
    std::cout << table_csv(rows);
    return kExitOk;
  }
  const auto models = load_models(cfg, false);
  std::vector<MrpHead> heads;
  std::vector<ResidualModel> residuals;
  std::vector<std::string> inputs{cfg.paths.backbone};
  heads.reserve(cfg.sweep.depths.size());
  for (auto d : cfg.sweep.depths) {
    std::string path = pattern;
    const auto at = path.find("{depth}");
    require(at != std::string::npos, ErrorKind::invalid_config, "--depth-pattern must contain {depth}");
    path.replace(at, 7, std::to_string(d));
    require_file(path, "MRP checkpoint for depth " + std::to_string(d));
    heads.push_back(load_mrp(path, models->backbone.config.d_model));
    require(heads.back().config.depth == d, ErrorKind::invalid_config, "checkpoint depth does not match its name");
    inputs.push_back(path);
  }
  std::vector<DepthEntry> entries;
  residuals.reserve(heads.size());
  for (const auto& h : heads) {
    residuals.push_back({make_residual_fn(h, models->backbone.params, models->backbone.config), h.config.objective});
    entries.push_back({h.config.depth, &residuals.back()});
  }
  const auto rows =
      depth_sweep(backbone_fn(models->backbone), entries, eval, models->backbone.config.block_size, grid, cfg.threads,
                  cfg.decode);
  write_manifest(cfg, "sweep-depth", inputs);
  write_text(out_path(cfg, "depth_table.csv"), table_csv(rows));
  std::cout << table_csv(rows);
  return kExitOk;
}

int cmd_theory(const RunConfig& cfg, bool random_backbone) {
  std::vector<TheoryRow> rows;
  bool lipschitz_ok = true;
  Rng rng(mix_seed(cfg.seed, 0x6c6970));
  for (std::int64_t V : {2, 16, 64}) {
    const double worst = check_softmax_lipschitz(cfg.measure.lipschitz_trials, V, rng);
    const bool ok = worst <= kLipschitzBound + kLipschitzSlack;
    lipschitz_ok = lipschitz_ok && ok;
    rows.push_back({"lipschitz_max_ratio_V" + std::to_string(V), worst, cfg.measure.lipschitz_trials, ok ? "ok" : "VIOLATION"});
  }

  LoadedBackbone rb;
  const LoadedBackbone* b = nullptr;
  std::unique_ptr<Models> models;
  if (random_backbone) {
    rb.config = cfg.backbone;
    rb.params = BackboneParams::init(cfg.backbone, cfg.seed);
    b = &rb;
  } else {
    models = load_models(cfg, false);
    b = &models->backbone;
  }
  const auto f = backbone_fn(*b);
  const auto eval = eval_set(cfg);
  const auto prompts = prompt_states(eval, b->config.block_size);

  std::vector<Transition> transitions;
  for (std::int64_t r : {1, 2}) {
    for (const auto& x : prompts) {
      DecodeTrace trace;
      decode(f, nullptr, x, [&] {
        DecodeConfig c;
        c.policy = Policy::fixed(r);
        return c;
      }(), nullptr, &trace);
      for (auto& t : transitions_of(trace, b->params)) transitions.push_back(std::move(t));
    }
  }
  const auto rep = check_contraction(transitions);
  rows.push_back({"kappa_hat", rep.kappa_hat, rep.transitions, ""});
  rows.push_back({"d_max", rep.d_max, rep.transitions, ""});
  rows.push_back({"tv_mean", rep.mean_tv, rep.tv_samples, ""});
  rows.push_back({"tv_max", rep.max_tv, rep.tv_samples, ""});
  rows.push_back({"bound_min_slack", rep.min_slack, rep.tv_samples, ""});
  rows.push_back({"bound_mean_slack", rep.mean_slack, rep.tv_samples, ""});
  rows.push_back({"bound_violations", static_cast<double>(rep.violations), rep.tv_samples, rep.violations ? "VIOLATION" : "ok"});
  for (const auto& [k, mn] : rep.tv_by_reveal)
    rows.push_back({"tv_mean_reveal" + std::to_string(k), mn.first, mn.second, ""});

  const auto states = collect_block_states(f, prompts, collect_config(cfg));
  const auto decay = check_decay(states, cfg.measure.shuffles, mix_seed(cfg.seed, 0x646563));
  rows.push_back({"decay_spearman", decay.rho, decay.n, decay.degenerate ? "degenerate" : ""});
  rows.push_back({"decay_p_value", decay.p_value, decay.blocks, decay.p_value < 0.05 && decay.rho < 0 ? "significant" : ""});

  write_manifest(cfg, "theory", {random_backbone ? "" : cfg.paths.backbone});
  write_text(out_path(cfg, "theory.csv"), theory_csv(rows));
  std::cout << theory_csv(rows);
  if (!lipschitz_ok) {
    std::cerr << "softmax Lipschitz bound violated\n";
    return kExitAssertion;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-diffusion decoding with multi-token residual prediction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MRP_VERSION);

  Common common;

  auto* gen = app.add_subcommand("gen-data", "Write a TAB-separated arithmetic dataset");
  add_common(gen, common);
  std::string gen_out = "data/train.tsv", gen_eval_out;
  std::int64_t gen_count = 50000;
  gen->add_option("--out", gen_out, "Output path");
  gen->add_option("--count", gen_count, "Number of examples");
  gen->add_option("--eval-out", gen_eval_out, "Also write the held-out evaluation set here");

  auto* tb = app.add_subcommand("train-backbone", "Train the denoising backbone");
  add_common(tb, common);
  std::optional<std::int64_t> tb_epochs;
  tb->add_option("--epochs", tb_epochs);

  auto* tm = app.add_subcommand("train-mrp", "Train the residual head against a frozen backbone");
  add_common(tm, common);
  std::optional<std::string> objective;
  std::optional<std::int64_t> unroll, depth, tm_epochs;
  tm->add_option("--objective", objective, "residual or direct");
  tm->add_option("--unroll", unroll, "Unrolled steps per update");
  tm->add_option("--depth", depth, "Transformer layers in the head");
  tm->add_option("--epochs", tm_epochs);

  std::optional<std::string> mode, policy;
  std::optional<std::int64_t> k, r;
  std::optional<double> tau;
  bool strict = false;
  auto add_decode = [&](CLI::App* cmd) {
    cmd->add_option("--mode", mode, "baseline, direct or spec");
    cmd->add_option("--policy", policy, "static or dynamic");
    cmd->add_option("--k", k, "MRP rounds per backbone forward");
    cmd->add_option("--r", r, "Tokens per step (static policy)");
    cmd->add_option("--tau", tau, "Confidence threshold (selects the dynamic policy)");
    cmd->add_flag("--strict-recompute", strict, "Recompute the backbone after a rejected draft");
  };

  auto* g = app.add_subcommand("generate", "Decode one prompt");
  add_common(g, common);
  add_decode(g);
  std::string prompt, trace_path;
  bool verbose = false;
  g->add_option("--prompt", prompt, "Prompt text, e.g. 17+25=")->required();
  g->add_flag("-v,--verbose", verbose, "Per-step log on stderr");
  g->add_option("--trace", trace_path, "Write the decode trace here");

  auto* ev = app.add_subcommand("eval", "Accuracy and forwards per token on the held-out set");
  add_common(ev, common);
  add_decode(ev);

  auto* me = app.add_subcommand("measure", "Residual magnitudes across denoising states");
  add_common(me, common);
  std::optional<std::int64_t> min_blocks;
  me->add_option("--min-blocks", min_blocks);

  auto* sw = app.add_subcommand("sweep", "Threshold x K grid (or depth sweep)");
  add_common(sw, common);
  std::string depth_pattern;
  sw->add_option("--depth-pattern", depth_pattern, "MRP checkpoint path with {depth}; enables the depth sweep");

  auto* th = app.add_subcommand("theory", "Lipschitz, contraction and decay checks");
  add_common(th, common);
  bool random_backbone = false;
  th->add_flag("--random-backbone", random_backbone, "Use an untrained backbone");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = resolve(common);
    if (objective) cfg.mrp.objective = parse_objective(*objective);
    if (unroll) cfg.mrp.unroll = *unroll;
    if (depth) cfg.mrp.depth = *depth;
    if (tb_epochs) cfg.train_backbone.epochs = *tb_epochs;
    if (tm_epochs) cfg.train_mrp.epochs = *tm_epochs;
    if (mode) cfg.decode.mode = parse_mode(*mode);
    if (tau) cfg.decode.policy = Policy::threshold(*tau);
    if (r) cfg.decode.policy = Policy::fixed(*r);
    if (policy)
      cfg.decode.policy = policy_from(*policy, r.value_or(cfg.decode.policy.r), tau.value_or(cfg.decode.policy.tau));
    if (k) cfg.decode.k = *k;
    if (strict) cfg.decode.strict_recompute_on_reject = true;
    if (min_blocks) cfg.measure.min_blocks = *min_blocks;
    cfg.validate();

    if (*gen) return cmd_gen_data(cfg, gen_out, gen_count, gen_eval_out);
    if (*tb) return cmd_train_backbone(cfg);
    if (*tm) return cmd_train_mrp(cfg);
    if (*g) return cmd_generate(cfg, prompt, verbose, trace_path);
    if (*ev) return cmd_eval(cfg);
    if (*me) return cmd_measure(cfg);
    if (*sw) return cmd_sweep(cfg, !depth_pattern.empty(), depth_pattern);
    if (*th) return cmd_theory(cfg, random_backbone);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::invalid_config:
      case ErrorKind::invalid_shape:
      case ErrorKind::unknown_symbol: return kExitConfig;
      case ErrorKind::missing_artifact:
      case ErrorKind::io: return kExitMissing;
      default: return kExitAssertion;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAssertion;
  }
  return kExitOk;
}
