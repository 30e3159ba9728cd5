#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "mrp/corpus.hpp"
#include "mrp/diffusion.hpp"
#include "mrp/mrp_head.hpp"
#include "mrp/optim.hpp"

namespace mrp {

enum class RevealOrder { lowest_index, confidence };

struct TrainConfig {
  std::int64_t epochs = 1;
  std::int64_t batch_size = 16;
  double peak_lr = 1e-3;
  double min_lr = 1e-5;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  double t_kd = 1.0;
  std::int64_t unroll = 2;
  std::int64_t reveal_k = 1;
  std::vector<double> step_weights;  // empty -> uniform over unroll steps
  RevealOrder reveal_order = RevealOrder::lowest_index;
  std::uint64_t seed = 0;
  CorruptOptions corrupt;

  std::vector<double> weights() const {
    if (step_weights.empty()) return std::vector<double>(static_cast<std::size_t>(unroll), 1.0 / static_cast<double>(unroll));
    return step_weights;
  }

  void validate() const {
    require(epochs >= 1 && batch_size >= 1, ErrorKind::invalid_config, "epochs and batch_size must be >= 1");
    require(t_kd > 0.0, ErrorKind::invalid_config, "T_KD must be positive");
    require(unroll >= 1 && reveal_k >= 1, ErrorKind::invalid_config, "unroll and reveal_k must be >= 1");
    require(peak_lr > 0.0 && min_lr >= 0.0 && min_lr <= peak_lr, ErrorKind::invalid_config, "bad learning-rate range");
    if (!step_weights.empty()) {
      require(static_cast<std::int64_t>(step_weights.size()) == unroll, ErrorKind::invalid_config,
              "need one step weight per unroll step");
      const double s = std::accumulate(step_weights.begin(), step_weights.end(), 0.0);
      require(std::abs(s - 1.0) < 1e-9, ErrorKind::invalid_config, "step weights must sum to 1");
    }
  }
};

struct LogRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<double> step_losses;
  double wall_seconds = 0.0;
};

inline void write_log_csv(std::ostream& os, const std::vector<LogRow>& rows, std::int64_t unroll) {
  os << "step,lr,loss";
  for (std::int64_t j = 1; j <= unroll; ++j) os << ",loss_step" << j;
  os << ",wall_seconds\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.lr << ',' << r.loss;
    for (std::int64_t j = 0; j < unroll; ++j)
      os << ',' << (static_cast<std::size_t>(j) < r.step_losses.size() ? r.step_losses[j] : 0.0);
    os << ',' << r.wall_seconds << '\n';
  }
}

using StepCallback = std::function<void(const LogRow&)>;

inline double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double ss = 0.0;
  for (auto& p : params)
    if (p.has_grad())
      for (double g : p.mutable_grad().span()) ss += g * g;
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad()) p.mutable_grad() *= s;
  }
  return norm;
}

// Deterministic epoch-wise shuffled minibatches.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::int64_t batch, std::uint64_t seed) : n_(n), batch_(batch), rng_(seed) { reshuffle(); }

  std::int64_t steps_per_epoch() const { return static_cast<std::int64_t>((n_ + batch_ - 1) / batch_); }

  std::vector<std::size_t> next() {
    if (cursor_ >= n_) reshuffle();
    std::vector<std::size_t> out;
    for (std::int64_t i = 0; i < batch_ && cursor_ < n_; ++i) out.push_back(order_[cursor_++]);
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
    cursor_ = 0;
  }

  std::size_t n_;
  std::int64_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Cross-entropy of the backbone on the masked positions of corrupted sequences.
inline Tensor masked_ce_loss(std::span<const SequenceState> xt, std::span<const SequenceState> x0,
                             const BackboneParams& params, const BackboneConfig& cfg) {
  auto out = forward(xt, params, cfg);
  std::vector<int> targets;
  std::vector<char> sel;
  for (std::size_t s = 0; s < xt.size(); ++s)
    for (std::int64_t i = 0; i < xt[s].length(); ++i) {
      targets.push_back(x0[s].ids[i]);
      sel.push_back(xt[s].masked[i]);
    }
  return cross_entropy(out.logits, targets, sel);
}

struct BackboneTrainResult {
  BackboneParams params;
  std::vector<LogRow> curve;
};

inline BackboneTrainResult train_backbone(std::span<const Example> examples, const BackboneConfig& bcfg,
                                          const TrainConfig& tcfg, const StepCallback& on_step = {}) {
  require(!examples.empty(), ErrorKind::invalid_config, "training set is empty");
  bcfg.validate();
  tcfg.validate();
  BackboneTrainResult res{BackboneParams::init(bcfg, mix_seed(tcfg.seed, 1)), {}};
  std::vector<Tensor> params = res.params.tensors();
  BatchStream stream(examples.size(), tcfg.batch_size, mix_seed(tcfg.seed, 2));
  const std::int64_t total = stream.steps_per_epoch() * tcfg.epochs;
  AdamWConfig acfg;
  acfg.peak_lr = tcfg.peak_lr;
  acfg.min_lr = tcfg.min_lr;
  acfg.weight_decay = tcfg.weight_decay;
  acfg.total_steps = total;
  OptimizerState opt = make_optimizer(params, acfg);
  Rng mask_rng(mix_seed(tcfg.seed, 3));
  const auto t0 = std::chrono::steady_clock::now();

  for (std::int64_t step = 0; step < total; ++step) {
    std::vector<SequenceState> x0, xt;
    for (std::size_t idx : stream.next()) {
      x0.push_back(examples[idx].clean_state(bcfg.block_size));
      xt.push_back(corrupt(x0.back(), mask_rng, tcfg.corrupt));
    }
    Tensor loss = masked_ce_loss(xt, x0, res.params, bcfg);
    if (!std::isfinite(loss.item()))
      fail(ErrorKind::divergence, "backbone loss became non-finite at step " + std::to_string(step));
    backward(loss);
    clip_grad_norm(params, tcfg.grad_clip);
    LogRow row;
    row.step = step;
    row.lr = adamw_step(params, opt);
    row.loss = loss.item();
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    zero_grad(params);
    if (on_step) on_step(row);
    res.curve.push_back(std::move(row));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Residual knowledge distillation

// For every block holding masks, restores the k masked positions chosen by
// `order` to their clean tokens. Confidence order needs the logits of x.
inline SequenceState reveal_ground_truth(SequenceState x, const SequenceState& x0, std::int64_t k,
                                         RevealOrder order = RevealOrder::lowest_index,
                                         const Array* logits = nullptr) {
  require(x.length() == x0.length(), ErrorKind::invalid_shape, "reveal_ground_truth: length mismatch");
  require(order == RevealOrder::lowest_index || logits != nullptr, ErrorKind::invalid_config,
          "confidence-ordered reveal needs logits");
  for (int b = x.first_response_block(); b < x.num_blocks(); ++b) {
    auto [lo, hi] = x.block_range(b);
    std::vector<std::pair<double, std::int64_t>> cand;
    for (auto i = lo; i < hi; ++i)
      if (x.masked[i]) cand.emplace_back(order == RevealOrder::confidence ? -max_prob(logits->row(i)).first : 0.0, i);
    std::stable_sort(cand.begin(), cand.end());
    const auto take = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(k));
    for (std::size_t c = 0; c < take; ++c) {
      const auto i = cand[c].second;
      require(x0.ids[i] != kMask, ErrorKind::contract_violation, "clean sequence contains a mask");
      x.ids[i] = x0.ids[i];
      x.masked[i] = 0;
    }
  }
  advance_block(x);
  return x;
}

// The head as used by the training graph: (sequences, running hidden) -> residual tensors.
using TrainResidualFn = std::function<ResidualOutput(std::span<const SequenceState>, const Tensor&)>;

struct KdLoss {
  Tensor total;
  std::vector<double> step_losses;
};

struct UnrollInputs {
  std::vector<SequenceState> x0;
  std::vector<SequenceState> xt;
};

// Unrolled KD objective over one batch. Teacher and starting forwards run
// without gradient; only `g` contributes trainable nodes.
inline KdLoss unrolled_kd_loss(const UnrollInputs& in, const BackboneParams& backbone, const BackboneConfig& bcfg,
                               const TrainResidualFn& g, const TrainConfig& tcfg, Objective objective) {
  const std::size_t n = in.xt.size();
  Array h0, logits0;
  {
    NoGradGuard guard;
    auto out = forward(in.xt, backbone, bcfg);
    h0 = out.hidden.value();
    logits0 = out.logits.value();
  }
  Tensor h_acc(h0);
  Tensor student(logits0);
  std::vector<SequenceState> cur = in.xt;
  Array cur_logits = logits0;
  const auto w = tcfg.weights();
  KdLoss res{Tensor(Array::scalar(0.0)), {}};
  const double inv_t = 1.0 / tcfg.t_kd;

  for (std::int64_t j = 0; j < tcfg.unroll; ++j) {
    std::vector<SequenceState> next;
    const std::int64_t L = cur.front().length();
    for (std::size_t s = 0; s < n; ++s) {
      Array rows;
      if (tcfg.reveal_order == RevealOrder::confidence) {
        rows = Array(Shape{L, cur_logits.cols()});
        std::copy(cur_logits.data() + s * L * cur_logits.cols(), cur_logits.data() + (s + 1) * L * cur_logits.cols(),
                  rows.data());
      }
      next.push_back(reveal_ground_truth(cur[s], in.x0[s], tcfg.reveal_k, tcfg.reveal_order,
                                         tcfg.reveal_order == RevealOrder::confidence ? &rows : nullptr));
    }
    Array teacher_logits;
    {
      NoGradGuard guard;
      teacher_logits = forward(next, backbone, bcfg).logits.value();
    }
    ResidualOutput r = g(next, h_acc);
    if (objective == Objective::residual) {
      h_acc = add(h_acc, r.delta_hidden);
      student = add(student, r.delta_logits);
    } else {
      h_acc = r.delta_hidden;
      student = r.delta_logits;
    }
    Array teacher = softmax_rows(teacher_logits * inv_t);
    std::vector<char> sel;
    for (const auto& x : next) sel.insert(sel.end(), x.masked.begin(), x.masked.end());
    Tensor lj = kl_to_logits(teacher, inv_t == 1.0 ? student : scale(student, inv_t), sel);
    res.step_losses.push_back(lj.item());
    res.total = add(res.total, scale(lj, w[static_cast<std::size_t>(j)]));
    cur = std::move(next);
    cur_logits = std::move(teacher_logits);
  }
  return res;
}

inline TrainResidualFn head_as_train_fn(const MrpHead& head, const BackboneParams& backbone,
                                        const BackboneConfig& bcfg) {
  return [&head, &backbone, &bcfg](std::span<const SequenceState> xs, const Tensor& h) {
    return mrp_forward(xs, h, head, backbone, bcfg);
  };
}

inline UnrollInputs corrupt_batch(std::span<const Example> batch, std::int64_t block_size, Rng& rng,
                                  const CorruptOptions& opt) {
  UnrollInputs in;
  for (const auto& ex : batch) {
    in.x0.push_back(ex.clean_state(block_size));
    in.xt.push_back(corrupt(in.x0.back(), rng, opt));
  }
  return in;
}

struct MrpTrainer {
  const BackboneParams& backbone;
  const BackboneConfig& bcfg;
  MrpHead& head;
  TrainConfig tcfg;
  OptimizerState opt;
  std::vector<Tensor> params;

  MrpTrainer(const BackboneParams& f, const BackboneConfig& fc, MrpHead& g, TrainConfig cfg, std::int64_t total_steps)
      : backbone(f), bcfg(fc), head(g), tcfg(std::move(cfg)), params(g.params.tensors()) {
    tcfg.validate();
    backbone.set_trainable(false);
    AdamWConfig acfg;
    acfg.peak_lr = tcfg.peak_lr;
    acfg.min_lr = tcfg.min_lr;
    acfg.weight_decay = tcfg.weight_decay;
    acfg.total_steps = total_steps;
    opt = make_optimizer(params, acfg);
  }

  // One optimisation step of g on an already corrupted batch.
  LogRow step(const UnrollInputs& in) {
    KdLoss loss = unrolled_kd_loss(in, backbone, bcfg, head_as_train_fn(head, backbone, bcfg), tcfg,
                                   head.config.objective);
    if (!std::isfinite(loss.total.item()))
      fail(ErrorKind::divergence, "MRP loss became non-finite at step " + std::to_string(opt.step_count));
    backward(loss.total);
    clip_grad_norm(params, tcfg.grad_clip);
    LogRow row;
    row.step = opt.step_count;
    row.lr = adamw_step(params, opt);
    row.loss = loss.total.item();
    row.step_losses = loss.step_losses;
    zero_grad(params);
    return row;
  }
};

// Residual-objective step: corrupt, unroll K reveals, KL against teacher, AdamW on g.
inline double mrp_train_step(MrpTrainer& trainer, std::span<const Example> batch, Rng& rng) {
  require(trainer.head.config.objective == Objective::residual, ErrorKind::invalid_config,
          "mrp_train_step expects a residual-objective head");
  return trainer.step(corrupt_batch(batch, trainer.bcfg.block_size, rng, trainer.tcfg.corrupt)).loss;
}

// Direct-distillation step: the student is g's own logits, no backbone logits added.
inline double direct_train_step(MrpTrainer& trainer, std::span<const Example> batch, Rng& rng) {
  require(trainer.head.config.objective == Objective::direct, ErrorKind::invalid_config,
          "direct_train_step expects a direct-objective head");
  return trainer.step(corrupt_batch(batch, trainer.bcfg.block_size, rng, trainer.tcfg.corrupt)).loss;
}

struct MrpTrainResult {
  MrpHead head;
  std::vector<LogRow> curve;
};

inline MrpTrainResult train_mrp(std::span<const Example> examples, const BackboneParams& backbone,
                                const BackboneConfig& bcfg, const MrpConfig& mcfg, const TrainConfig& tcfg,
                                const StepCallback& on_step = {}) {
  require(!examples.empty(), ErrorKind::invalid_config, "training set is empty");
  mcfg.validate();
  MrpTrainResult res{{mcfg, MrpParams::init(mcfg, bcfg.d_model, mix_seed(tcfg.seed, 11))}, {}};
  BatchStream stream(examples.size(), tcfg.batch_size, mix_seed(tcfg.seed, 12));
  const std::int64_t total = stream.steps_per_epoch() * tcfg.epochs;
  TrainConfig cfg = tcfg;
  cfg.unroll = mcfg.unroll;
  cfg.reveal_k = mcfg.reveal_k;
  MrpTrainer trainer(backbone, bcfg, res.head, cfg, total);
  Rng mask_rng(mix_seed(tcfg.seed, 13));
  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t s = 0; s < total; ++s) {
    std::vector<Example> batch;
    for (std::size_t idx : stream.next()) batch.push_back(examples[idx]);
    LogRow row = trainer.step(corrupt_batch(batch, bcfg.block_size, mask_rng, cfg.corrupt));
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_step) on_step(row);
    res.curve.push_back(std::move(row));
  }
  return res;
}

}  // namespace mrp
