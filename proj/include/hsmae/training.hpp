#pragma once

// Deterministic AdamW training for masked pretraining and band-matched fine-tuning,
// plus a central-difference gradient check.

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hsmae/alignment.hpp"
#include "hsmae/common.hpp"
#include "hsmae/datacube.hpp"
#include "hsmae/model.hpp"
#include "hsmae/patching.hpp"

namespace hsmae {

enum class TrainMode { pretrain, finetune };

struct TrainConfig {
  TrainMode mode = TrainMode::pretrain;
  bool freeze_encoder = false;
  MaskStrategy strategy = MaskStrategy::spatial_spectral;
  double ratio = 0.75;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
};

inline void validate(const TrainConfig& c) {
  require(std::isfinite(c.lr) && c.lr >= 0.0, "learning rate must be >= 0");
  require(c.steps >= 1, "steps must be >= 1");
  require(c.batch_size >= 1, "batch size must be >= 1");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0, "betas must lie in [0, 1)");
  require(c.weight_decay >= 0.0, "weight decay must be >= 0");
  require(!c.freeze_encoder || c.mode == TrainMode::finetune, "freeze_encoder is only valid when fine-tuning");
  if (c.mode == TrainMode::pretrain) {
    require(c.ratio >= 0.0 && c.ratio < 1.0, "mask ratio must lie in [0, 1)");
    require(c.strategy != MaskStrategy::fixed_bands, "pretraining needs a random mask strategy");
  }
}

/// AdamW moments, shaped like the model.
template <typename T>
struct OptState {
  ModelState<T> first;
  ModelState<T> second;
  std::size_t step = 0;
};

template <typename T>
OptState<T> make_opt_state(const ModelState<T>& m) {
  return {zeros_like(m), zeros_like(m), 0};
}

namespace detail {

template <typename T>
void check_finite_grads(const ModelState<T>& grad) {
  for (const auto& p : params(grad))
    if (!p.value->allFinite()) throw NonFiniteError("non-finite gradient in parameter '" + p.name + "'");
}

}  // namespace detail

/// One AdamW update on the batch-mean holistic loss. Returns the pre-update batch mean.
/// With freeze_encoder, patch_embed and encoder blocks are not touched.
template <typename T>
LossBreakdown train_step(ModelState<T>& model, OptState<T>& opt, std::span<const Sample<T>> batch,
                         const TrainConfig& cfg) {
  require(!batch.empty(), "train_step: empty batch");
  const GridDims dims = batch.front().plan.dims();
  for (const auto& s : batch) require(s.plan.dims() == dims, "train_step: samples differ in grid dims");
  const PosTables<T> pos = make_pos_tables<T>(dims, model.config);

  ModelState<T> grad = zeros_like(model);
  const T weight = static_cast<T>(1.0 / static_cast<double>(batch.size()));
  LossBreakdown mean;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const LossBreakdown l = loss_and_grad(model, batch[i], pos, &grad, weight, cfg.freeze_encoder);
    if (!std::isfinite(l.total)) {
      const bool bad_input = !batch[i].input.tokens.allFinite() || !batch[i].target.tokens.allFinite();
      throw NonFiniteError("non-finite loss at optimizer step " + std::to_string(opt.step) + ", batch sample " +
                           std::to_string(i) + (bad_input ? " (input contains non-finite values)" : ""));
    }
    mean.total += l.total / static_cast<double>(batch.size());
    mean.masked += l.masked / static_cast<double>(batch.size());
    mean.unmasked += l.unmasked / static_cast<double>(batch.size());
    mean.masked_pixels += l.masked_pixels;
    mean.unmasked_pixels += l.unmasked_pixels;
  }
  detail::check_finite_grads(grad);

  opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.adam_eps);
  const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);

  auto ps = params(model);
  auto gs = params(grad);
  auto ms = params(opt.first);
  auto vs = params(opt.second);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (cfg.freeze_encoder && ps[k].encoder_side) continue;
    auto theta = ps[k].value->array();
    auto g = gs[k].value->array();
    auto m = ms[k].value->array();
    auto v = vs[k].value->array();
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.square();
    if (ps[k].decays) theta *= decay;
    theta -= lr * (m / static_cast<T>(bc1)) / ((v / static_cast<T>(bc2)).sqrt() + eps);
  }
  return mean;
}

/// Sample indices of the batch used at a given step. Each epoch visits the dataset in a
/// seeded permutation; the last batch of an epoch may be short.
inline std::vector<std::size_t> batch_for_step(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                               std::size_t step) {
  const std::size_t per_epoch = (n + batch_size - 1) / batch_size;
  const std::size_t epoch = step / per_epoch, b = step % per_epoch;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, {0x5bu, epoch}));
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t lo = b * batch_size, hi = std::min(n, lo + batch_size);
  return {perm.begin() + static_cast<std::ptrdiff_t>(lo), perm.begin() + static_cast<std::ptrdiff_t>(hi)};
}

/// Mask seed for one sample at one step.
inline std::uint64_t mask_seed(std::uint64_t run_seed, std::size_t step, std::size_t sample) {
  return derive_seed(run_seed, {0x3a5cu, step, sample});
}

template <typename T>
struct TrainRun {
  ModelState<T> model;
  OptState<T> opt;
  BandStats stats;
};

template <typename T>
TrainRun<T> start_run(const ModelConfig& cfg, std::uint64_t init_seed, BandStats stats) {
  ModelState<T> m = init_model<T>(cfg, init_seed);
  OptState<T> o = make_opt_state(m);
  return {std::move(m), std::move(o), std::move(stats)};
}

template <typename T>
struct TrainHooks {
  /// Called with the step index and its pre-update batch loss.
  std::function<void(std::size_t, const LossBreakdown&)> on_step;
  /// Called after every checkpoint_every-th update (run.opt.step is the update count).
  std::function<void(const TrainRun<T>&)> on_checkpoint;
};

namespace detail {

template <typename T, typename MakeBatch>
void run_steps(TrainRun<T>& run, const TrainConfig& cfg, std::size_t n, MakeBatch&& make_batch,
               const TrainHooks<T>& hooks) {
  for (std::size_t step = run.opt.step; step < cfg.steps; ++step) {
    const auto idx = batch_for_step(n, cfg.batch_size, cfg.seed, step);
    const std::vector<Sample<T>> batch = make_batch(step, idx);
    const LossBreakdown loss = train_step<T>(run.model, run.opt, batch, cfg);
    if (hooks.on_step) hooks.on_step(step, loss);
    if (hooks.on_checkpoint && cfg.checkpoint_every && run.opt.step % cfg.checkpoint_every == 0)
      hooks.on_checkpoint(run);
  }
}

}  // namespace detail

/// Masked pretraining. Resumes from run.opt.step; each sample gets a fresh plan per step.
template <typename T>
void pretrain(TrainRun<T>& run, const TrainConfig& cfg, std::span<const Cube> dataset, const TrainHooks<T>& hooks = {}) {
  validate(cfg);
  require(cfg.mode == TrainMode::pretrain, "pretrain: config mode must be pretrain");
  require(!dataset.empty(), "pretrain: empty dataset");
  const ModelConfig& mc = run.model.config;
  std::vector<TokenGrid<T>> grids;
  for (const Cube& c : dataset) {
    grids.push_back(patchify(normalized<T>(c.values, run.stats), mc.patch, mc.group));
    require(grids.back().dims == grids.front().dims, "pretrain: cubes differ in shape");
  }
  const GridDims dims = grids.front().dims;
  detail::run_steps(run, cfg, dataset.size(),
                    [&](std::size_t step, const std::vector<std::size_t>& idx) {
                      std::vector<Sample<T>> batch;
                      for (std::size_t i : idx)
                        batch.push_back({grids[i], grids[i], sample_mask(cfg.strategy, dims, cfg.ratio, mask_seed(cfg.seed, step, i))});
                      return batch;
                    },
                    hooks);
}

/// Builds fixed-band samples: MSI assembled into HSI band space as input, true HSI as target.
template <typename T>
std::vector<Sample<T>> make_finetune_samples(std::span<const std::pair<Cube, Cube>> pairs, const BandMatchSet& matches,
                                             const BandStats& stats, const ModelConfig& mc) {
  std::vector<Sample<T>> out;
  for (const auto& [msi, hsi] : pairs) {
    const GridDims dims = make_grid_dims(hsi.height(), hsi.width(), hsi.channels(), mc.patch, mc.group);
    MaskPlan plan = mask_from_band_match(matches, dims);
    require(plan.visible_count() > 0, "no visible tokens: no HSI band group contains a matched band");
    out.push_back(make_sample<T>(assemble_input(msi, matches, dims), hsi, plan, stats, mc));
  }
  return out;
}

template <typename T>
void finetune(TrainRun<T>& run, const TrainConfig& cfg, std::span<const std::pair<Cube, Cube>> pairs,
              const BandMatchSet& matches, const TrainHooks<T>& hooks = {}) {
  validate(cfg);
  require(cfg.mode == TrainMode::finetune, "finetune: config mode must be finetune");
  require(!pairs.empty(), "finetune: no training pairs");
  const std::vector<Sample<T>> samples = make_finetune_samples<T>(pairs, matches, run.stats, run.model.config);
  detail::run_steps(run, cfg, samples.size(),
                    [&](std::size_t, const std::vector<std::size_t>& idx) {
                      std::vector<Sample<T>> batch;
                      for (std::size_t i : idx) batch.push_back(samples[i]);
                      return batch;
                    },
                    hooks);
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

/// Compares the analytic gradient of the total loss with central differences on
/// n_params scalar parameters drawn uniformly without replacement. Relative error is
/// |a - n| / (|a| + |n| + 1e-12). An optional filter restricts the candidate tensors.
inline GradCheckResult grad_check(const ModelState<double>& m, const Sample<double>& sample, double eps,
                                  std::size_t n_params, std::uint64_t seed = 0,
                                  const std::function<bool(const std::string&)>& filter = {}) {
  require(eps >= 1e-7 && eps <= 1e-3, "grad_check: eps must lie in [1e-7, 1e-3]");
  const PosTables<double> pos = make_pos_tables<double>(sample.plan.dims(), m.config);
  ModelState<double> grad = zeros_like(m);
  loss_and_grad(m, sample, pos, &grad);

  ModelState<double> probe = m;
  auto probe_params = params(probe);
  auto grad_params = params(grad);
  std::vector<std::pair<std::size_t, Eigen::Index>> candidates;
  for (std::size_t k = 0; k < probe_params.size(); ++k)
    if (!filter || filter(probe_params[k].name))
      for (Eigen::Index i = 0; i < probe_params[k].value->size(); ++i) candidates.push_back({k, i});
  std::vector<std::pair<std::size_t, Eigen::Index>> chosen;
  std::mt19937_64 rng(derive_seed(seed, {0x6c}));
  std::sample(candidates.begin(), candidates.end(), std::back_inserter(chosen), n_params, rng);

  GradCheckResult result;
  for (auto [k, i] : chosen) {
    double& v = probe_params[k].value->data()[i];
    const double saved = v;
    v = saved + eps;
    const double up = loss_and_grad(probe, sample, pos).total;
    v = saved - eps;
    const double down = loss_and_grad(probe, sample, pos).total;
    v = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = grad_params[k].value->data()[i];
    const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
    if (rel >= result.max_rel_err) {
      result.max_rel_err = rel;
      result.worst_param = probe_params[k].name + "[" + std::to_string(i) + "]";
    }
    ++result.checked;
  }
  return result;
}

}  // namespace hsmae
