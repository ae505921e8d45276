#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace hsmae;

namespace {

std::vector<Cube> desk_cubes(std::size_t n, std::uint64_t seed) {
  std::vector<Cube> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen_synthetic({32, 32, 24, 3, derive_seed(seed, {i}), seed, 0.0}));
  return out;
}

TrainConfig short_config(std::size_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 2;
  c.seed = 3;
  return c;
}

template <typename T>
std::vector<Sample<T>> desk_batch(const ModelConfig& mc, std::uint64_t seed, std::size_t n = 2) {
  const auto cubes = desk_cubes(n, seed);
  const BandStats stats = compute_stats(cubes);
  std::vector<Sample<T>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const GridDims d = make_grid_dims(32, 32, 24, mc.patch, mc.group);
    out.push_back(make_sample<T>(cubes[i], cubes[i], sample_mask(MaskStrategy::spatial_spectral, d, 0.75, i), stats, mc));
  }
  return out;
}

/// Small cube for finite differences: 8x8x4 with 4x4x2 tokens gives 8 tokens.
Sample<double> grad_sample(const ModelConfig& mc, std::uint64_t seed) {
  const Cube c = fixtures::random_cube(8, 8, 4, seed);
  const BandStats s = compute_stats(std::span<const Cube>(&c, 1));
  const GridDims d = make_grid_dims(8, 8, 4, mc.patch, mc.group);
  return make_sample<double>(c, c, sample_mask(MaskStrategy::spatial_spectral, d, 0.5, seed), s, mc);
}

ModelState<double> jittered(const ModelConfig& mc, std::uint64_t seed, double sigma) {
  ModelState<double> m = init_model<double>(mc, seed);
  std::mt19937_64 rng(derive_seed(seed, {0x77}));
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& p : params(m))
    for (Eigen::Index i = 0; i < p.value->size(); ++i) p.value->data()[i] += n(rng);
  return m;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.freeze_encoder = true;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c.mode = TrainMode::finetune;
  EXPECT_NO_THROW(validate(c));
  TrainConfig r;
  r.ratio = 1.5;
  EXPECT_THROW(validate(r), std::invalid_argument);
  r.ratio = 0.75;
  r.steps = 0;
  EXPECT_THROW(validate(r), std::invalid_argument);
}

TEST(TrainStep, FrozenEncoderBytesUnchanged) {
  auto m = init_model<float>(desk_preset(), 1);
  const auto before = m;
  auto opt = make_opt_state(m);
  TrainConfig c;
  c.mode = TrainMode::finetune;
  c.freeze_encoder = true;
  const auto batch = desk_batch<float>(m.config, 4);
  train_step<float>(m, opt, batch, c);
  const auto pa = params(m);
  const auto pb = params(before);
  bool decoder_moved = false;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    if (pa[k].encoder_side)
      EXPECT_TRUE(fixtures::same_bytes(*pa[k].value, *pb[k].value)) << pa[k].name;
    else
      decoder_moved |= !fixtures::same_bytes(*pa[k].value, *pb[k].value);
  }
  EXPECT_TRUE(decoder_moved);
}

TEST(TrainStep, ZeroLearningRateOnlyAdvancesCounter) {
  auto m = init_model<float>(desk_preset(), 2);
  const auto before = m;
  auto opt = make_opt_state(m);
  TrainConfig c;
  c.lr = 0.0;
  train_step<float>(m, opt, desk_batch<float>(m.config, 5), c);
  EXPECT_EQ(opt.step, 1u);
  const auto pa = params(m);
  const auto pb = params(before);
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_TRUE(fixtures::same_bytes(*pa[k].value, *pb[k].value));
}

TEST(TrainStep, FirstUpdateMatchesAdamWFormula) {
  ModelConfig mc = desk_preset();
  auto m = init_model<double>(mc, 3);
  const auto before = m;
  const auto batch = desk_batch<double>(mc, 6, 1);
  auto grad = zeros_like(m);
  loss_and_grad(m, batch[0], make_pos_tables<double>(batch[0].plan.dims(), mc), &grad);
  auto opt = make_opt_state(m);
  TrainConfig c;
  train_step<double>(m, opt, batch, c);
  const auto pa = params(m);
  const auto pb = params(before);
  const auto pg = params(grad);
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(pa[k].value->size(), 20); ++i) {
      const double g = pg[k].value->data()[i];
      double expect = pb[k].value->data()[i];
      if (pa[k].decays) expect *= 1.0 - c.lr * c.weight_decay;
      // m_hat = g and v_hat = g^2 after one step.
      expect -= c.lr * g / (std::abs(g) + c.adam_eps);
      EXPECT_NEAR(pa[k].value->data()[i], expect, 1e-12) << pa[k].name;
    }
}

TEST(TrainStep, NonFiniteInputAbortsWithDiagnostic) {
  auto m = init_model<float>(desk_preset(), 2);
  auto opt = make_opt_state(m);
  auto batch = desk_batch<float>(m.config, 7);
  batch[1].input.tokens(batch[1].plan.visible().front(), 0) = std::numeric_limits<float>::infinity();
  try {
    train_step<float>(m, opt, batch, TrainConfig{});
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos);
  }
}

TEST(Batching, EpochsVisitEverySampleOnce) {
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i : batch_for_step(11, 3, 9, epoch * 4 + b)) seen.insert(i);
    EXPECT_EQ(seen.size(), 11u);
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 11u);
  }
  EXPECT_EQ(batch_for_step(11, 3, 9, 3).size(), 2u);
}

TEST(Pretrain, StepZeroLossIsInitForwardLoss) {
  const auto cubes = desk_cubes(4, 1);
  const TrainConfig c = short_config(1);
  auto run = start_run<float>(desk_preset(), 7, compute_stats(cubes));
  const auto init = run.model;
  double logged = -1.0;
  TrainHooks<float> hooks;
  hooks.on_step = [&](std::size_t, const LossBreakdown& l) { logged = l.total; };
  pretrain(run, c, std::span<const Cube>(cubes), hooks);

  const auto idx = batch_for_step(cubes.size(), c.batch_size, c.seed, 0);
  double expect = 0.0;
  const GridDims d = make_grid_dims(32, 32, 24, 8, 4);
  for (std::size_t i : idx)
    expect += forward(init, cubes[i], sample_mask(c.strategy, d, c.ratio, mask_seed(c.seed, 0, i)), run.stats).loss.total;
  EXPECT_NEAR(logged, expect / idx.size(), 1e-6);
}

TEST(Pretrain, IdenticalSeedsGiveIdenticalCheckpoints) {
  const auto cubes = desk_cubes(4, 2);
  const TrainConfig c = short_config(4);
  std::vector<std::string> a, b;
  for (auto* out : {&a, &b}) {
    auto run = start_run<float>(desk_preset(), 1, compute_stats(cubes));
    TrainHooks<float> hooks;
    hooks.on_step = [&](std::size_t, const LossBreakdown&) { out->push_back(encode_checkpoint(Checkpoint<float>{run})); };
    pretrain(run, c, std::span<const Cube>(cubes), hooks);
  }
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a, b);
}

TEST(Pretrain, ResumeReproducesTrajectory) {
  const auto cubes = desk_cubes(4, 3);
  TrainConfig c = short_config(6);
  c.checkpoint_every = 3;
  std::vector<double> full;
  std::string mid;
  auto run = start_run<float>(desk_preset(), 2, compute_stats(cubes));
  TrainHooks<float> hooks;
  hooks.on_step = [&](std::size_t, const LossBreakdown& l) { full.push_back(l.total); };
  hooks.on_checkpoint = [&](const TrainRun<float>& r) {
    if (r.opt.step == 3) mid = encode_checkpoint(Checkpoint<float>{r});
  };
  pretrain(run, c, std::span<const Cube>(cubes), hooks);

  auto resumed = decode_checkpoint<float>(mid).run;
  ASSERT_EQ(resumed.opt.step, 3u);
  std::vector<double> tail;
  TrainHooks<float> h2;
  h2.on_step = [&](std::size_t, const LossBreakdown& l) { tail.push_back(l.total); };
  pretrain(resumed, c, std::span<const Cube>(cubes), h2);
  ASSERT_EQ(tail.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(tail[i], full[3 + i]);
  EXPECT_EQ(encode_checkpoint(Checkpoint<float>{resumed}), encode_checkpoint(Checkpoint<float>{run}));
}

TEST(Finetune, EmptyMatchesMeanNoVisibleTokens) {
  const auto cubes = desk_cubes(1, 4);
  const BandMatchSet none = match_bands(sensors::desk_msi(), uniform_band_table("far", 24, 3000.0, 3100.0));
  std::vector<std::pair<Cube, Cube>> pairs{{simulate_msi(cubes[0], sensors::desk_msi()), cubes[0]}};
  auto run = start_run<float>(desk_preset(), 1, compute_stats(cubes));
  TrainConfig c = short_config(1);
  c.mode = TrainMode::finetune;
  try {
    finetune(run, c, std::span<const std::pair<Cube, Cube>>(pairs), none);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("no visible tokens"), std::string::npos);
  }
}

TEST(Finetune, FrozenRunKeepsEncoder) {
  const auto cubes = desk_cubes(2, 5);
  const BandMatchSet matches = match_bands(sensors::desk_msi(), sensors::desk_hsi());
  std::vector<std::pair<Cube, Cube>> pairs;
  for (const Cube& c : cubes) pairs.emplace_back(simulate_msi(c, sensors::desk_msi()), c);
  auto run = start_run<float>(desk_preset(), 1, compute_stats(cubes));
  const auto before = run.model;
  TrainConfig c = short_config(3);
  c.mode = TrainMode::finetune;
  c.freeze_encoder = true;
  finetune(run, c, std::span<const std::pair<Cube, Cube>>(pairs), matches);
  const auto pa = params(run.model);
  const auto pb = params(before);
  for (std::size_t k = 0; k < pa.size(); ++k)
    if (pa[k].encoder_side) EXPECT_TRUE(fixtures::same_bytes(*pa[k].value, *pb[k].value)) << pa[k].name;
}

TEST(GradCheck, DeskPresetAgreesWithFiniteDifferences) {
  ModelConfig mc = desk_preset();
  mc.patch = 4;
  mc.group = 2;
  const auto m = jittered(mc, 1, 0.1);
  const GradCheckResult r = grad_check(m, grad_sample(mc, 1), 1e-5, 200, 1);
  EXPECT_EQ(r.checked, 200u);
  EXPECT_LT(r.max_rel_err, 1e-4) << r.worst_param;
}

TEST(GradCheck, HeadOnlyModelIsNearExact) {
  ModelConfig mc = desk_preset();
  mc.patch = 4;
  mc.group = 2;
  mc.enc_blocks = 0;
  mc.dec_blocks = 0;
  const auto m = jittered(mc, 2, 0.1);
  const GradCheckResult r =
      grad_check(m, grad_sample(mc, 2), 1e-5, 200, 2, [](const std::string& n) { return n.starts_with("head."); });
  EXPECT_LT(r.max_rel_err, 1e-8) << r.worst_param;
}

TEST(GradCheck, EpsOutsideRangeThrows) {
  ModelConfig mc = desk_preset();
  mc.patch = 4;
  mc.group = 2;
  const auto m = init_model<double>(mc, 1);
  const auto s = grad_sample(mc, 1);
  EXPECT_THROW(grad_check(m, s, 1e-2, 10), std::invalid_argument);
  EXPECT_THROW(grad_check(m, s, 1e-9, 10), std::invalid_argument);
}
