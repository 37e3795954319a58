#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "fusecore/checkpoint.hpp"
#include "fusecore/error.hpp"
#include "fusecore/lora.hpp"
#include "fusecore/training.hpp"

namespace fusecore {
namespace {

Config small_config(std::uint64_t seed) {
  Config c = preset_config("toy");
  c.seed = seed;
  c.perception.dim = 16;
  c.perception.layers = 1;
  c.perception.heads = 2;
  c.fusion.queries = 4;
  c.fusion.query_dim = 16;
  c.fusion.model_dim = 16;
  c.fusion.layers = 1;
  c.fusion.heads = 2;
  c.fusion.ffn_multiplier = 2;
  c.lm.dim = 32;
  c.lm.layers = 1;
  c.lm.heads = 2;
  c.lm.max_length = 96;
  c.lm.ffn_multiplier = 2;
  c.lora.rank = 2;
  c.lora.alpha = 4.0;
  validate(c);
  return c;
}

std::vector<Example> small_data(const Model& model, std::size_t n, std::optional<Task> task) {
  std::vector<Sample> samples;
  for (std::uint64_t s = 0; s < n; ++s) samples.push_back(make_sample(s, model.config));
  return examples_from_samples(model, samples, task);
}

OptimConfig quick_optim(int steps) {
  OptimConfig o;
  o.lr = 3e-3;
  o.steps = steps;
  o.batch_size = 4;
  o.warmup_steps = 2;
  return o;
}

std::map<std::string, std::vector<double>> snapshot(const Model& model) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : model.store.all()) out[p.name] = p.value.to_vector();
  return out;
}

TEST(CosineLrTest, WarmupIsLinearAndPeaksAtBase) {
  const LrSchedule s{10, 110, 2e-3, 1e-5};
  EXPECT_EQ(cosine_lr(0, s), 0.0);
  EXPECT_DOUBLE_EQ(cosine_lr(5, s), 1e-3);
  EXPECT_EQ(cosine_lr(10, s), 2e-3);
  EXPECT_NEAR(cosine_lr(9, s), cosine_lr(10, s) - 2e-4, 1e-12);
  EXPECT_NEAR(cosine_lr(11, s), cosine_lr(10, s), 1e-6);
}

TEST(CosineLrTest, FollowsHalfCosineToFloor) {
  const LrSchedule s{10, 110, 2e-3, 1e-5};
  for (std::int64_t step = 10; step <= 110; step += 7) {
    const double progress = static_cast<double>(step - 10) / 100.0;
    const double expected = 1e-5 + 0.5 * (2e-3 - 1e-5) * (1.0 + std::cos(std::numbers::pi * progress));
    EXPECT_NEAR(cosine_lr(step, s), expected, 1e-15) << step;
  }
  EXPECT_NEAR(cosine_lr(60, s), 0.5 * (2e-3 + 1e-5), 1e-15);
  EXPECT_EQ(cosine_lr(110, s), 1e-5);
  EXPECT_EQ(cosine_lr(500, s), 1e-5);
  EXPECT_THROW(cosine_lr(-1, s), ContractError);
}

TEST(CosineLrTest, ContinuousAtWarmupBoundary) {
  for (std::int64_t warm : {1, 3, 2000}) {
    const LrSchedule s{warm, warm * 10, 1e-4, 0.0};
    const double left = s.base_lr * static_cast<double>(warm) / static_cast<double>(warm);
    EXPECT_EQ(cosine_lr(warm, s), s.base_lr);
    EXPECT_NEAR(left, cosine_lr(warm, s), 1e-12);
  }
}

TEST(AdamWTest, FirstStepMatchesClosedForm) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> d(0.0, 1.0);
  ParameterStore store;
  Tensor w = store.add("w", Tensor::filled({3, 4}, 0.0));
  Tensor frozen = store.add("f", Tensor::filled({2}, 0.5));
  store.get("f").frozen = true;
  for (double& x : w.mutable_data()) x = d(gen);
  const std::vector<double> w0 = w.to_vector();
  std::vector<double> g(w0.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = d(gen);
    w.mutable_grad()[i] = g[i];
  }
  frozen.mutable_grad()[0] = 1.0;

  OptimConfig o;
  o.beta1 = 0.9;
  o.beta2 = 0.98;
  o.eps = 1e-8;
  o.weight_decay = 0.05;
  const double lr = 1e-3;
  AdamState state;
  adamw_update(store, state, lr, o);
  // First step from zero moments: m_hat = g and v_hat = g^2.
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double expected = w0[i] - lr * (g[i] / (std::abs(g[i]) + o.eps) + o.weight_decay * w0[i]);
    EXPECT_NEAR(w.to_vector()[i], expected, 1e-12);
  }
  EXPECT_EQ(frozen.to_vector(), std::vector<double>(2, 0.5));
  EXPECT_EQ(state.step, 1);
  EXPECT_EQ(state.moments.count("f"), 0u);
}

TEST(AdamWTest, SecondStepMatchesRecurrence) {
  ParameterStore store;
  Tensor w = store.add("w", Tensor::filled({1}, 0.7));
  OptimConfig o;
  o.beta1 = 0.8;
  o.beta2 = 0.9;
  o.eps = 1e-6;
  o.weight_decay = 0.1;
  AdamState state;
  const double g1 = 0.3;
  const double g2 = -1.2;
  w.mutable_grad()[0] = g1;
  adamw_update(store, state, 0.01, o);
  const double w1 = 0.7 - 0.01 * (g1 / (std::abs(g1) + 1e-6) + 0.1 * 0.7);
  w.mutable_grad()[0] = g2;
  adamw_update(store, state, 0.02, o);
  const double m = 0.8 * 0.2 * g1 + 0.2 * g2;
  const double v = 0.9 * 0.1 * g1 * g1 + 0.1 * g2 * g2;
  const double m_hat = m / (1.0 - 0.8 * 0.8);
  const double v_hat = v / (1.0 - 0.9 * 0.9);
  const double w2 = w1 - 0.02 * (m_hat / (std::sqrt(v_hat) + 1e-6) + 0.1 * w1);
  EXPECT_NEAR(w.to_vector()[0], w2, 1e-12);
}

TEST(ClipTest, RescalesToMaxNorm) {
  ParameterStore store;
  Tensor a = store.add("a", Tensor::filled({2}, 0.0));
  Tensor b = store.add("b", Tensor::filled({1}, 0.0));
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 0.0;
  b.mutable_grad()[0] = 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(store, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

TEST(BatchOrderTest, EachEpochIsAPermutation) {
  std::vector<int> seen(10, 0);
  for (std::int64_t step = 0; step < 5; ++step) {
    for (std::size_t i : batch_indices(3, step, 2, 10)) ++seen[i];
  }
  EXPECT_EQ(seen, std::vector<int>(10, 1));
  EXPECT_EQ(batch_indices(3, 7, 4, 10), batch_indices(3, 7, 4, 10));
  EXPECT_NE(batch_indices(3, 0, 10, 10), batch_indices(4, 0, 10, 10));
}

TEST(TotalStepsTest, EpochsOverrideSteps) {
  OptimConfig o;
  o.steps = 50;
  o.batch_size = 8;
  EXPECT_EQ(total_steps_for(o, 64), 50);
  o.epochs = 3;
  EXPECT_EQ(total_steps_for(o, 20), 8);
}

TEST(FreezeTest, StageOneTrainsOnlyTheFusionCore) {
  auto model = Model::create(small_config(1));
  apply_freeze_plan(*model, 1);
  for (const auto& p : model->store.all()) {
    EXPECT_EQ(p.frozen, !p.name.starts_with("fusion.")) << p.name;
    EXPECT_EQ(p.value.requires_grad(), !p.frozen) << p.name;
  }
}

TEST(FreezeTest, StageTwoAddsTrainableAdapters) {
  auto model = Model::create(small_config(2));
  apply_freeze_plan(*model, 2);
  EXPECT_TRUE(has_lora(model->lm));
  for (const auto& p : model->store.all()) {
    const bool trainable = p.name.starts_with("fusion.") || p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b");
    EXPECT_EQ(p.frozen, !trainable) << p.name;
  }
  EXPECT_THROW(apply_freeze_plan(*model, 3), ContractError);
}

TEST(FreezeTest, FrozenParametersStayBitIdenticalThroughTraining) {
  auto model = Model::create(small_config(3));
  const auto data = small_data(*model, 8, std::nullopt);
  TrainOptions s1;
  s1.stage = 1;
  s1.optim = quick_optim(20);
  const auto before1 = snapshot(*model);
  train_stage(*model, data, s1);
  for (const auto& p : model->store.all()) {
    if (p.frozen) EXPECT_EQ(p.value.to_vector(), before1.at(p.name)) << p.name;
  }
  TrainOptions s2 = s1;
  s2.stage = 2;
  apply_freeze_plan(*model, 2);
  const auto before2 = snapshot(*model);
  train_stage(*model, data, s2);
  int moved = 0;
  for (const auto& p : model->store.all()) {
    if (p.frozen) {
      EXPECT_EQ(p.value.to_vector(), before2.at(p.name)) << p.name;
    } else {
      moved += p.value.to_vector() != before2.at(p.name);
    }
  }
  EXPECT_GT(moved, 0);
}

TEST(StageOrderTest, StageTwoNeedsStageOne) {
  auto model = Model::create(small_config(4));
  const auto data = small_data(*model, 4, std::nullopt);
  TrainOptions opts;
  opts.stage = 2;
  opts.optim = quick_optim(1);
  EXPECT_THROW(train_stage(*model, data, opts), StageOrderError);
  opts.allow_stage_override = true;
  EXPECT_NO_THROW(train_stage(*model, data, opts));
  EXPECT_EQ(model->completed_stage, 2);
}

TEST(TrainStageTest, EmptyDatasetIsRejected) {
  auto model = Model::create(small_config(5));
  TrainOptions opts;
  opts.optim = quick_optim(1);
  EXPECT_THROW(train_stage(*model, {}, opts), ContractError);
}

TEST(TrainStageTest, LossDecreasesOnAFixedBatch) {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    auto model = Model::create(small_config(seed));
    const auto data = small_data(*model, 4, Task::Caption);
    TrainOptions opts;
    opts.optim = quick_optim(20);
    opts.optim.warmup_steps = 0;
    const TrainState st = train_stage(*model, data, opts);
    ASSERT_EQ(st.losses.size(), 20u);
    EXPECT_LT(st.losses.back(), st.losses.front()) << seed;
  }
}

TEST(TrainStageTest, FixedSeedGivesBitIdenticalLossTrace) {
  std::vector<double> traces[2];
  for (auto& trace : traces) {
    auto model = Model::create(small_config(6));
    const auto data = small_data(*model, 8, Task::Caption);
    TrainOptions opts;
    opts.optim = quick_optim(12);
    trace = train_stage(*model, data, opts).losses;
  }
  EXPECT_EQ(traces[0], traces[1]);
}

TEST(TrainStageTest, ResumeThroughCheckpointIsBitIdentical) {
  const Config config = small_config(7);
  TrainOptions opts;
  opts.optim = quick_optim(14);

  auto full = Model::create(config);
  const auto data = small_data(*full, 8, Task::Caption);
  const TrainState whole = train_stage(*full, data, opts);

  auto first = Model::create(config);
  TrainOptions half = opts;
  half.stop_after = 6;
  const TrainState partial = train_stage(*first, data, half);
  ASSERT_EQ(partial.step, 6);
  const std::string bytes = encode_checkpoint(*first, &partial);
  first.reset();

  Checkpoint restored = decode_checkpoint(bytes);
  ASSERT_TRUE(restored.train.has_value());
  const TrainState resumed = train_stage(*restored.model, data, opts, restored.train);
  EXPECT_EQ(resumed.losses, whole.losses);
  for (const auto& p : full->store.all()) {
    EXPECT_EQ(restored.model->store.get(p.name).value.to_vector(), p.value.to_vector()) << p.name;
  }
}

TEST(SketchTest, EntityRowsFollowColorSlots) {
  const Trajectory t = simulate(5, WorldConfig{});
  const auto rows = scene_sketch(t, 8);
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& row : rows) {
    for (int f : row) {
      EXPECT_GE(f, 0);
      EXPECT_LT(f, static_cast<int>(kSketchFacts));
    }
  }
  for (const auto& e : t.states.front().entities) {
    const auto& row = rows[static_cast<std::size_t>(e.color)];
    ASSERT_FALSE(row.empty());
    EXPECT_EQ(row.front(), static_cast<int>(e.color));
  }
}

}  // namespace
}  // namespace fusecore
