#include <gtest/gtest.h>

#include <random>

#include "fusecore/error.hpp"
#include "fusecore/lm.hpp"
#include "fusecore/lora.hpp"

namespace fusecore {
namespace {

LmConfig tiny_lm() {
  LmConfig c;
  c.dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.max_length = 16;
  c.ffn_multiplier = 2;
  return c;
}

const std::vector<std::string> kAllKinds{"w_q", "w_k", "w_v", "w_o", "ffn_in", "ffn_out"};

Tensor logits_of(const DecoderLM& lm) {
  const TokenSequence seq{{kBosId, 3, 4, 5}, std::vector<bool>(4, false)};
  return lm.forward_logits(lm.build_input(Tensor::filled({2, 8}, 0.3), seq));
}

void randomise_adapters(ParameterStore& store, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> d(0.0, 0.3);
  for (auto& p : store.all()) {
    if (p.name.ends_with(".lora_b")) {
      for (double& w : p.value.mutable_data()) w = d(gen);
    }
  }
}

TEST(LoraTest, TargetNamesCoverEveryBlock) {
  Rng rng(1);
  ParameterStore store;
  const DecoderLM lm = DecoderLM::create(store, tiny_lm(), 10, rng);
  const auto names = lora_target_names(lm, {"w_q", "ffn_out"});
  EXPECT_EQ(names, (std::vector<std::string>{"lm.block0.attn.w_q", "lm.block0.ffn_out", "lm.block1.attn.w_q",
                                             "lm.block1.ffn_out"}));
  EXPECT_THROW(lora_target_names(lm, {"w_z"}), ConfigError);
}

TEST(LoraTest, ZeroInitialisedAdaptersLeaveLogitsBitIdentical) {
  Rng rng(2);
  ParameterStore store;
  DecoderLM lm = DecoderLM::create(store, tiny_lm(), 10, rng);
  const Tensor before = logits_of(lm);
  apply_lora(store, lm, lora_target_names(lm, kAllKinds), 4, 8.0, rng);
  EXPECT_TRUE(has_lora(lm));
  EXPECT_EQ(logits_of(lm).to_vector(), before.to_vector());
}

TEST(LoraTest, BaseWeightsAreFrozenAndAdaptersTrainable) {
  Rng rng(3);
  ParameterStore store;
  DecoderLM lm = DecoderLM::create(store, tiny_lm(), 10, rng);
  apply_lora(store, lm, lora_target_names(lm, {"w_v"}), 2, 4.0, rng);
  EXPECT_TRUE(store.get("lm.block0.attn.w_v.weight").frozen);
  EXPECT_FALSE(store.get("lm.block0.attn.w_v.lora_a").frozen);
  EXPECT_EQ(store.get("lm.block0.attn.w_v.lora_a").value.shape(), (Shape{2, 8}));
  EXPECT_EQ(store.get("lm.block0.attn.w_v.lora_b").value.shape(), (Shape{8, 2}));
  for (double b : store.get("lm.block1.attn.w_v.lora_b").value.data()) EXPECT_EQ(b, 0.0);
  EXPECT_THROW(apply_lora(store, lm, {"lm.block0.attn.w_v"}, 2, 4.0, rng), ContractError);
  EXPECT_THROW(apply_lora(store, lm, {"lm.block9.attn.w_v"}, 2, 4.0, rng), ContractError);
}

TEST(LoraTest, MergedWeightsReproduceAdaptedLogits) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(10 + seed);
    ParameterStore store;
    DecoderLM lm = DecoderLM::create(store, tiny_lm(), 10, rng);
    apply_lora(store, lm, lora_target_names(lm, kAllKinds), 4, 8.0, rng);
    randomise_adapters(store, seed);
    const Tensor adapted = logits_of(lm);
    merge_lora(store, lm);
    EXPECT_FALSE(has_lora(lm));
    for (const auto& p : store.all()) EXPECT_FALSE(p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b"));
    const Tensor merged = logits_of(lm);
    for (std::size_t i = 0; i < merged.size(); ++i) EXPECT_NEAR(merged.data()[i], adapted.data()[i], 1e-10);
    EXPECT_THROW(merge_lora(store, lm), ContractError);
  }
}

TEST(LoraTest, PaperScalingIsTwo) {
  LoraAdapter a;
  a.rank = 64;
  a.alpha = 128.0;
  EXPECT_EQ(a.scaling(), 2.0);
}

}  // namespace
}  // namespace fusecore
