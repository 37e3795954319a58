#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fusecore/error.hpp"
#include "fusecore/nn.hpp"
#include "fusecore/ops.hpp"
#include "gradcheck.hpp"

namespace fusecore {
namespace {

using testing::gradcheck;
using testing::project;
using testing::random_tensor;

// Naive per-element attention for one head, written from the definition.
std::vector<double> naive_attention(const std::vector<double>& q, const std::vector<double>& k,
                                    const std::vector<double>& v, std::size_t nq, std::size_t nk, std::size_t d,
                                    bool causal) {
  std::vector<double> out(nq * d, 0.0);
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<double> s(nk, -INFINITY);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < nk; ++j) {
      if (causal && j > i) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < nk; ++j) z += std::isinf(s[j]) ? 0.0 : std::exp(s[j] - mx);
    for (std::size_t j = 0; j < nk; ++j) {
      if (std::isinf(s[j])) continue;
      const double w = std::exp(s[j] - mx) / z;
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += w * v[j * d + c];
    }
  }
  return out;
}

TEST(LinearTest, ComputesXWTransposePlusBias) {
  Rng rng(1);
  ParameterStore store;
  Linear l = Linear::create(store, "l", 3, 2, rng);
  const Tensor x = Tensor::from({1, 3}, {1, 2, 3});
  const Tensor y = l.forward(x);
  for (std::size_t o = 0; o < 2; ++o) {
    double want = l.bias.at(o);
    for (std::size_t i = 0; i < 3; ++i) want += l.weight.at(o, i) * x.at(0, i);
    EXPECT_NEAR(y.at(0, o), want, 1e-14);
  }
  EXPECT_TRUE(store.contains("l.weight"));
  EXPECT_TRUE(store.contains("l.bias"));
}

TEST(ParameterStoreTest, NamesAreUniqueAndFreezable) {
  ParameterStore store;
  store.constant("a.x", {2}, 1.0);
  EXPECT_THROW(store.constant("a.x", {2}, 1.0), ContractError);
  store.constant("b.y", {2}, 1.0);
  store.set_frozen("a.", true);
  EXPECT_TRUE(store.get("a.x").frozen);
  EXPECT_FALSE(store.get("b.y").frozen);
  store.remove("a.x");
  EXPECT_FALSE(store.contains("a.x"));
  EXPECT_EQ(store.element_count(), 2u);
}

TEST(AttentionTest, SingleHeadMatchesNaiveDefinition) {
  Rng rng(3);
  ParameterStore store;
  MultiHeadAttention att = MultiHeadAttention::create(store, "att", 4, 4, 4, 1, rng);
  std::mt19937_64 gen(4);
  const Tensor x = random_tensor(gen, {5, 4}, 1.0, false);
  for (bool causal : {false, true}) {
    AttentionTrace trace;
    const Tensor out = att.forward(x, x, causal, &trace);
    const auto q = att.w_q.forward(x).to_vector();
    const auto k = att.w_k.forward(x).to_vector();
    const auto v = att.w_v.forward(x).to_vector();
    const Tensor heads = Tensor::from({5, 4}, naive_attention(q, k, v, 5, 5, 4, causal));
    const Tensor want = att.w_o.forward(heads);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out.data()[i], want.data()[i], 1e-12);
    ASSERT_EQ(trace.weights.size(), 1u);
    for (std::size_t r = 0; r < 5; ++r) {
      double row = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        row += trace.weights[0].at(r, c);
        if (causal && c > r) EXPECT_EQ(trace.weights[0].at(r, c), 0.0);
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
  }
}

TEST(AttentionTest, CausalOutputIgnoresTheFuture) {
  Rng rng(5);
  ParameterStore store;
  MultiHeadAttention att = MultiHeadAttention::create(store, "att", 8, 8, 8, 2, rng);
  std::mt19937_64 gen(6);
  Tensor x = random_tensor(gen, {6, 8}, 1.0, false);
  const Tensor before = att.forward(x, x, true);
  x.mutable_data()[5 * 8 + 3] += 10.0;
  const Tensor after = att.forward(x, x, true);
  for (std::size_t i = 0; i < 5 * 8; ++i) EXPECT_EQ(before.data()[i], after.data()[i]);
}

TEST(AttentionTest, HeadsMustDivideModelDim) {
  Rng rng(1);
  ParameterStore store;
  EXPECT_THROW(MultiHeadAttention::create(store, "att", 6, 6, 6, 4, rng), ConfigError);
}

TEST(AttentionTest, CrossAttentionGradientsMatchFiniteDifferences) {
  for (int instance = 0; instance < 5; ++instance) {
    Rng rng(100 + instance);
    ParameterStore store;
    MultiHeadAttention att = MultiHeadAttention::create(store, "att", 6, 5, 4, 2, rng);
    std::mt19937_64 gen(200 + instance);
    Tensor q = random_tensor(gen, {3, 6});
    Tensor kv = random_tensor(gen, {4, 5});
    std::vector<Tensor> inputs{q, kv};
    for (auto& p : store.all()) inputs.push_back(p.value);
    const auto res = gradcheck([&] { return project(att.forward(q, kv, false), 9); }, inputs);
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
  }
}

TEST(LayerNormTest, NormalisesRowsAndHasCorrectGradients) {
  Rng rng(7);
  ParameterStore store;
  LayerNorm ln = LayerNorm::create(store, "ln", 5);
  std::mt19937_64 gen(8);
  Tensor x = random_tensor(gen, {3, 5}, 2.0);
  const Tensor y = ln.forward(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0.0;
    double v = 0.0;
    for (std::size_t c = 0; c < 5; ++c) m += y.at(r, c) / 5.0;
    for (std::size_t c = 0; c < 5; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 5.0;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
  for (auto& p : store.all()) {
    std::normal_distribution<double> d(0.0, 0.5);
    for (double& w : p.value.mutable_data()) w += d(gen);
  }
  const auto res = gradcheck([&] { return project(ln.forward(x), 3); }, {x, ln.gain, ln.bias});
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(LoraPathTest, AdapterAddsScaledLowRankUpdate) {
  Rng rng(9);
  ParameterStore store;
  Linear l = Linear::create(store, "l", 4, 3, rng);
  std::mt19937_64 gen(10);
  Tensor a = random_tensor(gen, {2, 4});
  Tensor b = random_tensor(gen, {3, 2});
  l.lora = LoraAdapter{a, b, 2, 6.0};
  EXPECT_EQ(l.lora->scaling(), 3.0);
  Tensor x = random_tensor(gen, {5, 4});
  const Tensor y = l.forward(x);
  const Tensor delta = scale(matmul(matmul(x, transpose(a)), transpose(b)), 3.0);
  Linear base = l;
  base.lora.reset();
  const Tensor want = add(base.forward(x), delta);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], want.data()[i], 1e-12);
  const auto res = gradcheck([&] { return project(l.forward(x), 4); }, {x, a, b, l.weight, l.bias});
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(TransformerBlockTest, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  ParameterStore store;
  TransformerBlock block = TransformerBlock::create(store, "blk", 4, 2, 8, rng);
  std::mt19937_64 gen(12);
  Tensor x = random_tensor(gen, {3, 4});
  std::vector<Tensor> inputs{x};
  for (auto& p : store.all()) inputs.push_back(p.value);
  const auto res = gradcheck([&] { return project(block.forward(x, true), 5); }, inputs);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

}  // namespace
}  // namespace fusecore
