#include "fusecore/fusion.hpp"

#include "fusecore/error.hpp"
#include "fusecore/ops.hpp"

namespace fusecore {

QueryBank QueryBank::create(ParameterStore& store, const std::string& name, std::size_t count, std::size_t dim,
                            Rng& rng) {
  return {store.normal(name, {count, dim}, 0.02, rng)};
}

FusionLayer FusionLayer::create(ParameterStore& store, const std::string& name, const FusionConfig& config,
                                std::size_t vision_dim, Rng& rng) {
  const auto d = static_cast<std::size_t>(config.model_dim);
  const auto heads = static_cast<std::size_t>(config.heads);
  FusionLayer l;
  l.norm_self = LayerNorm::create(store, name + ".norm_self", d);
  l.self_attn = MultiHeadAttention::create(store, name + ".self", d, d, d, heads, rng);
  l.norm_cross = LayerNorm::create(store, name + ".norm_cross", d);
  l.cross_attn = MultiHeadAttention::create(store, name + ".cross", d, vision_dim, d, heads, rng);
  l.norm_ffn = LayerNorm::create(store, name + ".norm_ffn", d);
  l.ffn = FeedForward::create(store, name, d, d * static_cast<std::size_t>(config.ffn_multiplier), rng);
  return l;
}

Tensor cross_attend(const Tensor& queries, const Tensor& vision, const FusionLayer& layer, AttentionTrace* trace) {
  if (vision.rank() != 2 || vision.cols() != layer.cross_attn.w_k.in_features()) {
    throw DimensionError("vision tokens " + shape_str(vision.shape()) + " do not match cross-attention input width " +
                         std::to_string(layer.cross_attn.w_k.in_features()));
  }
  return add(queries, layer.cross_attn.forward(layer.norm_cross.forward(queries), vision, false, trace));
}

FusionCore FusionCore::create(ParameterStore& store, const FusionConfig& config, std::size_t vision_dim,
                              std::size_t llm_dim, Rng& rng) {
  if (config.layers < 1) throw ConfigError("fusion core needs at least one layer");
  if (config.query_dim != config.model_dim) throw ConfigError("fusion query_dim must equal model_dim");
  FusionCore core;
  core.bank = QueryBank::create(store, "fusion.queries", static_cast<std::size_t>(config.queries),
                                static_cast<std::size_t>(config.query_dim), rng);
  for (int i = 0; i < config.layers; ++i) {
    core.layers.push_back(FusionLayer::create(store, "fusion.layer" + std::to_string(i), config, vision_dim, rng));
  }
  core.final_norm = LayerNorm::create(store, "fusion.norm_out", static_cast<std::size_t>(config.model_dim));
  core.projection = Linear::create(store, "fusion.proj", static_cast<std::size_t>(config.model_dim), llm_dim, rng);
  return core;
}

Tensor FusionCore::encode_queries(const Tensor& vision, FusionTrace* trace) const {
  if (trace) {
    trace->self_attention.assign(layers.size(), {});
    trace->cross_attention.assign(layers.size(), {});
  }
  Tensor q = bank.queries;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const FusionLayer& l = layers[i];
    const Tensor normed = l.norm_self.forward(q);
    q = add(q, l.self_attn.forward(normed, normed, false, trace ? &trace->self_attention[i] : nullptr));
    q = cross_attend(q, vision, l, trace ? &trace->cross_attention[i] : nullptr);
    q = add(q, l.ffn.forward(l.norm_ffn.forward(q)));
  }
  return final_norm.forward(q);
}

Tensor FusionCore::fuse(const Tensor& vision, FusionTrace* trace) const {
  return project_to_llm(encode_queries(vision, trace));
}

}  // namespace fusecore
