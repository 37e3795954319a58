#pragma once

#include <vector>

#include "fusecore/config.hpp"
#include "fusecore/nn.hpp"

namespace fusecore {

// Learnable query embeddings Q_query [N_q x D_q], initialised N(0, 0.02^2).
struct QueryBank {
  Tensor queries;

  static QueryBank create(ParameterStore& store, const std::string& name, std::size_t count, std::size_t dim, Rng& rng);
  std::size_t count() const { return queries.rows(); }
};

// One fusion layer: self-attention among the queries, cross-attention from
// the queries to the vision tokens, then a feed-forward block; each sub-block
// is pre-norm with a residual connection.
struct FusionLayer {
  LayerNorm norm_self;
  MultiHeadAttention self_attn;
  LayerNorm norm_cross;
  MultiHeadAttention cross_attn;  // w_q: D_q -> d_model, w_k / w_v: D_v -> d_model
  LayerNorm norm_ffn;
  FeedForward ffn;

  static FusionLayer create(ParameterStore& store, const std::string& name, const FusionConfig& config,
                            std::size_t vision_dim, Rng& rng);
};

// queries + cross_attn(LN(queries), vision). The vision tokens carry no
// position information here, so the result does not depend on their order.
Tensor cross_attend(const Tensor& queries, const Tensor& vision, const FusionLayer& layer,
                    AttentionTrace* trace = nullptr);

struct FusionTrace {
  std::vector<AttentionTrace> self_attention;
  std::vector<AttentionTrace> cross_attention;
};

class FusionCore {
 public:
  static FusionCore create(ParameterStore& store, const FusionConfig& config, std::size_t vision_dim,
                           std::size_t llm_dim, Rng& rng);

  // Z_vision [N_v x D_v] -> E_vision [N_q x D_llm].
  Tensor fuse(const Tensor& vision, FusionTrace* trace = nullptr) const;
  // Q'_query before the projection.
  Tensor encode_queries(const Tensor& vision, FusionTrace* trace = nullptr) const;
  Tensor project_to_llm(const Tensor& q_out) const { return projection.forward(q_out); }

  QueryBank bank;
  std::vector<FusionLayer> layers;
  LayerNorm final_norm;
  Linear projection;  // d_model -> D_llm, with bias
};

}  // namespace fusecore
