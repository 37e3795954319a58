#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fusecore/tensor.hpp"

namespace fusecore {

using Rng = std::mt19937_64;

// A named trainable tensor. `frozen` parameters are skipped by the optimizer
// and their gradients are discarded after every step.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

// Owns every parameter of a model under a unique dotted name
// ("fusion.layer0.cross.w_q"). Components keep Tensor handles that share
// storage with the entries here, so in-place updates are seen by both.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  Tensor normal(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor constant(const std::string& name, Shape shape, double value);
  void remove(const std::string& name);

  bool contains(const std::string& name) const;
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  // Sets `frozen` on every parameter whose name starts with `prefix`.
  void set_frozen(const std::string& prefix, bool frozen);
  void zero_grads();
  void clear_grads();

 private:
  std::vector<Parameter> params_;
};

// Low-rank additive update (alpha / rank) * B * A on a frozen weight.
struct LoraAdapter {
  Tensor a;  // [rank x d_in]
  Tensor b;  // [d_out x rank], zero at creation
  std::size_t rank = 0;
  double alpha = 0.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

// y = x W^T + b with W stored [d_out x d_in].
struct Linear {
  std::string name;
  Tensor weight;
  Tensor bias;
  std::optional<LoraAdapter> lora;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t d_in, std::size_t d_out,
                       Rng& rng, bool with_bias = true);
  Tensor forward(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim);
  Tensor forward(const Tensor& x) const;
};

// Per-head attention weights captured during a forward pass.
struct AttentionTrace {
  std::vector<Tensor> weights;  // one [n_query x n_key] matrix per head
};

struct MultiHeadAttention {
  Linear w_q;
  Linear w_k;
  Linear w_v;
  Linear w_o;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& name, std::size_t query_dim,
                                   std::size_t kv_dim, std::size_t model_dim, std::size_t heads, Rng& rng);
  // Output before any residual connection: w_o(concat_h softmax(Q_h K_h^T / sqrt(d_h)) V_h).
  Tensor forward(const Tensor& queries, const Tensor& keys_values, bool causal,
                 AttentionTrace* trace = nullptr) const;
  std::size_t model_dim() const { return w_q.out_features(); }
};

struct FeedForward {
  Linear in;
  Linear out;

  static FeedForward create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden,
                            Rng& rng);
  Tensor forward(const Tensor& x) const;
};

// Pre-norm block: x + attn(LN(x)), then + ffn(LN(x)).
struct TransformerBlock {
  LayerNorm norm_attn;
  MultiHeadAttention attn;
  LayerNorm norm_ffn;
  FeedForward ffn;

  static TransformerBlock create(ParameterStore& store, const std::string& name, std::size_t dim,
                                 std::size_t heads, std::size_t ffn_hidden, Rng& rng);
  Tensor forward(const Tensor& x, bool causal, AttentionTrace* trace = nullptr) const;
  std::vector<Linear*> linears();
};

}  // namespace fusecore
