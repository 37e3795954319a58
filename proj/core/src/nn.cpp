#include "fusecore/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fusecore/error.hpp"
#include "fusecore/ops.hpp"

namespace fusecore {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  params_.push_back({name, value, false});
  return value;
}

Tensor ParameterStore::normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return add(name, Tensor::from(std::move(shape), std::move(data)));
}

Tensor ParameterStore::constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::filled(std::move(shape), value));
}

void ParameterStore::remove(const std::string& name) {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
  if (it == params_.end()) throw ContractError("no parameter named '" + name + "'");
  params_.erase(it);
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

Parameter& ParameterStore::get(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("no parameter named '" + name + "'");
}

const Parameter& ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("no parameter named '" + name + "'");
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) p.frozen = frozen;
  }
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p.value.zero_grad();
}

void ParameterStore::clear_grads() {
  for (auto& p : params_) p.value.clear_grad();
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t d_in, std::size_t d_out, Rng& rng,
                      bool with_bias) {
  Linear l;
  l.name = name;
  l.weight = store.normal(name + ".weight", {d_out, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
  if (with_bias) l.bias = store.constant(name + ".bias", {d_out}, 0.0);
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = linear(x, weight, bias);
  if (!lora) return y;
  Tensor delta = matmul_nt(matmul_nt(x, lora->a), lora->b);
  return add(y, scale(delta, lora->scaling()));
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t dim) {
  return {store.constant(name + ".gain", {dim}, 1.0), store.constant(name + ".bias", {dim}, 0.0)};
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name, std::size_t query_dim,
                                              std::size_t kv_dim, std::size_t model_dim, std::size_t heads,
                                              Rng& rng) {
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError(name + ": model dimension " + std::to_string(model_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.w_q = Linear::create(store, name + ".w_q", query_dim, model_dim, rng);
  m.w_k = Linear::create(store, name + ".w_k", kv_dim, model_dim, rng);
  m.w_v = Linear::create(store, name + ".w_v", kv_dim, model_dim, rng);
  m.w_o = Linear::create(store, name + ".w_o", model_dim, model_dim, rng);
  m.heads = heads;
  return m;
}

Tensor MultiHeadAttention::forward(const Tensor& queries, const Tensor& keys_values, bool causal,
                                   AttentionTrace* trace) const {
  const Tensor q = w_q.forward(queries);
  const Tensor k = w_k.forward(keys_values);
  const Tensor v = w_v.forward(keys_values);
  const std::size_t d = model_dim();
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  if (causal && q.rows() != k.rows()) {
    throw DimensionError("causal attention needs as many queries as keys");
  }
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  if (trace) trace->weights.clear();
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    const Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    const Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    const Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    const Tensor weights = causal ? softmax_rows_causal(scores) : softmax_rows(scores);
    if (trace) trace->weights.push_back(weights);
    outputs.push_back(matmul(weights, vh));
  }
  return w_o.forward(heads == 1 ? outputs.front() : concat_cols(outputs));
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden,
                                Rng& rng) {
  return {Linear::create(store, name + ".ffn_in", dim, hidden, rng),
          Linear::create(store, name + ".ffn_out", hidden, dim, rng)};
}

Tensor FeedForward::forward(const Tensor& x) const { return out.forward(gelu(in.forward(x))); }

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                          std::size_t heads, std::size_t ffn_hidden, Rng& rng) {
  TransformerBlock b;
  b.norm_attn = LayerNorm::create(store, name + ".norm_attn", dim);
  b.attn = MultiHeadAttention::create(store, name + ".attn", dim, dim, dim, heads, rng);
  b.norm_ffn = LayerNorm::create(store, name + ".norm_ffn", dim);
  b.ffn = FeedForward::create(store, name, dim, ffn_hidden, rng);
  return b;
}

Tensor TransformerBlock::forward(const Tensor& x, bool causal, AttentionTrace* trace) const {
  const Tensor normed = norm_attn.forward(x);
  const Tensor h = add(x, attn.forward(normed, normed, causal, trace));
  return add(h, ffn.forward(norm_ffn.forward(h)));
}

std::vector<Linear*> TransformerBlock::linears() {
  return {&attn.w_q, &attn.w_k, &attn.w_v, &attn.w_o, &ffn.in, &ffn.out};
}

}  // namespace fusecore
