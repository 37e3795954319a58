#include "fusecore/lora.hpp"

#include <algorithm>
#include <cmath>

#include "fusecore/error.hpp"
#include "fusecore/ops.hpp"

namespace fusecore {

std::vector<std::string> lora_target_names(const DecoderLM& lm, const std::vector<std::string>& kinds) {
  static const std::vector<std::string> known{"w_q", "w_k", "w_v", "w_o", "ffn_in", "ffn_out"};
  for (const auto& k : kinds) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError("unknown LoRA target kind '" + k + "'");
    }
  }
  std::vector<std::string> names;
  for (const Linear* l : lm.linears()) {
    const std::string kind = l->name.substr(l->name.rfind('.') + 1);
    if (std::find(kinds.begin(), kinds.end(), kind) != kinds.end()) names.push_back(l->name);
  }
  return names;
}

void apply_lora(ParameterStore& store, DecoderLM& lm, const std::vector<std::string>& targets, int rank,
                double alpha, Rng& rng) {
  if (rank <= 0 || alpha <= 0.0) throw ContractError("LoRA rank and alpha must be positive");
  std::vector<Linear*> chosen;
  for (const auto& name : targets) {
    auto linears = lm.linears();
    auto it = std::find_if(linears.begin(), linears.end(), [&](const Linear* l) { return l->name == name; });
    if (it == linears.end()) throw ContractError("unknown LoRA target '" + name + "'");
    if ((*it)->lora) throw ContractError("LoRA target '" + name + "' already has an adapter");
    chosen.push_back(*it);
  }
  const auto r = static_cast<std::size_t>(rank);
  for (Linear* l : chosen) {
    LoraAdapter adapter;
    adapter.rank = r;
    adapter.alpha = alpha;
    adapter.a = store.normal(l->name + ".lora_a", {r, l->in_features()},
                             1.0 / std::sqrt(static_cast<double>(l->in_features())), rng);
    adapter.b = store.constant(l->name + ".lora_b", {l->out_features(), r}, 0.0);
    l->lora = adapter;
    store.get(l->name + ".weight").frozen = true;
    if (l->bias.defined()) store.get(l->name + ".bias").frozen = true;
  }
}

void merge_lora(ParameterStore& store, DecoderLM& lm) {
  if (!has_lora(lm)) throw ContractError("no LoRA adapter to merge (already merged or never applied)");
  NoGradGuard no_grad;
  for (Linear* l : lm.linears()) {
    if (!l->lora) continue;
    const Tensor delta = scale(matmul(l->lora->b, l->lora->a), l->lora->scaling());
    auto w = l->weight.mutable_data();
    const auto d = delta.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += d[i];
    store.remove(l->name + ".lora_a");
    store.remove(l->name + ".lora_b");
    l->lora.reset();
  }
}

bool has_lora(const DecoderLM& lm) {
  const auto linears = lm.linears();
  return std::any_of(linears.begin(), linears.end(), [](const Linear* l) { return l->lora.has_value(); });
}

}  // namespace fusecore
