#pragma once

#include <string>
#include <vector>

#include "fusecore/lm.hpp"

namespace fusecore {

// Full names ("lm.block0.attn.w_q") of every LM linear whose last path
// component is one of `kinds` ("w_q", "ffn_in", ...).
std::vector<std::string> lora_target_names(const DecoderLM& lm, const std::vector<std::string>& kinds);

// Adds A [r x d_in] ~ N(0, 1/d_in) and B [d_out x r] = 0 to each target and
// freezes its base weight and bias. Throws ContractError for unknown targets
// or a target that already has an adapter.
void apply_lora(ParameterStore& store, DecoderLM& lm, const std::vector<std::string>& targets, int rank,
                double alpha, Rng& rng);

// W <- W + (alpha/r) B A for every adapted linear; the adapter parameters are
// removed from the store. Throws ContractError when no adapter is present
// (including a second merge).
void merge_lora(ParameterStore& store, DecoderLM& lm);

bool has_lora(const DecoderLM& lm);

}  // namespace fusecore
