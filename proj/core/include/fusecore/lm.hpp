#pragma once

#include <span>
#include <string>
#include <vector>

#include "fusecore/config.hpp"
#include "fusecore/nn.hpp"
#include "fusecore/tokenizer.hpp"

namespace fusecore {

// Decoder-only causal transformer. The output head is tied to the token
// embedding table: logits = LN(h) E^T.
class DecoderLM {
 public:
  static DecoderLM create(ParameterStore& store, const LmConfig& config, std::size_t vocab_size, Rng& rng);

  Tensor embed_tokens(std::span<const int> ids) const;
  // E_input = [E_vision; embed(prompt)] without position embeddings. `fused`
  // may be undefined (text only). Throws LengthError beyond max_length and
  // ContractError when the prompt does not start with BOS.
  Tensor build_input(const Tensor& fused, const TokenSequence& prompt) const;
  // Adds position embeddings over the whole sequence and runs the causal
  // stack; row t of the result depends only on input rows <= t.
  Tensor forward_logits(const Tensor& e_input, std::vector<AttentionTrace>* traces = nullptr) const;

  std::vector<Linear*> linears();
  std::vector<const Linear*> linears() const;
  std::size_t vocab_size() const { return embed.rows(); }
  std::size_t dim() const { return embed.cols(); }
  std::size_t max_length() const { return pos.rows(); }

  Tensor embed;  // [|V| x D_llm]
  Tensor pos;    // [max_length x D_llm]
  std::vector<TransformerBlock> blocks;
  LayerNorm final_norm;
};

// Loss mask over the combined sequence: false on every vision row, then the
// prompt's own mask.
std::vector<bool> combined_loss_mask(std::size_t vision_rows, const TokenSequence& seq);

// Next-token targets for logits over `vision_rows + seq.size()` rows: row r
// predicts the token at r + 1 and counts only if that token is masked in.
struct ShiftedTargets {
  std::vector<int> targets;
  std::vector<bool> mask;
};
ShiftedTargets shift_targets(std::size_t vision_rows, const TokenSequence& seq);

}  // namespace fusecore
