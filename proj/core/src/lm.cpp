#include "fusecore/lm.hpp"

#include "fusecore/error.hpp"
#include "fusecore/ops.hpp"

namespace fusecore {

DecoderLM DecoderLM::create(ParameterStore& store, const LmConfig& config, std::size_t vocab_size, Rng& rng) {
  const auto d = static_cast<std::size_t>(config.dim);
  DecoderLM lm;
  lm.embed = store.normal("lm.embed", {vocab_size, d}, 0.02, rng);
  lm.pos = store.normal("lm.pos", {static_cast<std::size_t>(config.max_length), d}, 0.02, rng);
  for (int l = 0; l < config.layers; ++l) {
    lm.blocks.push_back(TransformerBlock::create(store, "lm.block" + std::to_string(l), d,
                                                 static_cast<std::size_t>(config.heads),
                                                 d * static_cast<std::size_t>(config.ffn_multiplier), rng));
  }
  lm.final_norm = LayerNorm::create(store, "lm.norm_out", d);
  return lm;
}

Tensor DecoderLM::embed_tokens(std::span<const int> ids) const { return gather_rows(embed, ids); }

Tensor DecoderLM::build_input(const Tensor& fused, const TokenSequence& prompt) const {
  if (prompt.ids.empty() || prompt.ids.front() != kBosId) throw ContractError("prompt must be non-empty and start with BOS");
  const std::size_t vision_rows = fused.defined() ? fused.rows() : 0;
  const std::size_t len = vision_rows + prompt.size();
  if (len > max_length()) {
    throw LengthError("sequence of " + std::to_string(len) + " positions exceeds the maximum of " +
                      std::to_string(max_length()));
  }
  if (fused.defined() && fused.cols() != dim()) {
    throw DimensionError("fused embeddings " + shape_str(fused.shape()) + " do not match LM width " + std::to_string(dim()));
  }
  const Tensor text = embed_tokens(prompt.ids);
  return fused.defined() ? concat_rows({fused, text}) : text;
}

Tensor DecoderLM::forward_logits(const Tensor& e_input, std::vector<AttentionTrace>* traces) const {
  const std::size_t len = e_input.rows();
  if (len > max_length()) {
    throw LengthError("sequence of " + std::to_string(len) + " positions exceeds the maximum of " +
                      std::to_string(max_length()));
  }
  Tensor x = add(e_input, slice_rows(pos, 0, len));
  if (traces) traces->assign(blocks.size(), {});
  for (std::size_t i = 0; i < blocks.size(); ++i) x = blocks[i].forward(x, true, traces ? &(*traces)[i] : nullptr);
  return matmul_nt(final_norm.forward(x), embed);
}

std::vector<Linear*> DecoderLM::linears() {
  std::vector<Linear*> out;
  for (auto& b : blocks) {
    for (Linear* l : b.linears()) out.push_back(l);
  }
  return out;
}

std::vector<const Linear*> DecoderLM::linears() const {
  std::vector<const Linear*> out;
  for (Linear* l : const_cast<DecoderLM*>(this)->linears()) out.push_back(l);
  return out;
}

std::vector<bool> combined_loss_mask(std::size_t vision_rows, const TokenSequence& seq) {
  std::vector<bool> mask(vision_rows, false);
  mask.insert(mask.end(), seq.loss_mask.begin(), seq.loss_mask.end());
  return mask;
}

ShiftedTargets shift_targets(std::size_t vision_rows, const TokenSequence& seq) {
  const std::size_t len = vision_rows + seq.size();
  ShiftedTargets out;
  out.targets.assign(len, 0);
  out.mask.assign(len, false);
  for (std::size_t r = 0; r + 1 < len; ++r) {
    const std::size_t next = r + 1;
    if (next < vision_rows) continue;
    out.targets[r] = seq.ids[next - vision_rows];
    out.mask[r] = seq.loss_mask[next - vision_rows];
  }
  return out;
}

}  // namespace fusecore
