#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "fusecore/lm.hpp"

namespace fusecore {

enum class Strategy { Greedy, Nucleus, Beam };
Strategy parse_strategy(std::string_view name);
std::string_view to_string(Strategy strategy);

struct GenerationConfig {
  Strategy strategy = Strategy::Greedy;
  double top_p = 0.9;
  double temperature = 1.0;
  int beam_width = 4;
  int max_new_tokens = 64;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Continues `prompt` after the fused vision rows until EOS (included in the
// result) or max_new_tokens. Greedy breaks ties towards the lowest id; beam
// search ranks hypotheses by log-probability divided by their length.
std::vector<int> generate(const DecoderLM& lm, const Tensor& fused, const TokenSequence& prompt,
                          const GenerationConfig& config);

// Picks from a probability vector: greedy argmax (lowest id on ties).
int argmax_lowest(std::span<const double> values);
// Smallest prefix of the probability-sorted tokens whose mass reaches top_p,
// renormalised; `u` in [0, 1) selects from it by inverse CDF.
int nucleus_pick(std::span<const double> probs, double top_p, double u);

// Sum of log P(continuation[i] | vision, prompt, continuation[<i]).
double continuation_log_likelihood(const DecoderLM& lm, const Tensor& fused, const TokenSequence& prompt,
                                   const std::vector<int>& continuation);

}  // namespace fusecore
