#include "fusecore/generate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fusecore/error.hpp"
#include "fusecore/ops.hpp"

namespace fusecore {

Strategy parse_strategy(std::string_view name) {
  if (name == "greedy") return Strategy::Greedy;
  if (name == "nucleus") return Strategy::Nucleus;
  if (name == "beam") return Strategy::Beam;
  throw ConfigError("unknown decoding strategy '" + std::string(name) + "' (expected greedy, nucleus or beam)");
}

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::Greedy: return "greedy";
    case Strategy::Nucleus: return "nucleus";
    case Strategy::Beam: return "beam";
  }
  return "?";
}

void GenerationConfig::validate() const {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (beam_width < 1) throw ConfigError("beam_width must be at least 1");
  if (max_new_tokens < 0) throw ConfigError("max_new_tokens must be non-negative");
}

namespace {

// Log-softmax of the last logits row for `prefix`.
std::vector<double> next_log_probs(const DecoderLM& lm, const Tensor& fused, const TokenSequence& prefix) {
  const Tensor logits = lm.forward_logits(lm.build_input(fused, prefix));
  const std::size_t v = logits.cols();
  const auto row = logits.data().subspan((logits.rows() - 1) * v, v);
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double x : row) z += std::exp(x - mx);
  const double log_z = mx + std::log(z);
  std::vector<double> out(v);
  for (std::size_t i = 0; i < v; ++i) out[i] = row[i] - log_z;
  return out;
}

void push(TokenSequence& seq, int id) {
  seq.ids.push_back(id);
  seq.loss_mask.push_back(false);
}

std::size_t room(const DecoderLM& lm, const Tensor& fused, const TokenSequence& prompt, int max_new) {
  const std::size_t used = (fused.defined() ? fused.rows() : 0) + prompt.size();
  const std::size_t left = lm.max_length() > used ? lm.max_length() - used : 0;
  // The last generated token never has to be fed back in.
  return std::min<std::size_t>(static_cast<std::size_t>(max_new), left + 1);
}

struct Beam {
  TokenSequence seq;
  std::vector<int> generated;
  double log_prob = 0.0;
  bool finished = false;

  double score() const { return generated.empty() ? 0.0 : log_prob / static_cast<double>(generated.size()); }
};

bool better(const Beam& a, const Beam& b) {
  if (a.score() != b.score()) return a.score() > b.score();
  return a.generated < b.generated;
}

std::vector<int> beam_search(const DecoderLM& lm, const Tensor& fused, const TokenSequence& prompt,
                             const GenerationConfig& cfg, std::size_t steps) {
  const auto width = static_cast<std::size_t>(cfg.beam_width);
  std::vector<Beam> beams{Beam{prompt, {}, 0.0, false}};
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<Beam> candidates;
    bool expanded = false;
    for (const Beam& b : beams) {
      if (b.finished) {
        candidates.push_back(b);
        continue;
      }
      expanded = true;
      const std::vector<double> lp = next_log_probs(lm, fused, b.seq);
      std::vector<int> order(lp.size());
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(width, order.size())),
                        order.end(), [&](int x, int y) { return lp[x] != lp[y] ? lp[x] > lp[y] : x < y; });
      for (std::size_t k = 0; k < std::min(width, order.size()); ++k) {
        Beam nb = b;
        const int id = order[k];
        nb.generated.push_back(id);
        nb.log_prob += lp[static_cast<std::size_t>(id)];
        nb.finished = id == kEosId;
        if (!nb.finished) push(nb.seq, id);
        candidates.push_back(std::move(nb));
      }
    }
    if (!expanded) break;
    std::stable_sort(candidates.begin(), candidates.end(), better);
    if (candidates.size() > width) candidates.resize(width);
    beams = std::move(candidates);
  }
  return std::min_element(beams.begin(), beams.end(), better)->generated;
}

}  // namespace

int argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best);
}

int nucleus_pick(std::span<const double> probs, double top_p, double u) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += probs[static_cast<std::size_t>(order[keep])];
    ++keep;
    if (mass >= top_p) break;
  }
  double acc = 0.0;
  const double target = u * mass;
  for (std::size_t k = 0; k < keep; ++k) {
    acc += probs[static_cast<std::size_t>(order[k])];
    if (target < acc) return order[k];
  }
  return order[keep - 1];
}

std::vector<int> generate(const DecoderLM& lm, const Tensor& fused, const TokenSequence& prompt,
                          const GenerationConfig& config) {
  config.validate();
  NoGradGuard no_grad;
  const std::size_t steps = room(lm, fused, prompt, config.max_new_tokens);
  if (config.strategy == Strategy::Beam) return beam_search(lm, fused, prompt, config, steps);

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TokenSequence seq = prompt;
  std::vector<int> out;
  for (std::size_t step = 0; step < steps; ++step) {
    const std::vector<double> lp = next_log_probs(lm, fused, seq);
    int id = 0;
    if (config.strategy == Strategy::Greedy) {
      id = argmax_lowest(lp);
    } else {
      // Tempered distribution; max-subtraction keeps small temperatures finite.
      std::vector<double> p(lp.size());
      const double mx = *std::max_element(lp.begin(), lp.end());
      double z = 0.0;
      for (std::size_t i = 0; i < lp.size(); ++i) z += p[i] = std::exp((lp[i] - mx) / config.temperature);
      for (double& x : p) x /= z;
      id = nucleus_pick(p, config.top_p, unit(rng));
    }
    out.push_back(id);
    if (id == kEosId) break;
    push(seq, id);
  }
  return out;
}

double continuation_log_likelihood(const DecoderLM& lm, const Tensor& fused, const TokenSequence& prompt,
                                   const std::vector<int>& continuation) {
  NoGradGuard no_grad;
  TokenSequence seq = prompt;
  for (int id : continuation) push(seq, id);
  const Tensor logits = lm.forward_logits(lm.build_input(fused, seq));
  const std::size_t v = logits.cols();
  const std::size_t first = (fused.defined() ? fused.rows() : 0) + prompt.size() - 1;
  double total = 0.0;
  for (std::size_t k = 0; k < continuation.size(); ++k) {
    const auto row = logits.data().subspan((first + k) * v, v);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    total += row[static_cast<std::size_t>(continuation[k])] - mx - std::log(z);
  }
  return total;
}

}  // namespace fusecore
