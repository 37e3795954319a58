#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fusecore {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;

// Word-level vocabulary over the closed corpus lexicon, with a character
// fallback. Text is split on whitespace; each chunk is segmented by greedy
// longest match, pieces after the first carrying a "##" continuation prefix.
class Tokenizer {
 public:
  explicit Tokenizer(std::vector<std::string> tokens);
  // Narration lexicon + prompt-template words + printable ASCII characters.
  static Tokenizer standard();

  std::vector<int> encode(std::string_view text) const;
  // Special ids are skipped.
  std::string decode(const std::vector<int>& ids) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  int id(std::string_view token) const;  // -1 when absent
  const std::vector<std::string>& tokens() const { return tokens_; }
  // FNV-1a over the token list; stored in datasets and checkpoints.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::size_t longest_ = 1;
};

enum class Task { Caption, Reasoning, Prediction };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);  // throws ConfigError
std::string_view prompt_text(Task task);

// Token positions with a per-position loss mask.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<bool> loss_mask;

  std::size_t size() const { return ids.size(); }
};

// [BOS] prompt-words, all masked out.
TokenSequence make_prompt(const Tokenizer& tok, Task task);
// [BOS] prompt-words response-words [EOS]; only response words and EOS count
// towards the loss.
TokenSequence make_example(const Tokenizer& tok, Task task, std::string_view response);

}  // namespace fusecore
