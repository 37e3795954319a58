#include "fusecore/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "fusecore/assets.hpp"
#include "fusecore/error.hpp"
#include "fusecore/microworld.hpp"

namespace fusecore {

namespace {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// "step-by-step" -> {"step", "-", "by", "-", "step"}
std::vector<std::string> word_pieces(const std::string& chunk) {
  std::vector<std::string> out;
  std::string word;
  for (char ch : chunk) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      word += ch;
      continue;
    }
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
    out.emplace_back(1, ch);
  }
  if (!word.empty()) out.push_back(std::move(word));
  return out;
}

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 3) throw ContractError("vocabulary needs the three reserved tokens");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ContractError("empty token in vocabulary");
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ContractError("duplicate token '" + tokens_[i] + "'");
    }
    longest_ = std::max(longest_, tokens_[i].size());
  }
}

Tokenizer Tokenizer::standard() {
  std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>"};
  std::set<std::string> seen(tokens.begin(), tokens.end());
  const auto add = [&](const std::string& t) {
    if (seen.insert(t).second) tokens.push_back(t);
  };
  for (const auto& w : narration_lexicon()) add(w);
  for (auto prompt : {assets::kPromptReasoning, assets::kPromptPrediction, assets::kPromptCaption}) {
    for (const auto& chunk : split_whitespace(prompt)) {
      const auto pieces = word_pieces(chunk);
      for (std::size_t i = 0; i < pieces.size(); ++i) add(i == 0 ? pieces[i] : "##" + pieces[i]);
    }
  }
  for (int c = 33; c < 127; ++c) add(std::string(1, static_cast<char>(c)));
  for (int c = 33; c < 127; ++c) add("##" + std::string(1, static_cast<char>(c)));
  return Tokenizer(std::move(tokens));
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Tokenizer::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& chunk : split_whitespace(text)) {
    std::size_t pos = 0;
    while (pos < chunk.size()) {
      const std::string prefix = pos == 0 ? "" : "##";
      int found = -1;
      std::size_t found_len = 0;
      for (std::size_t len = std::min(longest_, chunk.size() - pos); len > 0; --len) {
        auto it = index_.find(prefix + chunk.substr(pos, len));
        if (it != index_.end()) {
          found = it->second;
          found_len = len;
          break;
        }
      }
      if (found < 0) throw ContractError("cannot tokenize character '" + chunk.substr(pos, 1) + "'");
      ids.push_back(found);
      pos += found_len;
    }
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    const std::string& t = token(id);
    if (t.size() > 2 && t.starts_with("##")) {
      out += t.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += t;
    }
  }
  return out;
}

std::uint64_t Tokenizer::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0x0a;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string_view to_string(Task task) {
  switch (task) {
    case Task::Caption: return "caption";
    case Task::Reasoning: return "reasoning";
    case Task::Prediction: return "prediction";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "caption") return Task::Caption;
  if (name == "reasoning") return Task::Reasoning;
  if (name == "prediction") return Task::Prediction;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected caption, reasoning or prediction)");
}

std::string_view prompt_text(Task task) {
  switch (task) {
    case Task::Caption: return assets::kPromptCaption;
    case Task::Reasoning: return assets::kPromptReasoning;
    case Task::Prediction: return assets::kPromptPrediction;
  }
  return {};
}

TokenSequence make_prompt(const Tokenizer& tok, Task task) {
  TokenSequence seq;
  seq.ids.push_back(kBosId);
  for (int id : tok.encode(prompt_text(task))) seq.ids.push_back(id);
  seq.loss_mask.assign(seq.ids.size(), false);
  return seq;
}

TokenSequence make_example(const Tokenizer& tok, Task task, std::string_view response) {
  TokenSequence seq = make_prompt(tok, task);
  for (int id : tok.encode(response)) {
    seq.ids.push_back(id);
    seq.loss_mask.push_back(true);
  }
  seq.ids.push_back(kEosId);
  seq.loss_mask.push_back(true);
  return seq;
}

}  // namespace fusecore
