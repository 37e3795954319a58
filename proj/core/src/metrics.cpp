#include "fusecore/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "fusecore/error.hpp"

namespace fusecore {

namespace {

using NgramCounts = std::map<Words, double>;

NgramCounts ngrams(const Words& words, int n) {
  NgramCounts counts;
  const auto len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= words.size(); ++i) {
    counts[Words(words.begin() + static_cast<std::ptrdiff_t>(i),
                 words.begin() + static_cast<std::ptrdiff_t>(i + len))] += 1.0;
  }
  return counts;
}

void check_corpus(std::size_t hyps, std::size_t refs) {
  if (hyps != refs) {
    throw ContractError(std::to_string(hyps) + " hypotheses for " + std::to_string(refs) + " references");
  }
  if (hyps == 0) throw ContractError("metric needs a non-empty corpus");
}

}  // namespace

Words metric_tokens(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lower);
  Words words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

double accuracy_mcq(const std::vector<int>& predictions, const std::vector<int>& answers) {
  check_corpus(predictions.size(), answers.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < answers.size(); ++i) hits += predictions[i] == answers[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(answers.size());
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int n = 0; n < kBleuMaxN; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_length += o.hyp_length;
  ref_length += o.ref_length;
  return *this;
}

BleuStats bleu_stats(const Words& hypothesis, const Words& reference, int max_n) {
  if (max_n < 1 || max_n > kBleuMaxN) throw ContractError("BLEU order must be in 1..4");
  BleuStats s;
  s.hyp_length = static_cast<double>(hypothesis.size());
  s.ref_length = static_cast<double>(reference.size());
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts hyp = ngrams(hypothesis, n);
    const NgramCounts ref = ngrams(reference, n);
    for (const auto& [gram, count] : hyp) {
      const auto it = ref.find(gram);
      if (it != ref.end()) s.matches[n - 1] += std::min(count, it->second);
      s.totals[n - 1] += count;
    }
  }
  return s;
}

double bleu_from_stats(const BleuStats& s, int max_n) {
  if (s.hyp_length == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < max_n; ++n) {
    const double p = s.matches[n] > 0.0 ? s.matches[n] / s.totals[n] : kBleuEpsilon;
    log_sum += std::log(p);
  }
  const double bp = s.hyp_length < s.ref_length ? std::exp(1.0 - s.ref_length / s.hyp_length) : 1.0;
  return bp * std::exp(log_sum / max_n);
}

double bleu(const std::vector<Words>& hypotheses, const std::vector<Words>& references, int max_n) {
  check_corpus(hypotheses.size(), references.size());
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu_stats(hypotheses[i], references[i], max_n);
  return bleu_from_stats(total, max_n);
}

std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (const auto& wa : a) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      cur[j + 1] = wa == b[j] ? prev[j] + 1 : std::max(prev[j + 1], cur[j]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Words& hypothesis, const Words& reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(hypothesis, reference));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(hypothesis.size());
  const double recall = lcs / static_cast<double>(reference.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * precision * recall / (recall + b2 * precision);
}

double rouge_l_corpus(const std::vector<Words>& hypotheses, const std::vector<Words>& references) {
  check_corpus(hypotheses.size(), references.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) sum += rouge_l(hypotheses[i], references[i]);
  return sum / static_cast<double>(hypotheses.size());
}

CiderResult cider(const std::vector<Words>& hypotheses, const std::vector<Words>& references) {
  check_corpus(hypotheses.size(), references.size());
  if (references.size() < 2) throw ContractError("CIDEr needs at least two samples to estimate idf");
  const auto n_docs = static_cast<double>(references.size());
  CiderResult result;
  result.per_sample.assign(hypotheses.size(), 0.0);
  for (int n = 1; n <= 4; ++n) {
    std::vector<NgramCounts> ref_counts;
    std::map<Words, double> df;
    for (const auto& ref : references) {
      ref_counts.push_back(ngrams(ref, n));
      for (const auto& entry : ref_counts.back()) df[entry.first] += 1.0;
    }
    const auto idf = [&](const Words& gram) {
      const auto it = df.find(gram);
      return std::log(n_docs / std::max(1.0, it == df.end() ? 0.0 : it->second));
    };
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
      const NgramCounts hyp = ngrams(hypotheses[i], n);
      double dot = 0.0;
      double hyp_norm = 0.0;
      double ref_norm = 0.0;
      for (const auto& [gram, count] : hyp) {
        const double w = count * idf(gram);
        hyp_norm += w * w;
        const auto it = ref_counts[i].find(gram);
        if (it != ref_counts[i].end()) dot += w * it->second * idf(gram);
      }
      for (const auto& [gram, count] : ref_counts[i]) {
        const double w = count * idf(gram);
        ref_norm += w * w;
      }
      if (hyp_norm > 0.0 && ref_norm > 0.0) result.per_sample[i] += dot / (std::sqrt(hyp_norm) * std::sqrt(ref_norm));
    }
  }
  double sum = 0.0;
  for (double& s : result.per_sample) {
    s = 10.0 * s / 4.0;
    sum += s;
  }
  result.score = sum / static_cast<double>(result.per_sample.size());
  return result;
}

}  // namespace fusecore
