#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace fusecore {

using Words = std::vector<std::string>;

// Lowercased word segmentation used by every metric (whitespace split, the
// same word boundaries the model tokenizer uses).
Words metric_tokens(std::string_view text);

// Fraction of positions where prediction == answer. Throws ContractError on
// a length mismatch or empty input.
double accuracy_mcq(const std::vector<int>& predictions, const std::vector<int>& answers);

inline constexpr int kBleuMaxN = 4;
inline constexpr double kBleuEpsilon = 1e-9;

// Sufficient statistics for corpus BLEU; they add across samples.
struct BleuStats {
  std::array<double, kBleuMaxN> matches{};  // clipped n-gram matches
  std::array<double, kBleuMaxN> totals{};   // hypothesis n-grams
  double hyp_length = 0.0;
  double ref_length = 0.0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(const Words& hypothesis, const Words& reference, int max_n = kBleuMaxN);
// Geometric mean of the n-gram precisions times the brevity penalty. A zero
// (or undefined) precision is replaced by kBleuEpsilon.
double bleu_from_stats(const BleuStats& stats, int max_n = kBleuMaxN);
// Corpus BLEU. Throws ContractError on an empty corpus or a size mismatch.
double bleu(const std::vector<Words>& hypotheses, const std::vector<Words>& references, int max_n = kBleuMaxN);

inline constexpr double kRougeBeta = 1.2;

std::size_t lcs_length(const Words& a, const Words& b);
// LCS F-measure with beta = 1.2; 0 when either side is empty.
double rouge_l(const Words& hypothesis, const Words& reference);
double rouge_l_corpus(const std::vector<Words>& hypotheses, const std::vector<Words>& references);

struct CiderResult {
  double score = 0.0;               // mean of per_sample
  std::vector<double> per_sample;   // 10 * mean over n of the TF-IDF cosine
};

// Plain CIDEr with one reference per sample: n = 1..4, term counts weighted by
// idf = log(N / max(1, df)) with df counted over the references, cosine per n.
// Throws ContractError for fewer than two samples.
CiderResult cider(const std::vector<Words>& hypotheses, const std::vector<Words>& references);

}  // namespace fusecore
