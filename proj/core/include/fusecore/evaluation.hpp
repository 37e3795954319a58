#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fusecore/dataset.hpp"
#include "fusecore/generate.hpp"
#include "fusecore/metrics.hpp"
#include "fusecore/model.hpp"

namespace fusecore {

// Video in, text out: perceive, fuse, prompt for `task`, decode.
std::string infer(const Model& model, const Video& video, const std::vector<ObjectMask>& masks, Task task,
                  const GenerationConfig& generation);

// Index of the option with the highest log-likelihood as a caption
// continuation (ties go to the lower index).
int choose_option(const Model& model, const Tensor& fused, const MultipleChoice& mcq);

// What a responder produced for each record of a split.
struct Responses {
  std::vector<std::string> hypotheses;
  std::vector<int> choices;  // -1 for records without a multiple-choice item
};

Responses model_responses(const Model& model, const Dataset& dataset, const std::filesystem::path& dataset_dir,
                          const GenerationConfig& generation);
// Ground truth fed back as the answer: the upper bound of every metric.
Responses oracle_responses(const Dataset& dataset);
// Every record answered with the next record's ground truth.
Responses shuffled_responses(const Dataset& dataset);

struct SampleScore {
  std::uint64_t seed = 0;
  Task task = Task::Caption;
  std::string reference;
  std::string hypothesis;
  BleuStats bleu_stats;
  double bleu = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  int choice = -1;
  int answer = -1;
};

struct EvalReport {
  std::string split;
  std::string responder;
  std::string config_json;
  std::size_t samples = 0;
  std::optional<double> accuracy;  // absent when the split has no multiple-choice items
  double bleu = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  std::vector<SampleScore> records;
};

// Needs at least two records (CIDEr's idf).
EvalReport score_responses(const Dataset& dataset, const Responses& responses);

// One JSON line per sample, then a {"summary": ...} line. METEOR and
// BERTScore appear in the summary as null.
std::string encode_report(const EvalReport& report);
std::string summary_text(const EvalReport& report);

// Loads the checkpoint and split, generates, scores and writes the report to
// `out` (atomically).
EvalReport run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir, Split split,
                    const GenerationConfig& generation, const std::filesystem::path& out);

}  // namespace fusecore
