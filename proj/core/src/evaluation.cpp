#include "fusecore/evaluation.hpp"

#include <cstdio>
#include <json.hpp>

#include "fusecore/checkpoint.hpp"
#include "fusecore/error.hpp"

namespace fusecore {

namespace {

using json = nlohmann::json;

Tensor fused_for(const Model& model, const Video& video, const std::vector<ObjectMask>& masks) {
  NoGradGuard no_grad;
  return model.fuse(model.perceive(video, masks).combined);
}

}  // namespace

std::string infer(const Model& model, const Video& video, const std::vector<ObjectMask>& masks, Task task,
                  const GenerationConfig& generation) {
  const Tensor fused = fused_for(model, video, masks);
  return model.tokenizer.decode(generate(model.lm, fused, make_prompt(model.tokenizer, task), generation));
}

int choose_option(const Model& model, const Tensor& fused, const MultipleChoice& mcq) {
  const TokenSequence prompt = make_prompt(model.tokenizer, Task::Caption);
  int best = 0;
  double best_ll = 0.0;
  for (int i = 0; i < 4; ++i) {
    std::vector<int> ids = model.tokenizer.encode(mcq.options[static_cast<std::size_t>(i)]);
    ids.push_back(kEosId);
    const double ll = continuation_log_likelihood(model.lm, fused, prompt, ids);
    if (i == 0 || ll > best_ll) {
      best = i;
      best_ll = ll;
    }
  }
  return best;
}

Responses model_responses(const Model& model, const Dataset& dataset, const std::filesystem::path& dataset_dir,
                          const GenerationConfig& generation) {
  Responses out;
  for (const Record& r : dataset.records) {
    const Video video = load_video(dataset_dir / r.video_path);
    const std::vector<ObjectMask> masks = load_masks(dataset_dir / r.mask_path);
    const Tensor fused = fused_for(model, video, masks);
    GenerationConfig g = generation;
    g.seed = generation.seed * 0x9e3779b97f4a7c15ULL + r.seed;
    out.hypotheses.push_back(
        model.tokenizer.decode(generate(model.lm, fused, make_prompt(model.tokenizer, r.task), g)));
    out.choices.push_back(r.mcq ? choose_option(model, fused, *r.mcq) : -1);
  }
  return out;
}

Responses oracle_responses(const Dataset& dataset) {
  Responses out;
  for (const Record& r : dataset.records) {
    out.hypotheses.push_back(r.response);
    out.choices.push_back(r.mcq ? r.mcq->answer : -1);
  }
  return out;
}

Responses shuffled_responses(const Dataset& dataset) {
  Responses out;
  const std::size_t n = dataset.records.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Record& other = dataset.records[(i + 1) % n];
    out.hypotheses.push_back(other.response);
    out.choices.push_back(dataset.records[i].mcq && other.mcq ? other.mcq->answer : -1);
  }
  return out;
}

EvalReport score_responses(const Dataset& dataset, const Responses& responses) {
  const std::size_t n = dataset.records.size();
  if (responses.hypotheses.size() != n || responses.choices.size() != n) {
    throw ContractError("responses do not match the dataset size");
  }
  std::vector<Words> hyps;
  std::vector<Words> refs;
  for (std::size_t i = 0; i < n; ++i) {
    hyps.push_back(metric_tokens(responses.hypotheses[i]));
    refs.push_back(metric_tokens(dataset.records[i].response));
  }
  EvalReport report;
  report.split = std::string(to_string(dataset.header.split));
  report.samples = n;
  report.bleu = bleu(hyps, refs);
  report.rouge_l = rouge_l_corpus(hyps, refs);
  const CiderResult c = cider(hyps, refs);
  report.cider = c.score;

  std::vector<int> choices;
  std::vector<int> answers;
  for (std::size_t i = 0; i < n; ++i) {
    const Record& r = dataset.records[i];
    SampleScore s;
    s.seed = r.seed;
    s.task = r.task;
    s.reference = r.response;
    s.hypothesis = responses.hypotheses[i];
    s.bleu_stats = bleu_stats(hyps[i], refs[i]);
    s.bleu = bleu_from_stats(s.bleu_stats);
    s.rouge_l = rouge_l(hyps[i], refs[i]);
    s.cider = c.per_sample[i];
    if (r.mcq) {
      s.answer = r.mcq->answer;
      s.choice = responses.choices[i];
      choices.push_back(s.choice);
      answers.push_back(s.answer);
    }
    report.records.push_back(std::move(s));
  }
  if (!answers.empty()) report.accuracy = accuracy_mcq(choices, answers);
  return report;
}

std::string encode_report(const EvalReport& report) {
  std::string out;
  for (const SampleScore& s : report.records) {
    const json j = {{"seed", s.seed},
                    {"task", to_string(s.task)},
                    {"reference", s.reference},
                    {"hypothesis", s.hypothesis},
                    {"bleu", s.bleu},
                    {"bleu_matches", s.bleu_stats.matches},
                    {"bleu_totals", s.bleu_stats.totals},
                    {"hyp_length", s.bleu_stats.hyp_length},
                    {"ref_length", s.bleu_stats.ref_length},
                    {"rouge_l", s.rouge_l},
                    {"cider", s.cider},
                    {"choice", s.choice},
                    {"answer", s.answer}};
    out += j.dump() + "\n";
  }
  json summary = {{"split", report.split},
                  {"responder", report.responder},
                  {"samples", report.samples},
                  {"accuracy", report.accuracy ? json(*report.accuracy) : json(nullptr)},
                  {"bleu", report.bleu},
                  {"rouge_l", report.rouge_l},
                  {"cider", report.cider},
                  {"meteor", nullptr},
                  {"bertscore", nullptr}};
  if (!report.config_json.empty()) summary["config"] = json::parse(report.config_json);
  out += json{{"summary", summary}}.dump() + "\n";
  return out;
}

std::string summary_text(const EvalReport& report) {
  char buf[256];
  std::string acc = report.accuracy ? std::to_string(*report.accuracy) : std::string("n/a");
  std::snprintf(buf, sizeof buf, "split=%s samples=%zu accuracy=%s bleu=%.6f rouge_l=%.6f cider=%.6f",
                report.split.c_str(), report.samples, acc.c_str(), report.bleu, report.rouge_l, report.cider);
  return buf;
}

EvalReport run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir, Split split,
                    const GenerationConfig& generation, const std::filesystem::path& out) {
  generation.validate();
  if (!std::filesystem::exists(checkpoint)) throw ContractError("checkpoint not found: " + checkpoint.string());
  const Checkpoint ck = load_checkpoint(checkpoint.string());
  const Dataset dataset = load_split(dataset_dir, split, ck.model->tokenizer);
  EvalReport report = score_responses(dataset, model_responses(*ck.model, dataset, dataset_dir, generation));
  report.responder = "model";
  json cfg = json::parse(to_json(ck.model->config));
  cfg["generation"] = {{"strategy", to_string(generation.strategy)},
                       {"top_p", generation.top_p},
                       {"temperature", generation.temperature},
                       {"beam_width", generation.beam_width},
                       {"max_new_tokens", generation.max_new_tokens},
                       {"seed", generation.seed}};
  report.config_json = cfg.dump();
  write_file_atomic(out, encode_report(report));
  return report;
}

}  // namespace fusecore
