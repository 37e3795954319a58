#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusecore/dataset.hpp"
#include "fusecore/microworld.hpp"
#include "fusecore/model.hpp"

namespace fusecore {

// Stage 1: encoder and LM frozen, fusion core trainable.
// Stage 2: encoder and LM base frozen, fusion core and LoRA adapters
// trainable (adapters are attached on first use). With lora.full_unfreeze the
// whole LM trains instead. Frozen parameters also stop requiring gradients.
void apply_freeze_plan(Model& model, int stage);

struct LrSchedule {
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  double base_lr = 1e-3;
  double floor_lr = 0.0;
};

// Linear 0 -> base over the warmup, cosine base -> floor up to total_steps,
// floor afterwards.
double cosine_lr(std::int64_t step, const LrSchedule& schedule);

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, Moments> moments;
};

// One AdamW step over every non-frozen parameter that holds a gradient:
// bias-corrected moments, eps inside the denominator, and decoupled decay
// w -= lr * wd * w. Frozen parameters are untouched and their gradients are
// dropped.
void adamw_update(ParameterStore& store, AdamState& state, double lr, const OptimConfig& optim);

// Rescales trainable gradients so their global L2 norm is at most
// `max_norm`; returns the norm before clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

// One training sequence: cached Z_vision rows (or a stand-in prefix) plus
// the tokenised text with its loss mask.
struct Example {
  Tensor vision;
  TokenSequence seq;
};

// Perceives every record's video (from files under `dataset_dir`) and pairs
// the vision rows with the record's tokenised instruction and response.
std::vector<Example> examples_from_dataset(const Model& model, const Dataset& dataset,
                                           const std::filesystem::path& dataset_dir);
// Same, from in-memory samples; `task` of nullopt uses task_for_seed.
std::vector<Example> examples_from_samples(const Model& model, const std::vector<Sample>& samples,
                                           std::optional<Task> task);

// Mean masked next-token cross-entropy; `targets` already shifted.
Tensor lm_loss(const Tensor& logits, const ShiftedTargets& targets);

// Token-weighted mean loss over a batch: sum of per-token losses over the
// number of masked-in tokens in the whole batch. Vision rows go through the
// fusion core.
Tensor batch_loss(const Model& model, std::span<const Example* const> batch);

struct StepRecord {
  std::int64_t step = 0;  // 1-based count of completed updates
  double lr = 0.0;
  double loss = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  int stage = 1;
  std::int64_t step = 0;
  std::int64_t total_steps = 0;
  std::uint64_t data_seed = 0;
  AdamState adam;
  std::vector<double> losses;
};

struct TrainOptions {
  int stage = 1;
  OptimConfig optim;
  // Lets stage 2 run on a model that has not completed stage 1.
  bool allow_stage_override = false;
  // Stop once this many updates are done (< 0: run to the end).
  std::int64_t stop_after = -1;
  std::function<void(const StepRecord&)> on_step;
  // Called every optim.checkpoint_every updates and once at the end.
  std::function<void(const TrainState&)> on_checkpoint;
};

std::int64_t total_steps_for(const OptimConfig& optim, std::size_t dataset_size);

// Indices of the examples in batch `step` (0-based): each epoch is a fresh
// permutation drawn from (data_seed, epoch), so the order depends only on the
// step number and resuming needs no extra state.
std::vector<std::size_t> batch_indices(std::uint64_t data_seed, std::int64_t step, std::size_t batch_size,
                                       std::size_t dataset_size);

// Runs (or resumes) one stage. Throws StageOrderError for stage 2 on a model
// without stage 1 (unless overridden) and ContractError on an empty dataset.
TrainState train_stage(Model& model, const std::vector<Example>& data, const TrainOptions& options,
                       std::optional<TrainState> resume = std::nullopt);

// Symbolic scene description used as the prefix during LM warm-up: a list of
// fact ids per prefix row (entity rows first, then causal-event rows).
std::vector<std::vector<int>> scene_sketch(const Trajectory& trajectory, std::size_t rows);
inline constexpr std::size_t kSketchFacts = 42;

// Text-only warm-up of the LM (stand-in for a pretrained LLM): trains the LM
// on corpus text for worlds drawn from the pretrain seed range, with a
// learned embedding of the scene sketch in the vision rows. The sketch table
// is discarded afterwards.
std::vector<double> pretrain_lm(Model& model, const std::function<void(const StepRecord&)>& on_step = {});

// Supervised warm-up of the video encoder (stand-in for a pretrained video
// backbone): linear heads on the object tokens predict each object's shape,
// color and direction for worlds from the pretrain seed range. The heads are
// discarded afterwards and the encoder is frozen.
std::vector<double> pretrain_encoder(Model& model, const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace fusecore
