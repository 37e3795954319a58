#include "fusecore/training.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "fusecore/error.hpp"
#include "fusecore/lora.hpp"
#include "fusecore/ops.hpp"

namespace fusecore {

namespace {

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

bool is_adapter(const std::string& name) {
  return name.ends_with(".lora_a") || name.ends_with(".lora_b");
}

}  // namespace

std::vector<Example> examples_from_dataset(const Model& model, const Dataset& dataset,
                                           const std::filesystem::path& dataset_dir) {
  std::vector<Example> out;
  for (const Record& r : dataset.records) {
    const Video video = load_video(dataset_dir / r.video_path);
    const std::vector<ObjectMask> masks = load_masks(dataset_dir / r.mask_path);
    out.push_back({model.perceive(video, masks).combined, make_example(model.tokenizer, r.task, r.response)});
  }
  return out;
}

std::vector<Example> examples_from_samples(const Model& model, const std::vector<Sample>& samples,
                                           std::optional<Task> task) {
  std::vector<Example> out;
  for (const Sample& s : samples) {
    const Task t = task.value_or(task_for_seed(s.seed));
    out.push_back({model.perceive(s.video, s.masks).combined, make_example(model.tokenizer, t, s.response(t))});
  }
  return out;
}

void apply_freeze_plan(Model& model, int stage) {
  if (stage != 1 && stage != 2) throw ContractError("training stage must be 1 or 2, got " + std::to_string(stage));
  const LoraConfig& lora = model.config.lora;
  if (stage == 2 && !lora.full_unfreeze && !has_lora(model.lm)) {
    Rng rng(model.config.seed ^ 0x4c6f5241ULL);
    apply_lora(model.store, model.lm, lora_target_names(model.lm, lora.targets), lora.rank, lora.alpha, rng);
  }
  for (Parameter& p : model.store.all()) {
    bool trainable = false;
    if (starts_with(p.name, "fusion.")) {
      trainable = true;
    } else if (starts_with(p.name, "lm.") && stage == 2) {
      trainable = lora.full_unfreeze || is_adapter(p.name);
    }
    p.frozen = !trainable;
    p.value.set_requires_grad(trainable);
    p.value.clear_grad();
  }
}

double cosine_lr(std::int64_t step, const LrSchedule& s) {
  if (step < 0) throw ContractError("learning-rate step must be non-negative");
  if (step < s.warmup_steps) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (step >= s.total_steps) return step == s.warmup_steps ? s.base_lr : s.floor_lr;
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
  return s.floor_lr + 0.5 * (s.base_lr - s.floor_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_update(ParameterStore& store, AdamState& state, double lr, const OptimConfig& optim) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(optim.beta1, t);
  const double bc2 = 1.0 - std::pow(optim.beta2, t);
  for (Parameter& p : store.all()) {
    if (p.frozen) {
      p.value.clear_grad();
      continue;
    }
    if (!p.value.has_grad()) continue;
    Moments& mo = state.moments[p.name];
    const std::size_t n = p.value.size();
    if (mo.m.size() != n) {
      mo.m.assign(n, 0.0);
      mo.v.assign(n, 0.0);
    }
    auto w = p.value.mutable_data();
    const auto g = p.value.grad();
    for (std::size_t i = 0; i < n; ++i) {
      mo.m[i] = optim.beta1 * mo.m[i] + (1.0 - optim.beta1) * g[i];
      mo.v[i] = optim.beta2 * mo.v[i] + (1.0 - optim.beta2) * g[i] * g[i];
      const double m_hat = mo.m[i] / bc1;
      const double v_hat = mo.v[i] / bc2;
      w[i] -= lr * (m_hat / (std::sqrt(v_hat) + optim.eps) + optim.weight_decay * w[i]);
    }
  }
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const Parameter& p : store.all()) {
    if (p.frozen || !p.value.has_grad()) continue;
    for (double g : p.value.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (Parameter& p : store.all()) {
      if (p.frozen || !p.value.has_grad()) continue;
      for (double& g : p.value.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

Tensor lm_loss(const Tensor& logits, const ShiftedTargets& targets) {
  if (logits.rows() != targets.targets.size()) {
    throw DimensionError("logits have " + std::to_string(logits.rows()) + " rows but there are " +
                         std::to_string(targets.targets.size()) + " targets");
  }
  return cross_entropy_rows(logits, targets.targets, targets.mask);
}

Tensor batch_loss(const Model& model, std::span<const Example* const> batch) {
  if (batch.empty()) throw InvalidBatchError("empty batch");
  std::size_t total_tokens = 0;
  std::vector<ShiftedTargets> shifted;
  for (const Example* ex : batch) {
    const std::size_t vision_rows = ex->vision.defined() ? model.fusion.bank.count() : 0;
    shifted.push_back(shift_targets(vision_rows, ex->seq));
    total_tokens += static_cast<std::size_t>(std::count(shifted.back().mask.begin(), shifted.back().mask.end(), true));
  }
  if (total_tokens == 0) throw InvalidBatchError("every position of the batch is masked out");
  Tensor total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto count = static_cast<std::size_t>(std::count(shifted[i].mask.begin(), shifted[i].mask.end(), true));
    if (count == 0) continue;
    const Example& ex = *batch[i];
    const Tensor fused = ex.vision.defined() ? model.fuse(ex.vision) : Tensor();
    const Tensor logits = model.lm.forward_logits(model.lm.build_input(fused, ex.seq));
    const Tensor part = scale(lm_loss(logits, shifted[i]), static_cast<double>(count) / static_cast<double>(total_tokens));
    total = total.defined() ? add(total, part) : part;
  }
  return total;
}

std::int64_t total_steps_for(const OptimConfig& optim, std::size_t dataset_size) {
  if (optim.epochs > 0) {
    const auto samples = static_cast<std::int64_t>(optim.epochs) * static_cast<std::int64_t>(dataset_size);
    return (samples + optim.batch_size - 1) / optim.batch_size;
  }
  return optim.steps;
}

std::vector<std::size_t> batch_indices(std::uint64_t data_seed, std::int64_t step, std::size_t batch_size,
                                       std::size_t dataset_size) {
  if (dataset_size == 0) throw ContractError("cannot draw batches from an empty dataset");
  std::vector<std::size_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm(dataset_size);
  const auto n = static_cast<std::int64_t>(dataset_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::int64_t pos = step * static_cast<std::int64_t>(batch_size) + static_cast<std::int64_t>(b);
    const std::int64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(data_seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(pos % n)]);
  }
  return out;
}

TrainState train_stage(Model& model, const std::vector<Example>& data, const TrainOptions& options,
                       std::optional<TrainState> resume) {
  if (options.stage != 1 && options.stage != 2) throw ContractError("training stage must be 1 or 2");
  if (data.empty()) throw ContractError("training dataset is empty");
  if (options.stage == 2 && model.completed_stage < 1 && !options.allow_stage_override) {
    throw StageOrderError("stage 2 needs a model that has completed stage 1 (pass an override to skip)");
  }
  apply_freeze_plan(model, options.stage);

  TrainState state;
  if (resume) {
    state = std::move(*resume);
    if (state.stage != options.stage) throw StageOrderError("resume state belongs to a different stage");
  } else {
    state.stage = options.stage;
    state.total_steps = total_steps_for(options.optim, data.size());
    state.data_seed = model.config.seed * 31 + static_cast<std::uint64_t>(options.stage);
  }
  const LrSchedule schedule{options.optim.warmup_steps, state.total_steps, options.optim.lr, 0.0};
  const auto batch_size = static_cast<std::size_t>(options.optim.batch_size);
  const auto started = std::chrono::steady_clock::now();

  while (state.step < state.total_steps) {
    if (options.stop_after >= 0 && state.step >= options.stop_after) return state;
    const std::vector<std::size_t> idx = batch_indices(state.data_seed, state.step, batch_size, data.size());
    std::vector<const Example*> batch;
    for (std::size_t i : idx) batch.push_back(&data[i]);

    model.store.zero_grads();
    double loss_value = 0.0;
    {
      Tape tape;
      Tape::Scope scope(tape);
      const Tensor loss = batch_loss(model, batch);
      loss_value = loss.item();
      tape.backward(loss);
    }
    clip_grad_norm(model.store, options.optim.grad_clip);
    const double lr = cosine_lr(state.step + 1, schedule);
    adamw_update(model.store, state.adam, lr, options.optim);
    state.step += 1;
    state.losses.push_back(loss_value);

    if (options.on_step) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      options.on_step({state.step, lr, loss_value, secs});
    }
    const bool finished = state.step == state.total_steps;
    if (finished) model.completed_stage = std::max(model.completed_stage, options.stage);
    if (options.on_checkpoint &&
        (finished || (options.optim.checkpoint_every > 0 && state.step % options.optim.checkpoint_every == 0))) {
      options.on_checkpoint(state);
    }
  }
  model.store.clear_grads();
  return state;
}

std::vector<std::vector<int>> scene_sketch(const Trajectory& trajectory, std::size_t rows) {
  std::vector<std::vector<int>> sketch(rows);
  if (trajectory.states.empty()) return sketch;
  const auto& first = trajectory.states.front().entities;
  const auto& last = trajectory.states.back().entities;
  const std::size_t entity_rows = rows / 2;
  const std::vector<Outcome> outcomes = predict_outcomes(trajectory.states.back());
  const auto dir = [](Direction d) { return static_cast<int>(d); };
  const auto color = [](Color c) { return static_cast<int>(c); };
  // Entity row k describes the entity of color k (empty when absent).
  for (std::size_t i = 0; i < first.size(); ++i) {
    const auto slot = static_cast<std::size_t>(color(first[i].color));
    if (slot >= entity_rows) continue;
    auto& r = sketch[slot];
    r = {color(first[i].color), 4 + static_cast<int>(first[i].shape), 7 + dir(first[i].direction()),
         12 + dir(last[i].direction()), 17 + static_cast<int>(outcomes[i].kind)};
    if (outcomes[i].kind == Outcome::Kind::Hit) {
      r.push_back(21 + color(first[static_cast<std::size_t>(outcomes[i].other)].color));
    }
  }
  std::size_t row = entity_rows;
  for (const Event& ev : causal_events(trajectory)) {
    if (row >= rows) break;
    const int kind = ev.kind == EventKind::Bounce ? 0 : ev.kind == EventKind::Collide ? 1 : 2;
    const int object = ev.object < 0 ? 4 : color(first[static_cast<std::size_t>(ev.object)].color);
    sketch[row++] = {25 + kind, 28 + color(first[static_cast<std::size_t>(ev.subject)].color), 32 + object,
                     37 + dir(ev.direction)};
  }
  return sketch;
}

namespace {

struct SketchExample {
  std::vector<std::vector<int>> sketch;
  TokenSequence seq;
};

// Prefix rows for one example: each row is the mean of its facts' table rows
// (zero when empty), plus Gaussian noise.
Tensor sketch_prefix(const Tensor& table, const std::vector<std::vector<int>>& sketch, double noise, Rng& rng) {
  const std::size_t rows = sketch.size();
  std::vector<int> ids;
  std::vector<double> avg;
  std::vector<std::size_t> starts;
  for (const auto& r : sketch) {
    starts.push_back(ids.size());
    ids.insert(ids.end(), r.begin(), r.end());
  }
  const std::size_t n = ids.size();
  const std::size_t d = table.cols();
  std::normal_distribution<double> gauss(0.0, noise);
  std::vector<double> jitter(rows * d);
  for (double& x : jitter) x = noise > 0.0 ? gauss(rng) : 0.0;
  if (n == 0) return Tensor::from({rows, d}, std::move(jitter));
  avg.assign(rows * n, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < sketch[r].size(); ++k) {
      avg[r * n + starts[r] + k] = 1.0 / static_cast<double>(sketch[r].size());
    }
  }
  const Tensor mixed = matmul(Tensor::from({rows, n}, std::move(avg)), gather_rows(table, ids));
  return add(mixed, Tensor::from({rows, d}, std::move(jitter)));
}

}  // namespace

std::vector<double> pretrain_lm(Model& model, const std::function<void(const StepRecord&)>& on_step) {
  const PretrainConfig& cfg = model.config.pretrain;
  const std::size_t rows = model.fusion.bank.count();
  std::vector<SketchExample> corpus;
  for (int k = 0; k < cfg.corpus_size; ++k) {
    const Trajectory traj = simulate(cfg.seed_start + static_cast<std::uint64_t>(k), model.config.data.world);
    const Narration n = narrate(traj);
    const auto sketch = scene_sketch(traj, rows);
    corpus.push_back({sketch, make_example(model.tokenizer, Task::Caption, n.caption)});
    corpus.push_back({sketch, make_example(model.tokenizer, Task::Reasoning, n.explanation)});
    corpus.push_back({sketch, make_example(model.tokenizer, Task::Prediction, n.prediction)});
  }
  if (corpus.empty()) return {};

  Rng init(model.config.seed ^ 0x536b6574ULL);
  const Tensor table = model.store.normal("sketch.table", {kSketchFacts, model.lm.dim()}, 0.1, init);
  for (Parameter& p : model.store.all()) {
    const bool trainable = starts_with(p.name, "lm.") || p.name == "sketch.table";
    p.frozen = !trainable;
    p.value.set_requires_grad(trainable);
  }

  const OptimConfig& optim = cfg.optim;
  const std::int64_t total = total_steps_for(optim, corpus.size());
  const LrSchedule schedule{optim.warmup_steps, total, optim.lr, 0.0};
  AdamState adam;
  std::vector<double> losses;
  const std::uint64_t data_seed = model.config.seed * 31 + 7;
  const auto started = std::chrono::steady_clock::now();
  for (std::int64_t step = 0; step < total; ++step) {
    const auto idx = batch_indices(data_seed, step, static_cast<std::size_t>(optim.batch_size), corpus.size());
    Rng noise_rng(data_seed ^ static_cast<std::uint64_t>(step) * 0x2545f4914f6cdd1dULL);
    model.store.zero_grads();
    double loss_value = 0.0;
    {
      Tape tape;
      Tape::Scope scope(tape);
      std::size_t total_tokens = 0;
      std::vector<ShiftedTargets> shifted;
      for (std::size_t i : idx) {
        shifted.push_back(shift_targets(rows, corpus[i].seq));
        total_tokens += static_cast<std::size_t>(std::count(shifted.back().mask.begin(), shifted.back().mask.end(), true));
      }
      Tensor loss;
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const SketchExample& ex = corpus[idx[b]];
        const Tensor prefix = sketch_prefix(table, ex.sketch, cfg.sketch_noise, noise_rng);
        const Tensor logits = model.lm.forward_logits(model.lm.build_input(prefix, ex.seq));
        const auto count = static_cast<double>(std::count(shifted[b].mask.begin(), shifted[b].mask.end(), true));
        const Tensor part = scale(lm_loss(logits, shifted[b]), count / static_cast<double>(total_tokens));
        loss = loss.defined() ? add(loss, part) : part;
      }
      loss_value = loss.item();
      tape.backward(loss);
    }
    clip_grad_norm(model.store, optim.grad_clip);
    const double lr = cosine_lr(step + 1, schedule);
    adamw_update(model.store, adam, lr, optim);
    losses.push_back(loss_value);
    if (on_step) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      on_step({step + 1, lr, loss_value, secs});
    }
  }
  model.store.remove("sketch.table");
  model.store.clear_grads();
  for (Parameter& p : model.store.all()) {
    p.frozen = true;
    p.value.set_requires_grad(false);
  }
  model.lm_pretrained = true;
  return losses;
}

namespace {

// Attribute labels for every object token of a sample, in the order
// perceive() emits them: shape, then color, then direction of travel.
std::array<std::vector<int>, 3> object_labels(const Sample& sample, const ClipPlan& plan) {
  std::array<std::vector<int>, 3> labels;
  const auto keys = plan.keyframe_indices(sample.video.frame_count());
  for (std::size_t key : keys) {
    for (const ObjectMask& m : sample.masks) {
      if (static_cast<std::size_t>(m.frame_index) != key) continue;
      const Entity& e = sample.trajectory.states[key].entities[static_cast<std::size_t>(m.object_id)];
      labels[0].push_back(static_cast<int>(e.shape));
      labels[1].push_back(static_cast<int>(e.color));
      labels[2].push_back(static_cast<int>(e.direction()));
    }
  }
  return labels;
}

}  // namespace

std::vector<double> pretrain_encoder(Model& model, const std::function<void(const StepRecord&)>& on_step) {
  const PretrainConfig& cfg = model.config.pretrain;
  const OptimConfig& optim = cfg.encoder_optim;
  if (cfg.corpus_size == 0) return {};
  const std::size_t corpus = static_cast<std::size_t>(cfg.corpus_size);

  Rng init(model.config.seed ^ 0x56464dULL);
  constexpr std::size_t kDirections = 5;
  const std::array<std::size_t, 3> classes{kShapeCount, kColorCount, kDirections};
  std::vector<Linear> heads;
  const auto dim = static_cast<std::size_t>(model.config.perception.dim);
  for (std::size_t h = 0; h < classes.size(); ++h) {
    heads.push_back(Linear::create(model.store, "encoder_probe.head" + std::to_string(h), dim, classes[h], init));
  }
  for (Parameter& p : model.store.all()) {
    const bool trainable = starts_with(p.name, "encoder.") || starts_with(p.name, "encoder_probe.");
    p.frozen = !trainable;
    p.value.set_requires_grad(trainable);
  }

  const std::int64_t total = total_steps_for(optim, corpus);
  const LrSchedule schedule{optim.warmup_steps, total, optim.lr, 0.0};
  AdamState adam;
  std::vector<double> losses;
  const std::uint64_t data_seed = model.config.seed * 37 + 11;
  const auto started = std::chrono::steady_clock::now();
  for (std::int64_t step = 0; step < total; ++step) {
    const auto idx = batch_indices(data_seed, step, static_cast<std::size_t>(optim.batch_size), corpus);
    model.store.zero_grads();
    double loss_value = 0.0;
    {
      Tape tape;
      Tape::Scope scope(tape);
      Tensor loss;
      for (std::size_t i : idx) {
        const Sample sample = make_sample(cfg.seed_start + i, model.config);
        const auto labels = object_labels(sample, model.plan);
        const VisionTokens vt = perceive(model.encoder, sample.video, sample.masks, model.plan);
        if (!vt.objects.defined()) continue;
        for (std::size_t h = 0; h < heads.size(); ++h) {
          const std::vector<bool> mask(labels[h].size(), true);
          const Tensor part = scale(cross_entropy_rows(heads[h].forward(vt.objects), labels[h], mask),
                                    1.0 / static_cast<double>(idx.size()));
          loss = loss.defined() ? add(loss, part) : part;
        }
      }
      if (loss.defined()) {
        loss_value = loss.item();
        tape.backward(loss);
      }
    }
    clip_grad_norm(model.store, optim.grad_clip);
    const double lr = cosine_lr(step + 1, schedule);
    adamw_update(model.store, adam, lr, optim);
    losses.push_back(loss_value);
    if (on_step) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      on_step({step + 1, lr, loss_value, secs});
    }
  }
  for (std::size_t h = 0; h < heads.size(); ++h) {
    model.store.remove("encoder_probe.head" + std::to_string(h) + ".weight");
    model.store.remove("encoder_probe.head" + std::to_string(h) + ".bias");
  }
  model.store.clear_grads();
  for (Parameter& p : model.store.all()) {
    p.frozen = true;
    p.value.set_requires_grad(false);
  }
  model.encoder_pretrained = true;
  return losses;
}

}  // namespace fusecore
