// fusecore: dataset generation, two-stage training, generation and evaluation.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "fusecore/checkpoint.hpp"
#include "fusecore/config.hpp"
#include "fusecore/dataset.hpp"
#include "fusecore/error.hpp"
#include "fusecore/evaluation.hpp"
#include "fusecore/generate.hpp"
#include "fusecore/training.hpp"

namespace fs = std::filesystem;
using namespace fusecore;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct ConfigFlags {
  std::string config_path;
  std::string preset = "toy";
  std::vector<std::string> overrides;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (may name a preset to start from)")
        ->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "built-in preset used when --config is absent")
        ->check(CLI::IsMember({"toy", "paper"}));
    app->add_option("--set", overrides, "override one config value, e.g. --set stage1.lr=3e-4 (repeatable)");
  }

  Config resolve() const {
    Config cfg = config_path.empty() ? preset_config(preset) : load_config(config_path);
    std::vector<std::string> all = overrides;
    if (const char* env = std::getenv("FUSECORE_SEED"); env != nullptr && *env != '\0') {
      all.push_back(std::string("seed=") + env);
    }
    cfg = apply_overrides(cfg, all);
    validate(cfg);
    return cfg;
  }
};

struct GenerationFlags {
  std::string strategy = "greedy";
  GenerationConfig config;

  void add_to(CLI::App* app) {
    app->add_option("--strategy", strategy, "greedy, nucleus or beam")
        ->check(CLI::IsMember({"greedy", "nucleus", "beam"}));
    app->add_option("--top-p", config.top_p, "nucleus mass threshold");
    app->add_option("--temperature", config.temperature, "softmax temperature for nucleus sampling");
    app->add_option("--beam-width", config.beam_width, "beams kept by beam search");
    app->add_option("--max-new-tokens", config.max_new_tokens, "generation length limit");
    app->add_option("--seed", config.seed, "sampling seed");
  }

  GenerationConfig resolve() const {
    GenerationConfig g = config;
    g.strategy = parse_strategy(strategy);
    if (const char* env = std::getenv("FUSECORE_SEED"); env != nullptr && *env != '\0' && g.seed == 0) {
      g.seed = std::stoull(env);
    }
    g.validate();
    return g;
  }
};

void append_log(std::ofstream& log, const StepRecord& r) {
  const nlohmann::json j = {{"step", r.step}, {"lr", r.lr}, {"loss", r.loss}, {"seconds", r.seconds}};
  log << j.dump() << '\n';
  log.flush();
}

// make-data ---------------------------------------------------------------

struct MakeDataArgs {
  ConfigFlags cfg;
  std::string out;
};

int run_make_data(const MakeDataArgs& a) {
  const Config cfg = a.cfg.resolve();
  emit_dataset(cfg, a.out);
  std::printf("wrote stage1=%llu stage2=%llu val=%llu eval=%llu samples to %s\n",
              static_cast<unsigned long long>(cfg.data.train.count),
              static_cast<unsigned long long>(cfg.data.train.count),
              static_cast<unsigned long long>(cfg.data.val.count),
              static_cast<unsigned long long>(cfg.data.test.count), a.out.c_str());
  return kExitOk;
}

// train -------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags cfg;
  std::string data;
  std::string out;
  int stage = 1;
  std::string init;
  std::string resume;
  bool allow_stage_override = false;
  bool skip_warmup = false;
  bool force = false;
};

int run_train(const TrainArgs& a) {
  const fs::path out(a.out);
  const fs::path final_path = out / ("stage" + std::to_string(a.stage) + ".fckp");
  if (fs::exists(final_path) && !a.force && a.resume.empty()) {
    throw ContractError(final_path.string() + " already exists (pass --force to overwrite)");
  }

  std::unique_ptr<Model> model;
  std::optional<TrainState> resume;
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    if (!ck.train) throw ContractError(a.resume + " holds no training state to resume");
    model = std::move(ck.model);
    resume = std::move(ck.train);
  } else if (!a.init.empty()) {
    model = load_checkpoint(a.init).model;
    // Overrides on the command line still apply to the training section.
    const Config cfg = apply_overrides(model->config, a.cfg.overrides);
    model->config.stage1 = cfg.stage1;
    model->config.stage2 = cfg.stage2;
  } else {
    if (a.stage == 2 && !a.allow_stage_override) {
      throw StageOrderError("stage 2 needs a stage-1 checkpoint (--init) or --allow-stage-override");
    }
    model = Model::create(a.cfg.resolve());
  }
  fs::create_directories(out);

  if (!a.skip_warmup && !resume) {
    if (!model->encoder_pretrained) {
      std::ofstream log(out / "encoder_warmup.log.jsonl");
      std::fprintf(stderr, "warming up the video encoder (%d steps)\n", model->config.pretrain.encoder_optim.steps);
      pretrain_encoder(*model, [&](const StepRecord& r) { append_log(log, r); });
    }
    if (!model->lm_pretrained) {
      std::ofstream log(out / "lm_warmup.log.jsonl");
      std::fprintf(stderr, "warming up the language model (%d steps)\n", model->config.pretrain.optim.steps);
      pretrain_lm(*model, [&](const StepRecord& r) { append_log(log, r); });
    }
  }

  const Split split = a.stage == 1 ? Split::Stage1 : Split::Stage2;
  const Dataset dataset = load_split(a.data, split, model->tokenizer);
  const std::vector<Example> examples = examples_from_dataset(*model, dataset, a.data);

  TrainOptions opt;
  opt.stage = a.stage;
  opt.optim = a.stage == 1 ? model->config.stage1 : model->config.stage2;
  opt.allow_stage_override = a.allow_stage_override;
  std::ofstream log(out / ("stage" + std::to_string(a.stage) + ".log.jsonl"),
                    resume ? std::ios::app : std::ios::trunc);
  opt.on_step = [&](const StepRecord& r) { append_log(log, r); };
  opt.on_checkpoint = [&](const TrainState& s) {
    const fs::path p = out / ("stage" + std::to_string(a.stage) + "-step" + std::to_string(s.step) + ".fckp");
    save_checkpoint(p.string(), *model, &s);
  };
  const TrainState state = train_stage(*model, examples, opt, std::move(resume));
  save_checkpoint(final_path.string(), *model, &state);
  std::printf("stage %d finished: %lld steps, final loss %.6f, checkpoint %s\n", a.stage,
              static_cast<long long>(state.step), state.losses.empty() ? 0.0 : state.losses.back(),
              final_path.c_str());
  return kExitOk;
}

// generate ----------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint;
  std::string video;
  std::string masks;
  std::string task = "caption";
  GenerationFlags gen;
};

int run_generate(const GenerateArgs& a) {
  if (!fs::exists(a.checkpoint)) throw ContractError("checkpoint not found: " + a.checkpoint);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Video video = load_video(a.video);
  fs::path mask_path = a.masks;
  if (mask_path.empty()) {
    mask_path = fs::path(a.video).replace_extension(".fmsk");
    if (!fs::exists(mask_path)) mask_path.clear();
  }
  const std::vector<ObjectMask> masks = mask_path.empty() ? std::vector<ObjectMask>{} : load_masks(mask_path);
  std::cout << infer(*ck.model, video, masks, parse_task(a.task), a.gen.resolve()) << '\n';
  return kExitOk;
}

// eval --------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "eval";
  std::string out;
  GenerationFlags gen;
};

int run_eval_cmd(const EvalArgs& a) {
  const EvalReport report = run_eval(a.checkpoint, a.data, parse_split(a.split), a.gen.resolve(), a.out);
  std::cout << summary_text(report) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fusecore: video event reasoning with a query-based fusion core"};
  app.require_subcommand(1);

  MakeDataArgs make_data;
  auto* cmd_make = app.add_subcommand("make-data", "render the synthetic corpus and write the dataset splits");
  make_data.cfg.add_to(cmd_make);
  cmd_make->add_option("--out", make_data.out, "output directory")->required();

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "run one training stage");
  train.cfg.add_to(cmd_train);
  cmd_train->add_option("--data", train.data, "dataset directory written by make-data")->required();
  cmd_train->add_option("--out", train.out, "run directory for checkpoints and logs")->required();
  cmd_train->add_option("--stage", train.stage, "1 (alignment) or 2 (instruction tuning)")
      ->check(CLI::IsMember({1, 2}));
  auto* init = cmd_train->add_option("--init", train.init, "start from this checkpoint (e.g. the stage-1 result)");
  cmd_train->add_option("--resume", train.resume, "continue an interrupted run from this checkpoint")
      ->excludes(init);
  cmd_train->add_flag("--allow-stage-override", train.allow_stage_override,
                      "run stage 2 on a model that has not completed stage 1");
  cmd_train->add_flag("--skip-warmup", train.skip_warmup, "do not warm up the encoder and language model of a fresh model");
  cmd_train->add_flag("--force", train.force, "overwrite an existing final checkpoint");

  GenerateArgs gen;
  auto* cmd_gen = app.add_subcommand("generate", "describe, explain or predict for one video");
  cmd_gen->add_option("--checkpoint", gen.checkpoint, "trained checkpoint")->required();
  cmd_gen->add_option("--video", gen.video, "FVID video file")->required()->check(CLI::ExistingFile);
  cmd_gen->add_option("--masks", gen.masks, "FMSK keyframe masks (default: next to the video)")
      ->check(CLI::ExistingFile);
  cmd_gen->add_option("--task", gen.task, "caption, reasoning or prediction")
      ->check(CLI::IsMember({"caption", "reasoning", "prediction"}));
  gen.gen.add_to(cmd_gen);

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  cmd_eval->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
  cmd_eval->add_option("--data", ev.data, "dataset directory")->required();
  cmd_eval->add_option("--split", ev.split, "stage1, stage2, val or eval")
      ->check(CLI::IsMember({"stage1", "stage2", "val", "eval"}));
  cmd_eval->add_option("--out", ev.out, "report file (one JSON line per sample plus a summary)")->required();
  ev.gen.add_to(cmd_eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cmd_make->parsed()) return run_make_data(make_data);
    if (cmd_train->parsed()) return run_train(train);
    if (cmd_gen->parsed()) return run_generate(gen);
    if (cmd_eval->parsed()) return run_eval_cmd(ev);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "fusecore: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fusecore: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
