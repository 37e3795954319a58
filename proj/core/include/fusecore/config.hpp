#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fusecore/microworld.hpp"

namespace fusecore {

struct PerceptionConfig {
  int frames = 16;
  int height = 32;
  int width = 32;
  int channels = 3;
  int patch_size = 8;
  int clips = 4;
  int frames_per_clip = 4;
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int max_frames = 64;
  double position_init_std = 0.5;
};

struct FusionConfig {
  int queries = 8;
  int query_dim = 64;
  int model_dim = 64;
  int layers = 2;
  int heads = 4;
  int ffn_multiplier = 4;
};

struct LmConfig {
  int dim = 128;
  int layers = 2;
  int heads = 4;
  int max_length = 256;
  int ffn_multiplier = 4;
};

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
  std::vector<std::string> targets{"w_q", "w_k", "w_v", "w_o", "ffn_in", "ffn_out"};
  bool full_unfreeze = false;
};

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int warmup_steps = 0;
  int steps = 100;
  int epochs = 0;  // when > 0, steps = ceil(epochs * samples / batch_size)
  int batch_size = 8;
  double grad_clip = 1.0;  // 0 disables clipping
  int checkpoint_every = 0;
};

// Warm-ups that stand in for pretrained components: text-only training of
// the decoder (optim) and supervised object-attribute training of the video
// encoder (encoder_optim), both on worlds from the pretrain seed range.
struct PretrainConfig {
  OptimConfig optim;
  int corpus_size = 2000;
  std::uint64_t seed_start = 1000000;
  double sketch_noise = 0.1;
  OptimConfig encoder_optim;
};

struct SeedRange {
  std::uint64_t start = 0;
  std::uint64_t count = 0;

  bool overlaps(const SeedRange& o) const {
    return count > 0 && o.count > 0 && start < o.start + o.count && o.start < start + count;
  }
};

struct DataConfig {
  SeedRange train{0, 64};
  SeedRange val{50000, 16};
  SeedRange test{100000, 100};
  WorldConfig world;
};

struct Config {
  std::string preset = "toy";
  std::uint64_t seed = 7;
  PerceptionConfig perception;
  FusionConfig fusion;
  LmConfig lm;
  LoraConfig lora;
  PretrainConfig pretrain;
  OptimConfig stage1;
  OptimConfig stage2;
  DataConfig data;
};

// Built-in presets "toy" and "paper".
Config preset_config(std::string_view name);
// Parses a JSON document. It may name a "preset" to start from; every other
// key overrides that preset. Unknown keys and wrongly typed values throw
// ConfigError.
Config parse_config(std::string_view json_text);
Config load_config(const std::filesystem::path& path);
// "stage1.lr=3e-4" style override; the value is parsed as JSON, falling back
// to a plain string.
Config apply_override(const Config& config, std::string_view assignment);
// Applies every assignment in order and validates only the final result, so
// values that must change together can be set together.
Config apply_overrides(const Config& config, const std::vector<std::string>& assignments);
std::string to_json(const Config& config);
void validate(const Config& config);

}  // namespace fusecore
