#pragma once

#include <memory>
#include <vector>

#include "fusecore/config.hpp"
#include "fusecore/fusion.hpp"
#include "fusecore/lm.hpp"
#include "fusecore/perception.hpp"
#include "fusecore/tokenizer.hpp"

namespace fusecore {

// Encoder + fusion core + language model sharing one parameter store.
// Components hold handles into the store, so a Model is pinned in memory.
class Model {
 public:
  // Fresh parameters drawn from config.seed.
  static std::unique_ptr<Model> create(const Config& config);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Z_vision for one video; runs without recording gradients.
  VisionTokens perceive(const Video& video, const std::vector<ObjectMask>& masks) const;
  // E_vision for one Z_vision.
  Tensor fuse(const Tensor& z_vision) const { return fusion.fuse(z_vision); }

  Config config;
  Tokenizer tokenizer;
  ClipPlan plan;
  ParameterStore store;
  VisionEncoder encoder;
  FusionCore fusion;
  DecoderLM lm;
  // 0 = fresh, 1 or 2 = last training stage completed.
  int completed_stage = 0;
  bool lm_pretrained = false;
  bool encoder_pretrained = false;

 private:
  explicit Model(const Config& config);
};

}  // namespace fusecore
