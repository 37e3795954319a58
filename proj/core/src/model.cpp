#include "fusecore/model.hpp"

namespace fusecore {

Model::Model(const Config& cfg) : config(cfg), tokenizer(Tokenizer::standard()), plan(ClipPlan::from(cfg.perception)) {}

std::unique_ptr<Model> Model::create(const Config& config) {
  validate(config);
  std::unique_ptr<Model> m(new Model(config));
  Rng rng(config.seed);
  m->encoder = VisionEncoder::create(m->store, config.perception, rng);
  m->fusion = FusionCore::create(m->store, config.fusion, static_cast<std::size_t>(config.perception.dim),
                                 static_cast<std::size_t>(config.lm.dim), rng);
  m->lm = DecoderLM::create(m->store, config.lm, m->tokenizer.size(), rng);
  return m;
}

VisionTokens Model::perceive(const Video& video, const std::vector<ObjectMask>& masks) const {
  NoGradGuard no_grad;
  return fusecore::perceive(encoder, video, masks, plan);
}

}  // namespace fusecore
