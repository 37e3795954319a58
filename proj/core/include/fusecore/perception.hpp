#pragma once

#include <cstddef>
#include <vector>

#include "fusecore/config.hpp"
#include "fusecore/nn.hpp"
#include "fusecore/tensor.hpp"
#include "fusecore/video.hpp"

namespace fusecore {

struct ClipPlan {
  std::size_t clip_count = 4;       // N_t
  std::size_t frames_per_clip = 4;  // F
  std::size_t patch_size = 8;       // P

  // Frame indices sampled for clip `c` of a video with `frame_count` frames.
  // Segment c spans [floor(c*T/N_t), floor((c+1)*T/N_t)); within it, sample i
  // sits at floor((2i+1)*len / 2F), the midpoint of its sub-interval.
  std::vector<std::size_t> clip_frames(std::size_t frame_count, std::size_t c) const;
  // Middle sample (position F/2) of each clip.
  std::vector<std::size_t> keyframe_indices(std::size_t frame_count) const;
  std::size_t keyframe_position() const { return frames_per_clip / 2; }
  void check(std::size_t frame_count) const;

  static ClipPlan from(const PerceptionConfig& config);
};

struct Clip {
  Tensor frames;                      // [F x H x W x C]
  std::vector<std::size_t> frame_indices;  // absolute positions in the video
};

// Throws ContractError when the video has fewer than N_t * F frames.
std::vector<Clip> split_clips(const Video& video, const ClipPlan& plan);

struct VisionTokens {
  Tensor global;    // [N_t x D_v]
  Tensor objects;   // [N_o x D_v], undefined when N_o = 0
  Tensor combined;  // [(N_t + N_o) x D_v]

  std::size_t object_count() const { return objects.defined() ? objects.rows() : 0; }
};

VisionTokens build_vision_tokens(const Tensor& global, const Tensor& objects);

// Patches whose center pixel lies in the mask; when there is none, the single
// patch with the largest pixel overlap (lowest index on ties). The grid covers
// floor(H/P) x floor(W/P) patches in row-major order. Throws ContractError on
// an empty mask.
std::vector<std::size_t> mask_patches(const ObjectMask& mask, std::size_t patch_size, std::size_t grid_h,
                                      std::size_t grid_w);
// Mean of the member rows of `patch_states` [grid_h*grid_w x D_v] as a 1 x D_v row.
Tensor pool_object(const Tensor& patch_states, const ObjectMask& mask, std::size_t patch_size, std::size_t grid_h,
                   std::size_t grid_w);

struct ClipEncoding {
  Tensor cls;      // 1 x D_v
  Tensor patches;  // [F * n_patches x D_v], frame-major
};

// Spatiotemporal ViT: P x P patch embedding, learned spatial and temporal
// position embeddings, a prepended [CLS] token, pre-norm blocks with full
// attention over every patch of every frame, then a final LayerNorm.
class VisionEncoder {
 public:
  static VisionEncoder create(ParameterStore& store, const PerceptionConfig& config, Rng& rng);

  ClipEncoding encode(const Clip& clip) const;
  // [CLS] state only (Eq. 1).
  Tensor encode_clip(const Clip& clip) const { return encode(clip).cls; }

  std::size_t dim() const { return static_cast<std::size_t>(config_.dim); }
  std::size_t grid_h() const { return static_cast<std::size_t>(config_.height / config_.patch_size); }
  std::size_t grid_w() const { return static_cast<std::size_t>(config_.width / config_.patch_size); }
  const PerceptionConfig& config() const { return config_; }

  Linear patch_embed;
  Tensor spatial_pos;   // [n_patches x D_v]
  Tensor temporal_pos;  // [max_frames x D_v]
  Tensor cls_token;     // [1 x D_v]
  std::vector<TransformerBlock> blocks;
  LayerNorm final_norm;

 private:
  PerceptionConfig config_;
};

// Full perception pass: global tokens from every clip, then one object token
// per mask. Masks must sit on keyframes; they are pooled from that clip's
// patch states at the keyframe. Object rows follow clip order, then mask order.
VisionTokens perceive(const VisionEncoder& encoder, const Video& video, const std::vector<ObjectMask>& masks,
                      const ClipPlan& plan);

}  // namespace fusecore
