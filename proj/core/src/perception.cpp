#include "fusecore/perception.hpp"

#include <algorithm>
#include <numeric>

#include "fusecore/error.hpp"
#include "fusecore/ops.hpp"

namespace fusecore {

ClipPlan ClipPlan::from(const PerceptionConfig& config) {
  return {static_cast<std::size_t>(config.clips), static_cast<std::size_t>(config.frames_per_clip),
          static_cast<std::size_t>(config.patch_size)};
}

void ClipPlan::check(std::size_t frame_count) const {
  if (clip_count == 0 || frames_per_clip == 0) throw ContractError("clip plan needs N_t >= 1 and F >= 1");
  if (frame_count < clip_count * frames_per_clip) {
    throw ContractError("insufficient frames: " + std::to_string(frame_count) + " < N_t*F = " +
                        std::to_string(clip_count * frames_per_clip));
  }
}

std::vector<std::size_t> ClipPlan::clip_frames(std::size_t frame_count, std::size_t c) const {
  check(frame_count);
  const std::size_t begin = c * frame_count / clip_count;
  const std::size_t end = (c + 1) * frame_count / clip_count;
  const std::size_t len = end - begin;
  std::vector<std::size_t> idx(frames_per_clip);
  for (std::size_t i = 0; i < frames_per_clip; ++i) idx[i] = begin + (2 * i + 1) * len / (2 * frames_per_clip);
  return idx;
}

std::vector<std::size_t> ClipPlan::keyframe_indices(std::size_t frame_count) const {
  std::vector<std::size_t> keys;
  for (std::size_t c = 0; c < clip_count; ++c) keys.push_back(clip_frames(frame_count, c)[keyframe_position()]);
  return keys;
}

std::vector<Clip> split_clips(const Video& video, const ClipPlan& plan) {
  const std::size_t t_count = video.frame_count();
  plan.check(t_count);
  const std::size_t frame_size = video.height() * video.width() * video.channels();
  const auto src = video.frames().data();
  std::vector<Clip> clips;
  for (std::size_t c = 0; c < plan.clip_count; ++c) {
    Clip clip;
    clip.frame_indices = plan.clip_frames(t_count, c);
    std::vector<double> data;
    data.reserve(plan.frames_per_clip * frame_size);
    for (std::size_t f : clip.frame_indices) {
      data.insert(data.end(), src.begin() + static_cast<std::ptrdiff_t>(f * frame_size),
                  src.begin() + static_cast<std::ptrdiff_t>((f + 1) * frame_size));
    }
    clip.frames = Tensor::from({plan.frames_per_clip, video.height(), video.width(), video.channels()}, std::move(data));
    clips.push_back(std::move(clip));
  }
  return clips;
}

VisionTokens build_vision_tokens(const Tensor& global, const Tensor& objects) {
  if (!global.defined() || global.rank() != 2) throw DimensionError("global tokens must be a matrix");
  VisionTokens vt;
  vt.global = global;
  if (!objects.defined() || objects.size() == 0) {
    vt.combined = global;
    return vt;
  }
  if (objects.rank() != 2 || objects.cols() != global.cols()) {
    throw DimensionError("object tokens " + shape_str(objects.shape()) + " do not match global tokens " +
                         shape_str(global.shape()));
  }
  vt.objects = objects;
  vt.combined = concat_rows({global, objects});
  return vt;
}

std::vector<std::size_t> mask_patches(const ObjectMask& mask, std::size_t patch_size, std::size_t grid_h,
                                      std::size_t grid_w) {
  if (mask.pixels.size() != mask.height * mask.width) throw DimensionError("mask pixel count does not match its size");
  if (mask.count() == 0) throw ContractError("object mask for object " + std::to_string(mask.object_id) + " is empty");
  if (grid_h * patch_size > mask.height || grid_w * patch_size > mask.width) {
    throw DimensionError("mask is smaller than the patch grid");
  }
  std::vector<std::size_t> members;
  const std::size_t half = patch_size / 2;
  for (std::size_t r = 0; r < grid_h; ++r) {
    for (std::size_t c = 0; c < grid_w; ++c) {
      if (mask.at(r * patch_size + half, c * patch_size + half)) members.push_back(r * grid_w + c);
    }
  }
  if (!members.empty()) return members;

  std::size_t best = 0;
  std::size_t best_overlap = 0;
  for (std::size_t r = 0; r < grid_h; ++r) {
    for (std::size_t c = 0; c < grid_w; ++c) {
      std::size_t overlap = 0;
      for (std::size_t y = r * patch_size; y < (r + 1) * patch_size; ++y) {
        for (std::size_t x = c * patch_size; x < (c + 1) * patch_size; ++x) overlap += mask.at(y, x) ? 1 : 0;
      }
      if (overlap > best_overlap) {
        best_overlap = overlap;
        best = r * grid_w + c;
      }
    }
  }
  if (best_overlap == 0) throw ContractError("object mask lies entirely outside the patch grid");
  return {best};
}

Tensor pool_object(const Tensor& patch_states, const ObjectMask& mask, std::size_t patch_size, std::size_t grid_h,
                   std::size_t grid_w) {
  if (patch_states.rows() != grid_h * grid_w) throw DimensionError("patch states do not match the patch grid");
  const std::vector<std::size_t> rows = mask_patches(mask, patch_size, grid_h, grid_w);
  return mean_rows(patch_states, rows);
}

VisionEncoder VisionEncoder::create(ParameterStore& store, const PerceptionConfig& config, Rng& rng) {
  VisionEncoder enc;
  enc.config_ = config;
  const auto d = static_cast<std::size_t>(config.dim);
  const auto p = static_cast<std::size_t>(config.patch_size);
  const auto patch_len = p * p * static_cast<std::size_t>(config.channels);
  const std::size_t n_patches = enc.grid_h() * enc.grid_w();
  enc.patch_embed = Linear::create(store, "encoder.patch_embed", patch_len, d, rng);
  enc.spatial_pos = store.normal("encoder.spatial_pos", {n_patches, d}, config.position_init_std, rng);
  enc.temporal_pos = store.normal("encoder.temporal_pos", {static_cast<std::size_t>(config.max_frames), d},
                                  config.position_init_std, rng);
  enc.cls_token = store.normal("encoder.cls", {1, d}, config.position_init_std, rng);
  for (int l = 0; l < config.layers; ++l) {
    enc.blocks.push_back(TransformerBlock::create(store, "encoder.block" + std::to_string(l), d,
                                                  static_cast<std::size_t>(config.heads), 4 * d, rng));
  }
  enc.final_norm = LayerNorm::create(store, "encoder.norm_out", d);
  return enc;
}

ClipEncoding VisionEncoder::encode(const Clip& clip) const {
  const Tensor& frames = clip.frames;
  if (frames.rank() != 4) throw DimensionError("clip must be [F x H x W x C], got " + shape_str(frames.shape()));
  const std::size_t f_count = frames.dim(0);
  const std::size_t h = frames.dim(1);
  const std::size_t w = frames.dim(2);
  const std::size_t c = frames.dim(3);
  const auto p = static_cast<std::size_t>(config_.patch_size);
  if (c != static_cast<std::size_t>(config_.channels)) throw DimensionError("clip channel count differs from encoder");
  if (h / p != grid_h() || w / p != grid_w()) {
    throw DimensionError("clip of " + std::to_string(h) + "x" + std::to_string(w) + " pixels does not give a " +
                         std::to_string(grid_h()) + "x" + std::to_string(grid_w()) + " patch grid");
  }
  if (clip.frame_indices.size() != f_count) throw DimensionError("clip frame index list does not match its frames");
  for (std::size_t idx : clip.frame_indices) {
    if (idx >= static_cast<std::size_t>(config_.max_frames)) {
      throw DimensionError("frame index " + std::to_string(idx) + " exceeds the temporal embedding table");
    }
  }

  // Patchify: row (f, r, col) holds the P*P*C pixels of that patch, row-major
  // within the patch. Pixels beyond the grid are never read.
  const std::size_t n_patches = grid_h() * grid_w();
  const std::size_t patch_len = p * p * c;
  const auto src = frames.data();
  std::vector<double> patches(f_count * n_patches * patch_len);
  std::size_t k = 0;
  for (std::size_t f = 0; f < f_count; ++f) {
    for (std::size_t r = 0; r < grid_h(); ++r) {
      for (std::size_t col = 0; col < grid_w(); ++col) {
        for (std::size_t y = r * p; y < (r + 1) * p; ++y) {
          const double* row = &src[((f * h + y) * w + col * p) * c];
          std::copy(row, row + p * c, &patches[k]);
          k += p * c;
        }
      }
    }
  }
  const Tensor patch_tensor = Tensor::from({f_count * n_patches, patch_len}, std::move(patches));

  std::vector<int> spatial_ids;
  std::vector<int> temporal_ids;
  for (std::size_t f = 0; f < f_count; ++f) {
    for (std::size_t i = 0; i < n_patches; ++i) {
      spatial_ids.push_back(static_cast<int>(i));
      temporal_ids.push_back(static_cast<int>(clip.frame_indices[f]));
    }
  }
  Tensor tokens = patch_embed.forward(patch_tensor);
  tokens = add(tokens, gather_rows(spatial_pos, spatial_ids));
  tokens = add(tokens, gather_rows(temporal_pos, temporal_ids));
  Tensor x = concat_rows({cls_token, tokens});
  for (const auto& block : blocks) x = block.forward(x, false);
  x = final_norm.forward(x);
  return {slice_rows(x, 0, 1), slice_rows(x, 1, f_count * n_patches)};
}

VisionTokens perceive(const VisionEncoder& encoder, const Video& video, const std::vector<ObjectMask>& masks,
                      const ClipPlan& plan) {
  const std::vector<Clip> clips = split_clips(video, plan);
  const std::vector<std::size_t> keys = plan.keyframe_indices(video.frame_count());
  const std::size_t n_patches = encoder.grid_h() * encoder.grid_w();
  for (const auto& m : masks) {
    if (std::find(keys.begin(), keys.end(), static_cast<std::size_t>(m.frame_index)) == keys.end()) {
      throw ContractError("mask for object " + std::to_string(m.object_id) + " is on frame " +
                          std::to_string(m.frame_index) + ", which is not a keyframe");
    }
  }
  std::vector<Tensor> globals;
  std::vector<Tensor> objects;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const ClipEncoding enc = encoder.encode(clips[c]);
    globals.push_back(enc.cls);
    const Tensor key_patches = slice_rows(enc.patches, plan.keyframe_position() * n_patches, n_patches);
    for (const auto& m : masks) {
      if (static_cast<std::size_t>(m.frame_index) != keys[c]) continue;
      objects.push_back(pool_object(key_patches, m, plan.patch_size, encoder.grid_h(), encoder.grid_w()));
    }
  }
  return build_vision_tokens(concat_rows(globals), objects.empty() ? Tensor() : concat_rows(objects));
}

}  // namespace fusecore
