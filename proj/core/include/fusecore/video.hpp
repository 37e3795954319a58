#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fusecore/tensor.hpp"

namespace fusecore {

// Frames [T x H x W x C] with values in [0, 1].
class Video {
 public:
  explicit Video(Tensor frames);

  const Tensor& frames() const { return frames_; }
  std::size_t frame_count() const { return frames_.dim(0); }
  std::size_t height() const { return frames_.dim(1); }
  std::size_t width() const { return frames_.dim(2); }
  std::size_t channels() const { return frames_.dim(3); }
  double pixel(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const;

 private:
  Tensor frames_;
};

// Boolean pixel grid marking one object in one frame.
struct ObjectMask {
  int frame_index = 0;
  int object_id = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 0 or 1

  bool at(std::size_t y, std::size_t x) const { return pixels[y * width + x] != 0; }
  std::size_t count() const;
};

// Writes `bytes` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// FVID: "FVID", u32 T, H, W, C, then T*H*W*C little-endian f64 values.
std::string encode_video(const Video& video);
Video decode_video(const std::string& bytes, const std::string& origin = "<memory>");
void save_video(const std::filesystem::path& path, const Video& video);
Video load_video(const std::filesystem::path& path);

// FMSK: "FMSK", u32 version (1), u32 count, u32 H, u32 W, then per mask
// u32 frame_index, u32 object_id, H*W bytes of 0/1.
std::string encode_masks(const std::vector<ObjectMask>& masks, std::size_t height, std::size_t width);
std::vector<ObjectMask> decode_masks(const std::string& bytes, const std::string& origin = "<memory>");
void save_masks(const std::filesystem::path& path, const std::vector<ObjectMask>& masks, std::size_t height,
                std::size_t width);
std::vector<ObjectMask> load_masks(const std::filesystem::path& path);

}  // namespace fusecore
