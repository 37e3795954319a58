#include "fusecore/video.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fusecore/binary_io.hpp"
#include "fusecore/error.hpp"

namespace fusecore {

namespace {
constexpr std::string_view kVideoMagic = "FVID";
constexpr std::string_view kMaskMagic = "FMSK";
constexpr std::uint32_t kMaskVersion = 1;
}  // namespace

Video::Video(Tensor frames) : frames_(std::move(frames)) {
  if (frames_.rank() != 4) throw DimensionError("video frames must be [T x H x W x C], got " + shape_str(frames_.shape()));
  const std::size_t c = channels();
  if (c != 1 && c != 3) throw DimensionError("video must have 1 or 3 channels, got " + std::to_string(c));
  for (double v : frames_.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("video pixel values must lie in [0, 1]");
  }
}

double Video::pixel(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
  return frames_.data()[((t * height() + y) * width() + x) * channels() + c];
}

std::size_t ObjectMask::count() const { return std::accumulate(pixels.begin(), pixels.end(), std::size_t{0}); }

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string encode_video(const Video& video) {
  std::ostringstream out(std::ios::binary);
  binary::write_bytes(out, kVideoMagic);
  for (std::size_t d : video.frames().shape()) binary::write(out, static_cast<std::uint32_t>(d));
  for (double v : video.frames().data()) binary::write_f64(out, v);
  return out.str();
}

Video decode_video(const std::string& bytes, const std::string& origin) {
  std::istringstream in(bytes, std::ios::binary);
  binary::expect_magic(in, kVideoMagic, origin);
  Shape shape(4);
  for (auto& d : shape) d = binary::read<std::uint32_t>(in, "video dims");
  const std::size_t n = shape_numel(shape);
  if (n == 0 || bytes.size() != 4 + 16 + n * 8) {
    throw FormatError(origin + ": payload size does not match dims " + shape_str(shape));
  }
  std::vector<double> data(n);
  for (auto& v : data) v = binary::read_f64(in, "video payload");
  return Video(Tensor::from(std::move(shape), std::move(data)));
}

void save_video(const std::filesystem::path& path, const Video& video) {
  write_file_atomic(path, encode_video(video));
}

Video load_video(const std::filesystem::path& path) { return decode_video(read_file(path), path.string()); }

std::string encode_masks(const std::vector<ObjectMask>& masks, std::size_t height, std::size_t width) {
  std::ostringstream out(std::ios::binary);
  binary::write_bytes(out, kMaskMagic);
  binary::write(out, kMaskVersion);
  binary::write(out, static_cast<std::uint32_t>(masks.size()));
  binary::write(out, static_cast<std::uint32_t>(height));
  binary::write(out, static_cast<std::uint32_t>(width));
  for (const auto& m : masks) {
    if (m.height != height || m.width != width) throw DimensionError("mask size differs from the file header");
    binary::write(out, static_cast<std::uint32_t>(m.frame_index));
    binary::write(out, static_cast<std::uint32_t>(m.object_id));
    for (std::uint8_t p : m.pixels) out.put(static_cast<char>(p ? 1 : 0));
  }
  return out.str();
}

std::vector<ObjectMask> decode_masks(const std::string& bytes, const std::string& origin) {
  std::istringstream in(bytes, std::ios::binary);
  binary::expect_magic(in, kMaskMagic, origin);
  const auto version = binary::read<std::uint32_t>(in, "mask version");
  if (version != kMaskVersion) throw FormatError(origin + ": unsupported mask format version " + std::to_string(version));
  const auto count = binary::read<std::uint32_t>(in, "mask count");
  const auto height = binary::read<std::uint32_t>(in, "mask height");
  const auto width = binary::read<std::uint32_t>(in, "mask width");
  std::vector<ObjectMask> masks;
  masks.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ObjectMask m;
    m.frame_index = static_cast<int>(binary::read<std::uint32_t>(in, "mask frame"));
    m.object_id = static_cast<int>(binary::read<std::uint32_t>(in, "mask object"));
    m.height = height;
    m.width = width;
    const std::string raw = binary::read_bytes(in, std::size_t{height} * width, "mask pixels");
    m.pixels.assign(raw.begin(), raw.end());
    masks.push_back(std::move(m));
  }
  return masks;
}

void save_masks(const std::filesystem::path& path, const std::vector<ObjectMask>& masks, std::size_t height,
                std::size_t width) {
  write_file_atomic(path, encode_masks(masks, height, width));
}

std::vector<ObjectMask> load_masks(const std::filesystem::path& path) {
  return decode_masks(read_file(path), path.string());
}

}  // namespace fusecore
