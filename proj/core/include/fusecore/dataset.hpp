#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fusecore/config.hpp"
#include "fusecore/microworld.hpp"
#include "fusecore/perception.hpp"
#include "fusecore/tokenizer.hpp"

namespace fusecore {

// Everything derived from one world seed.
struct Sample {
  std::uint64_t seed = 0;
  Trajectory trajectory;
  Video video;
  std::vector<ObjectMask> masks;  // keyframes only, clip order
  Narration narration;
  MultipleChoice mcq;

  const std::string& response(Task task) const;
};

Sample make_sample(std::uint64_t seed, const Config& config);

// Task assigned to a seed in the instruction splits.
inline Task task_for_seed(std::uint64_t seed) { return static_cast<Task>(seed % 3); }

enum class Split { Stage1, Stage2, Val, Eval };
std::string_view to_string(Split split);
Split parse_split(std::string_view name);  // throws ConfigError
std::string split_file_name(Split split);  // "stage1.jsonl", ...

struct Record {
  std::uint64_t seed = 0;
  std::string video_path;  // relative to the dataset directory
  std::string mask_path;
  Task task = Task::Caption;
  std::string caption;
  std::string instruction;
  std::string response;
  std::optional<MultipleChoice> mcq;
};

struct DatasetHeader {
  Split split = Split::Stage1;
  std::size_t count = 0;
  std::uint64_t vocab_fingerprint = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Record> records;
};

// One JSON object per line: a header line, then one line per record.
std::string encode_split(const DatasetHeader& header, const std::vector<Record>& records);
Dataset decode_split(const std::string& text, const std::string& origin = "<memory>");

// Writes stage1/stage2/val/eval .jsonl files plus videos/<seed>.fvid and
// videos/<seed>.fmsk under `dir`. The config is validated before anything is
// written (overlapping seed ranges throw ConfigError). Output is a pure
// function of the config.
void emit_dataset(const Config& config, const std::filesystem::path& dir);

// Reads one split and checks its vocabulary fingerprint against `tokenizer`.
Dataset load_split(const std::filesystem::path& dir, Split split, const Tokenizer& tokenizer);

}  // namespace fusecore
