#include "fusecore/dataset.hpp"

#include <json.hpp>
#include <sstream>

#include "fusecore/error.hpp"

namespace fusecore {

namespace {

using json = nlohmann::json;

constexpr std::string_view kFormat = "fusecore-dataset";
constexpr int kFormatVersion = 1;

json mcq_to_json(const MultipleChoice& mc) {
  return {{"question", mc.question}, {"options", mc.options}, {"answer", mc.answer}};
}

MultipleChoice mcq_from_json(const json& j) {
  MultipleChoice mc;
  mc.question = j.at("question").get<std::string>();
  const auto options = j.at("options").get<std::vector<std::string>>();
  if (options.size() != 4) throw FormatError("multiple-choice item needs four options");
  std::copy(options.begin(), options.end(), mc.options.begin());
  mc.answer = j.at("answer").get<int>();
  if (mc.answer < 0 || mc.answer > 3) throw FormatError("multiple-choice answer index out of range");
  return mc;
}

std::vector<std::uint64_t> seeds_of(const SeedRange& range) {
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < range.count; ++i) seeds.push_back(range.start + i);
  return seeds;
}

Record record_for(const Sample& s, Task task, bool with_mcq) {
  Record r;
  r.seed = s.seed;
  r.video_path = "videos/" + std::to_string(s.seed) + ".fvid";
  r.mask_path = "videos/" + std::to_string(s.seed) + ".fmsk";
  r.task = task;
  r.caption = s.narration.caption;
  r.instruction = std::string(prompt_text(task));
  r.response = s.response(task);
  if (with_mcq) r.mcq = s.mcq;
  return r;
}

}  // namespace

const std::string& Sample::response(Task task) const {
  switch (task) {
    case Task::Caption: return narration.caption;
    case Task::Reasoning: return narration.explanation;
    case Task::Prediction: return narration.prediction;
  }
  throw ContractError("unknown task");
}

Sample make_sample(std::uint64_t seed, const Config& config) {
  Trajectory traj = simulate(seed, config.data.world);
  Video video = render(traj, config.perception.channels);
  const ClipPlan plan = ClipPlan::from(config.perception);
  std::vector<ObjectMask> masks;
  for (std::size_t k : plan.keyframe_indices(video.frame_count())) {
    auto m = synthetic_mask_oracle(traj.states[k], static_cast<int>(k));
    masks.insert(masks.end(), m.begin(), m.end());
  }
  Narration narration = narrate(traj);
  MultipleChoice mcq = make_mcq(traj, seed);
  return {seed, std::move(traj), std::move(video), std::move(masks), std::move(narration), std::move(mcq)};
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Stage1: return "stage1";
    case Split::Stage2: return "stage2";
    case Split::Val: return "val";
    case Split::Eval: return "eval";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::Stage1, Split::Stage2, Split::Val, Split::Eval}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown split '" + std::string(name) + "' (expected stage1, stage2, val or eval)");
}

std::string split_file_name(Split split) { return std::string(to_string(split)) + ".jsonl"; }

std::string encode_split(const DatasetHeader& header, const std::vector<Record>& records) {
  std::string out;
  const json head = {{"format", kFormat},
                     {"version", kFormatVersion},
                     {"split", to_string(header.split)},
                     {"count", records.size()},
                     {"vocab_fingerprint", header.vocab_fingerprint}};
  out += head.dump() + "\n";
  for (const Record& r : records) {
    json j = {{"seed", r.seed},
              {"video_path", r.video_path},
              {"mask_path", r.mask_path},
              {"task", to_string(r.task)},
              {"caption", r.caption},
              {"instruction", r.instruction},
              {"response", r.response},
              {"mcq", r.mcq ? mcq_to_json(*r.mcq) : json(nullptr)}};
    out += j.dump() + "\n";
  }
  return out;
}

Dataset decode_split(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  Dataset ds;
  try {
    if (!std::getline(in, line)) throw FormatError(origin + ": missing header line");
    const json head = json::parse(line);
    if (head.at("format").get<std::string>() != kFormat || head.at("version").get<int>() != kFormatVersion) {
      throw FormatError(origin + ": not a version-1 fusecore dataset file");
    }
    ds.header.split = parse_split(head.at("split").get<std::string>());
    ds.header.count = head.at("count").get<std::size_t>();
    ds.header.vocab_fingerprint = head.at("vocab_fingerprint").get<std::uint64_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      Record r;
      r.seed = j.at("seed").get<std::uint64_t>();
      r.video_path = j.at("video_path").get<std::string>();
      r.mask_path = j.at("mask_path").get<std::string>();
      r.task = parse_task(j.at("task").get<std::string>());
      r.caption = j.at("caption").get<std::string>();
      r.instruction = j.at("instruction").get<std::string>();
      r.response = j.at("response").get<std::string>();
      if (!j.at("mcq").is_null()) r.mcq = mcq_from_json(j.at("mcq"));
      ds.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(origin + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(origin + ": " + e.what());
  }
  if (ds.records.size() != ds.header.count) {
    throw FormatError(origin + ": header announces " + std::to_string(ds.header.count) + " records, found " +
                      std::to_string(ds.records.size()));
  }
  return ds;
}

void emit_dataset(const Config& config, const std::filesystem::path& dir) {
  validate(config);
  const std::uint64_t fingerprint = Tokenizer::standard().fingerprint();

  std::filesystem::create_directories(dir / "videos");
  std::vector<Record> stage1;
  std::vector<Record> stage2;
  std::vector<Record> val;
  std::vector<Record> eval;
  const auto emit_media = [&](const Sample& s) {
    save_video(dir / ("videos/" + std::to_string(s.seed) + ".fvid"), s.video);
    save_masks(dir / ("videos/" + std::to_string(s.seed) + ".fmsk"), s.masks, s.video.height(), s.video.width());
  };
  for (std::uint64_t seed : seeds_of(config.data.train)) {
    const Sample s = make_sample(seed, config);
    emit_media(s);
    stage1.push_back(record_for(s, Task::Caption, false));
    stage2.push_back(record_for(s, task_for_seed(seed), false));
  }
  for (std::uint64_t seed : seeds_of(config.data.val)) {
    const Sample s = make_sample(seed, config);
    emit_media(s);
    val.push_back(record_for(s, task_for_seed(seed), true));
  }
  for (std::uint64_t seed : seeds_of(config.data.test)) {
    const Sample s = make_sample(seed, config);
    emit_media(s);
    eval.push_back(record_for(s, task_for_seed(seed), true));
  }
  for (const auto& [split, records] : {std::pair{Split::Stage1, &stage1}, std::pair{Split::Stage2, &stage2},
                                       std::pair{Split::Val, &val}, std::pair{Split::Eval, &eval}}) {
    write_file_atomic(dir / split_file_name(split), encode_split({split, records->size(), fingerprint}, *records));
  }
}

Dataset load_split(const std::filesystem::path& dir, Split split, const Tokenizer& tokenizer) {
  const std::filesystem::path path = dir / split_file_name(split);
  if (!std::filesystem::exists(path)) throw ContractError("dataset split not found: " + path.string());
  Dataset ds = decode_split(read_file(path), path.string());
  if (ds.header.split != split) throw FormatError(path.string() + ": file holds a different split");
  if (ds.header.vocab_fingerprint != tokenizer.fingerprint()) {
    throw ContractError(path.string() + ": dataset vocabulary does not match the model tokenizer");
  }
  return ds;
}

}  // namespace fusecore
