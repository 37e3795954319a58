#include "fusecore/checkpoint.hpp"

#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "fusecore/binary_io.hpp"
#include "fusecore/error.hpp"
#include "fusecore/lora.hpp"
#include "fusecore/video.hpp"

namespace fusecore {

namespace {

constexpr std::string_view kMagic = "FCKP";
constexpr std::uint8_t kDtypeF64 = 1;

using json = nlohmann::json;

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  binary::write(out, static_cast<std::uint64_t>(v.size()));
  for (double x : v) binary::write_f64(out, x);
}

std::vector<double> read_doubles(std::istream& in, std::string_view what) {
  const auto n = binary::read<std::uint64_t>(in, what);
  if (n > (1ULL << 32)) throw FormatError("implausible length for " + std::string(what));
  std::vector<double> v(n);
  for (auto& x : v) x = binary::read_f64(in, what);
  return v;
}

std::string optimizer_blob(const AdamState& adam) {
  std::ostringstream out(std::ios::binary);
  binary::write(out, static_cast<std::int64_t>(adam.step));
  binary::write(out, static_cast<std::uint32_t>(adam.moments.size()));
  for (const auto& [name, mom] : adam.moments) {
    binary::write_string(out, name);
    write_doubles(out, mom.m);
    write_doubles(out, mom.v);
  }
  return out.str();
}

AdamState parse_optimizer(const std::string& blob) {
  std::istringstream in(blob, std::ios::binary);
  AdamState adam;
  adam.step = binary::read<std::int64_t>(in, "optimizer step");
  const auto count = binary::read<std::uint32_t>(in, "optimizer entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = binary::read_string(in, "optimizer entry name");
    Moments mom;
    mom.m = read_doubles(in, "first moment");
    mom.v = read_doubles(in, "second moment");
    if (mom.m.size() != mom.v.size()) throw FormatError("optimizer moments for " + name + " differ in length");
    adam.moments.emplace(std::move(name), std::move(mom));
  }
  return adam;
}

std::string schedule_blob(const TrainState& s) {
  std::ostringstream out(std::ios::binary);
  binary::write(out, static_cast<std::uint32_t>(s.stage));
  binary::write(out, static_cast<std::int64_t>(s.step));
  binary::write(out, static_cast<std::int64_t>(s.total_steps));
  return out.str();
}

std::string rng_blob(const TrainState& s) {
  std::ostringstream out(std::ios::binary);
  binary::write(out, static_cast<std::uint64_t>(s.data_seed));
  return out.str();
}

std::string losses_blob(const TrainState& s) {
  std::ostringstream out(std::ios::binary);
  write_doubles(out, s.losses);
  return out.str();
}

}  // namespace

std::string encode_checkpoint(const Model& model, const TrainState* train) {
  std::ostringstream out(std::ios::binary);
  binary::write_bytes(out, kMagic);
  binary::write(out, kCheckpointVersion);

  const auto& params = model.store.all();
  binary::write(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter& p : params) {
    binary::write_string(out, p.name);
    binary::write(out, kDtypeF64);
    binary::write(out, static_cast<std::uint8_t>(p.frozen ? 1 : 0));
    binary::write(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) binary::write(out, static_cast<std::uint32_t>(d));
    for (double x : p.value.data()) binary::write_f64(out, x);
  }

  const json meta = {{"completed_stage", model.completed_stage},
                     {"lm_pretrained", model.lm_pretrained},
                     {"encoder_pretrained", model.encoder_pretrained},
                     {"lora", has_lora(model.lm)},
                     {"vocab_fingerprint", model.tokenizer.fingerprint()},
                     {"vocab_size", model.tokenizer.size()}};
  std::vector<std::pair<std::string, std::string>> blobs = {{"config", to_json(model.config)},
                                                            {"meta", meta.dump()}};
  if (train != nullptr) {
    blobs.emplace_back("optimizer", optimizer_blob(train->adam));
    blobs.emplace_back("schedule", schedule_blob(*train));
    blobs.emplace_back("rng", rng_blob(*train));
    blobs.emplace_back("losses", losses_blob(*train));
  }
  binary::write(out, static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [tag, bytes] : blobs) {
    binary::write_string(out, tag);
    binary::write(out, static_cast<std::uint64_t>(bytes.size()));
    binary::write_bytes(out, bytes);
  }
  return out.str();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  std::istringstream in(bytes, std::ios::binary);
  binary::expect_magic(in, kMagic, origin);
  const auto version = binary::read<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }

  struct Entry {
    bool frozen = false;
    Shape shape;
    std::vector<double> data;
  };
  std::vector<std::pair<std::string, Entry>> entries;
  const auto count = binary::read<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = binary::read_string(in, "tensor name");
    const auto dtype = binary::read<std::uint8_t>(in, "dtype");
    if (dtype != kDtypeF64) throw FormatError(origin + ": tensor " + name + " has unknown dtype");
    Entry e;
    e.frozen = binary::read<std::uint8_t>(in, "frozen flag") != 0;
    const auto rank = binary::read<std::uint32_t>(in, "rank");
    if (rank > 8) throw FormatError(origin + ": tensor " + name + " has implausible rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(binary::read<std::uint32_t>(in, "dimension"));
      n *= e.shape.back();
    }
    if (n > (1ULL << 32)) throw FormatError(origin + ": tensor " + name + " is implausibly large");
    e.data.resize(n);
    for (auto& x : e.data) x = binary::read_f64(in, "tensor data");
    entries.emplace_back(std::move(name), std::move(e));
  }

  std::map<std::string, std::string> blobs;
  const auto blob_count = binary::read<std::uint32_t>(in, "blob count");
  for (std::uint32_t i = 0; i < blob_count; ++i) {
    std::string tag = binary::read_string(in, "blob tag");
    const auto len = binary::read<std::uint64_t>(in, "blob length");
    if (len > bytes.size()) throw FormatError(origin + ": blob " + tag + " overruns the file");
    blobs[tag] = binary::read_bytes(in, len, "blob " + tag);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(origin + ": trailing bytes after checkpoint");
  if (!blobs.contains("config") || !blobs.contains("meta")) {
    throw FormatError(origin + ": checkpoint lacks its config or meta blob");
  }

  Config config;
  std::uint64_t fingerprint = 0;
  int completed_stage = 0;
  bool lm_pretrained = false;
  bool encoder_pretrained = false;
  try {
    config = parse_config(blobs["config"]);
    const json meta = json::parse(blobs["meta"]);
    fingerprint = meta.at("vocab_fingerprint").get<std::uint64_t>();
    completed_stage = meta.at("completed_stage").get<int>();
    lm_pretrained = meta.at("lm_pretrained").get<bool>();
    encoder_pretrained = meta.at("encoder_pretrained").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(origin + ": unreadable metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(origin + ": stored config is invalid: " + e.what());
  }

  Checkpoint ck;
  ck.model = Model::create(config);
  Model& model = *ck.model;
  if (fingerprint != model.tokenizer.fingerprint()) {
    throw ContractError(origin + ": checkpoint was written with a different vocabulary");
  }

  std::vector<std::string> adapted;
  int lora_rank = 0;
  for (const auto& [name, e] : entries) {
    if (name.ends_with(".lora_a")) {
      adapted.push_back(name.substr(0, name.size() - 7));
      lora_rank = static_cast<int>(e.shape.at(0));
    }
  }
  if (!adapted.empty()) {
    Rng rng(0);
    apply_lora(model.store, model.lm, adapted, lora_rank, config.lora.alpha, rng);
  }

  std::set<std::string> seen;
  for (auto& [name, e] : entries) {
    if (!model.store.contains(name)) throw ContractError(origin + ": unknown tensor " + name);
    if (!seen.insert(name).second) throw FormatError(origin + ": duplicate tensor " + name);
    Parameter& p = model.store.get(name);
    if (p.value.shape() != e.shape) {
      throw ContractError(origin + ": tensor " + name + " has shape " + shape_str(e.shape) + ", model expects " +
                          shape_str(p.value.shape()));
    }
    std::copy(e.data.begin(), e.data.end(), p.value.mutable_data().begin());
    p.frozen = e.frozen;
    p.value.set_requires_grad(!e.frozen);
  }
  if (seen.size() != model.store.size()) throw ContractError(origin + ": checkpoint is missing model tensors");
  model.completed_stage = completed_stage;
  model.lm_pretrained = lm_pretrained;
  model.encoder_pretrained = encoder_pretrained;

  if (blobs.contains("schedule")) {
    for (const char* tag : {"optimizer", "rng", "losses"}) {
      if (!blobs.contains(tag)) throw FormatError(origin + ": training state lacks its " + tag + " blob");
    }
    TrainState s;
    std::istringstream sched(blobs["schedule"], std::ios::binary);
    s.stage = static_cast<int>(binary::read<std::uint32_t>(sched, "stage"));
    s.step = binary::read<std::int64_t>(sched, "step");
    s.total_steps = binary::read<std::int64_t>(sched, "total steps");
    std::istringstream rng(blobs["rng"], std::ios::binary);
    s.data_seed = binary::read<std::uint64_t>(rng, "data seed");
    std::istringstream losses(blobs["losses"], std::ios::binary);
    s.losses = read_doubles(losses, "loss trace");
    s.adam = parse_optimizer(blobs["optimizer"]);
    ck.train = std::move(s);
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Model& model, const TrainState* train) {
  write_file_atomic(path, encode_checkpoint(model, train));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path), path); }

}  // namespace fusecore
