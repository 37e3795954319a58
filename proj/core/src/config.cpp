#include "fusecore/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fusecore/assets.hpp"
#include "fusecore/error.hpp"

namespace fusecore {

using nlohmann::json;

namespace {

json parse_json(std::string_view text, const std::string& origin) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

bool same_kind(const json& schema, const json& value) {
  if (schema.is_object()) return value.is_object();
  if (schema.is_array()) return value.is_array();
  if (schema.is_string()) return value.is_string();
  if (schema.is_boolean()) return value.is_boolean();
  if (schema.is_number_integer()) return value.is_number_integer();
  if (schema.is_number()) return value.is_number();
  return false;
}

// Overlays `patch` onto `target`; every key of `patch` must exist in `schema`
// with a compatible type.
void overlay(json& target, const json& patch, const json& schema, const std::string& path) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + key_path + "'");
    const json& s = schema.at(it.key());
    if (!same_kind(s, it.value())) {
      throw ConfigError("config key '" + key_path + "' expects a value of type " + std::string(s.type_name()));
    }
    if (s.is_object()) {
      overlay(target[it.key()], it.value(), s, key_path);
    } else {
      if (s.is_array() && !std::all_of(it.value().begin(), it.value().end(), [](const json& v) { return v.is_string(); })) {
        throw ConfigError("config key '" + key_path + "' expects a list of strings");
      }
      target[it.key()] = it.value();
    }
  }
}

const json& schema() {
  static const json s = parse_json(assets::kPresetToy, "toy preset");
  return s;
}

json preset_json(std::string_view name) {
  json base = schema();
  if (name == "toy") return base;
  if (name == "paper") {
    overlay(base, parse_json(assets::kPresetPaper, "paper preset"), schema(), "");
    return base;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected toy or paper)");
}

OptimConfig optim_from(const json& j) {
  OptimConfig o;
  o.lr = j.at("lr").get<double>();
  o.beta1 = j.at("beta1").get<double>();
  o.beta2 = j.at("beta2").get<double>();
  o.eps = j.at("eps").get<double>();
  o.weight_decay = j.at("weight_decay").get<double>();
  o.warmup_steps = j.at("warmup_steps").get<int>();
  o.steps = j.at("steps").get<int>();
  o.epochs = j.at("epochs").get<int>();
  o.batch_size = j.at("batch_size").get<int>();
  o.grad_clip = j.at("grad_clip").get<double>();
  o.checkpoint_every = j.at("checkpoint_every").get<int>();
  return o;
}

json optim_to(const OptimConfig& o) {
  return {{"lr", o.lr},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"weight_decay", o.weight_decay},
          {"warmup_steps", o.warmup_steps},
          {"steps", o.steps},
          {"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"grad_clip", o.grad_clip},
          {"checkpoint_every", o.checkpoint_every}};
}

SeedRange range_from(const json& j) { return {j.at("start").get<std::uint64_t>(), j.at("count").get<std::uint64_t>()}; }
json range_to(const SeedRange& r) { return {{"start", r.start}, {"count", r.count}}; }

Config from_json(const json& j) {
  Config c;
  c.preset = j.at("preset").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const json& p = j.at("perception");
  c.perception = {p.at("frames").get<int>(),     p.at("height").get<int>(),     p.at("width").get<int>(),
                  p.at("channels").get<int>(),   p.at("patch_size").get<int>(), p.at("clips").get<int>(),
                  p.at("frames_per_clip").get<int>(), p.at("dim").get<int>(), p.at("layers").get<int>(),
                  p.at("heads").get<int>(),      p.at("max_frames").get<int>(), p.at("position_init_std").get<double>()};
  const json& f = j.at("fusion");
  c.fusion = {f.at("queries").get<int>(), f.at("query_dim").get<int>(), f.at("model_dim").get<int>(),
              f.at("layers").get<int>(),  f.at("heads").get<int>(),     f.at("ffn_multiplier").get<int>()};
  const json& l = j.at("lm");
  c.lm = {l.at("dim").get<int>(), l.at("layers").get<int>(), l.at("heads").get<int>(), l.at("max_length").get<int>(),
          l.at("ffn_multiplier").get<int>()};
  const json& r = j.at("lora");
  c.lora.rank = r.at("rank").get<int>();
  c.lora.alpha = r.at("alpha").get<double>();
  c.lora.targets = r.at("targets").get<std::vector<std::string>>();
  c.lora.full_unfreeze = r.at("full_unfreeze").get<bool>();
  const json& pt = j.at("pretrain");
  c.pretrain.optim = optim_from(pt.at("optim"));
  c.pretrain.corpus_size = pt.at("corpus_size").get<int>();
  c.pretrain.seed_start = pt.at("seed_start").get<std::uint64_t>();
  c.pretrain.sketch_noise = pt.at("sketch_noise").get<double>();
  c.pretrain.encoder_optim = optim_from(pt.at("encoder_optim"));
  c.stage1 = optim_from(j.at("stage1"));
  c.stage2 = optim_from(j.at("stage2"));
  const json& d = j.at("data");
  c.data.train = range_from(d.at("train"));
  c.data.val = range_from(d.at("val"));
  c.data.test = range_from(d.at("test"));
  const json& w = d.at("world");
  c.data.world = {w.at("width").get<int>(),        w.at("height").get<int>(), w.at("min_entities").get<int>(),
                  w.at("max_entities").get<int>(), w.at("entity_size").get<int>(), w.at("frames").get<int>(),
                  w.at("move_probability").get<double>()};
  return c;
}

json to_json_value(const Config& c) {
  const auto& p = c.perception;
  const auto& f = c.fusion;
  const auto& l = c.lm;
  const auto& w = c.data.world;
  return {{"preset", c.preset},
          {"seed", c.seed},
          {"perception",
           {{"frames", p.frames}, {"height", p.height}, {"width", p.width}, {"channels", p.channels},
            {"patch_size", p.patch_size}, {"clips", p.clips}, {"frames_per_clip", p.frames_per_clip}, {"dim", p.dim},
            {"layers", p.layers}, {"heads", p.heads}, {"max_frames", p.max_frames},
            {"position_init_std", p.position_init_std}}},
          {"fusion",
           {{"queries", f.queries}, {"query_dim", f.query_dim}, {"model_dim", f.model_dim}, {"layers", f.layers},
            {"heads", f.heads}, {"ffn_multiplier", f.ffn_multiplier}}},
          {"lm",
           {{"dim", l.dim}, {"layers", l.layers}, {"heads", l.heads}, {"max_length", l.max_length},
            {"ffn_multiplier", l.ffn_multiplier}}},
          {"lora",
           {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"targets", c.lora.targets},
            {"full_unfreeze", c.lora.full_unfreeze}}},
          {"pretrain",
           {{"optim", optim_to(c.pretrain.optim)}, {"corpus_size", c.pretrain.corpus_size},
            {"seed_start", c.pretrain.seed_start}, {"sketch_noise", c.pretrain.sketch_noise},
            {"encoder_optim", optim_to(c.pretrain.encoder_optim)}}},
          {"stage1", optim_to(c.stage1)},
          {"stage2", optim_to(c.stage2)},
          {"data",
           {{"train", range_to(c.data.train)},
            {"val", range_to(c.data.val)},
            {"test", range_to(c.data.test)},
            {"world",
             {{"width", w.width}, {"height", w.height}, {"min_entities", w.min_entities},
              {"max_entities", w.max_entities}, {"entity_size", w.entity_size}, {"frames", w.frames},
              {"move_probability", w.move_probability}}}}}};
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void validate_optim(const OptimConfig& o, const std::string& name) {
  require(o.lr > 0.0, name + ".lr must be positive");
  require(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0, name + ".beta1/beta2 must lie in [0, 1)");
  require(o.eps > 0.0, name + ".eps must be positive");
  require(o.weight_decay >= 0.0, name + ".weight_decay must be non-negative");
  require(o.warmup_steps >= 0, name + ".warmup_steps must be non-negative");
  require(o.steps > 0 || o.epochs > 0, name + " needs steps > 0 or epochs > 0");
  require(o.steps >= 0 && o.epochs >= 0, name + ".steps/epochs must be non-negative");
  require(o.batch_size > 0, name + ".batch_size must be positive");
  require(o.grad_clip >= 0.0, name + ".grad_clip must be non-negative");
  require(o.checkpoint_every >= 0, name + ".checkpoint_every must be non-negative");
}

}  // namespace

void validate(const Config& c) {
  const auto& p = c.perception;
  require(p.frames >= 1 && p.height > 0 && p.width > 0, "perception frames/height/width must be positive");
  require(p.channels == 1 || p.channels == 3, "perception.channels must be 1 or 3");
  require(p.patch_size > 0 && p.height % p.patch_size == 0 && p.width % p.patch_size == 0,
          "perception height and width must be divisible by patch_size");
  require(p.clips > 0 && p.frames_per_clip > 0 && p.clips * p.frames_per_clip <= p.frames,
          "perception needs clips * frames_per_clip <= frames");
  require(p.max_frames >= p.frames, "perception.max_frames must cover every frame");
  require(p.dim > 0 && p.layers >= 0 && p.heads > 0 && p.dim % p.heads == 0,
          "perception.dim must be divisible by perception.heads");
  const auto& f = c.fusion;
  require(f.layers >= 1, "fusion.layers must be at least 1");
  require(f.queries > 0 && f.query_dim > 0, "fusion.queries and fusion.query_dim must be positive");
  require(f.model_dim > 0 && f.heads > 0 && f.model_dim % f.heads == 0, "fusion.model_dim must be divisible by fusion.heads");
  require(f.query_dim == f.model_dim, "fusion.query_dim must equal fusion.model_dim (queries feed the residual stream)");
  require(f.ffn_multiplier > 0, "fusion.ffn_multiplier must be positive");
  const auto& l = c.lm;
  require(l.dim > 0 && l.heads > 0 && l.dim % l.heads == 0, "lm.dim must be divisible by lm.heads");
  require(l.layers >= 1 && l.max_length > f.queries + 1 && l.ffn_multiplier > 0, "lm layers/max_length invalid");
  require(c.lora.rank > 0 && c.lora.alpha > 0.0, "lora.rank and lora.alpha must be positive");
  for (const auto& t : c.lora.targets) {
    static const std::vector<std::string> known{"w_q", "w_k", "w_v", "w_o", "ffn_in", "ffn_out"};
    require(std::find(known.begin(), known.end(), t) != known.end(), "unknown lora target '" + t + "'");
  }
  validate_optim(c.pretrain.optim, "pretrain.optim");
  validate_optim(c.pretrain.encoder_optim, "pretrain.encoder_optim");
  require(c.pretrain.corpus_size >= 0 && c.pretrain.sketch_noise >= 0.0, "pretrain corpus_size/sketch_noise invalid");
  validate_optim(c.stage1, "stage1");
  validate_optim(c.stage2, "stage2");
  const auto& d = c.data;
  require(!d.train.overlaps(d.val) && !d.train.overlaps(d.test) && !d.val.overlaps(d.test),
          "data seed ranges for train, val and test must be disjoint");
  const SeedRange pre{c.pretrain.seed_start, static_cast<std::uint64_t>(c.pretrain.corpus_size)};
  require(!pre.overlaps(d.train) && !pre.overlaps(d.val) && !pre.overlaps(d.test),
          "pretrain seed range must be disjoint from every data split");
  require(d.world.width == p.width && d.world.height == p.height && d.world.frames == p.frames,
          "data.world size and frame count must match perception");
}

Config preset_config(std::string_view name) {
  Config c = from_json(preset_json(name));
  validate(c);
  return c;
}

Config parse_config(std::string_view json_text) {
  const json doc = parse_json(json_text, "config");
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  const std::string preset = doc.contains("preset") && doc.at("preset").is_string() ? doc.at("preset").get<std::string>() : "toy";
  json merged = preset_json(preset);
  overlay(merged, doc, schema(), "");
  Config c = from_json(merged);
  validate(c);
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

namespace {

json override_patch(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override must look like key.path=value");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  return patch;
}

}  // namespace

Config apply_override(const Config& config, std::string_view assignment) {
  return apply_overrides(config, {std::string(assignment)});
}

Config apply_overrides(const Config& config, const std::vector<std::string>& assignments) {
  json merged = to_json_value(config);
  for (const auto& a : assignments) overlay(merged, override_patch(a), schema(), "");
  Config c = from_json(merged);
  validate(c);
  return c;
}

std::string to_json(const Config& config) { return to_json_value(config).dump(2); }

}  // namespace fusecore
