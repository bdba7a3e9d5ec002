#include "end2/core/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "end2/core/errors.hpp"

namespace end2 {

using nlohmann::json;

namespace {

DistortionEntry entry(std::string name, std::map<std::string, double> params = {}, double weight = 1.0) {
  DistortionEntry e;
  e.name = std::move(name);
  e.params = std::move(params);
  e.weight = weight;
  return e;
}

const char* to_string(SuiteMode m) { return m == SuiteMode::Fixed ? "fixed" : "random"; }

SuiteMode parse_mode(const std::string& s) {
  if (s == "fixed") return SuiteMode::Fixed;
  if (s == "random") return SuiteMode::RandomOneOf;
  throw ConfigError("unknown suite mode '" + s + "' (expected fixed|random)");
}

const char* to_string(TeacherUpdate t) { return t == TeacherUpdate::Optimizer ? "optimizer" : "momentum_only"; }

TeacherUpdate parse_teacher_update(const std::string& s) {
  if (s == "optimizer") return TeacherUpdate::Optimizer;
  if (s == "momentum_only") return TeacherUpdate::MomentumOnly;
  throw ConfigError("unknown teacher_update '" + s + "' (expected optimizer|momentum_only)");
}

const char* to_string(ExportDecoder e) {
  switch (e) {
    case ExportDecoder::Student:
      return "student";
    case ExportDecoder::Teacher:
      return "teacher";
    case ExportDecoder::Average:
      return "average";
  }
  return "student";
}

ExportDecoder parse_export(const std::string& s) {
  if (s == "student") return ExportDecoder::Student;
  if (s == "teacher") return ExportDecoder::Teacher;
  if (s == "average") return ExportDecoder::Average;
  throw ConfigError("unknown export_decoder '" + s + "' (expected student|teacher|average)");
}

json entry_to_json(const DistortionEntry& e) {
  json j = {{"name", e.name}, {"weight", e.weight}, {"params", e.params}};
  if (e.command) {
    j["command"] = {{"executable", e.command->executable},
                    {"args", e.command->args},
                    {"timeout_seconds", e.command->timeout_seconds},
                    {"max_parallel", e.command->max_parallel}};
  }
  return j;
}

DistortionEntry entry_from_json(const json& j) {
  if (j.is_string()) return parse_distortion(j.get<std::string>());
  DistortionEntry e;
  for (const auto& [key, _] : j.items()) {
    if (key != "name" && key != "weight" && key != "params" && key != "command") {
      throw ConfigError("unknown key '" + key + "' in distortion entry");
    }
  }
  e.name = j.at("name").get<std::string>();
  e.weight = j.value("weight", 1.0);
  if (j.contains("params")) e.params = j.at("params").get<std::map<std::string, double>>();
  if (j.contains("command")) {
    const auto& c = j.at("command");
    ExternalCommandSpec spec;
    spec.executable = c.at("executable").get<std::string>();
    spec.args = c.value("args", std::vector<std::string>{});
    spec.timeout_seconds = c.value("timeout_seconds", 30.0);
    spec.max_parallel = c.value("max_parallel", 1);
    e.command = spec;
  }
  return e;
}

// Recursively overlays `patch` onto `target`, rejecting keys the target lacks.
void overlay(json& target, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!target.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    auto& slot = target[key];
    if (slot.is_object() && value.is_object()) {
      overlay(slot, value, where);
    } else {
      slot = value;
    }
  }
}

template <typename T>
T read(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + section + "." + key + "': " + e.what());
  }
}

RunConfig from_json(const json& j) {
  RunConfig c;
  c.preset = read<std::string>(j, "preset", "");
  c.seed = read<std::uint64_t>(j, "seed", "");
  c.message_length = read<int>(j, "message_length", "");
  const auto& img = j.at("image");
  c.height = read<int>(img, "height", "image");
  c.width = read<int>(img, "width", "image");

  const auto& m = j.at("model");
  c.model.latent_dim = read<int>(m, "latent_dim", "model");
  c.model.projection_dim = read<int>(m, "projection_dim", "model");
  c.model.encoder_channels = read<int>(m, "encoder_channels", "model");
  c.model.encoder_blocks = read<int>(m, "encoder_blocks", "model");
  c.model.message_channels = read<int>(m, "message_channels", "model");
  c.model.message_grid = read<int>(m, "message_grid", "model");
  c.model.decoder_channels = read<int>(m, "decoder_channels", "model");
  c.model.decoder_blocks = read<int>(m, "decoder_blocks", "model");
  c.model.double_precision = read<bool>(m, "double_precision", "model");

  const auto& l = j.at("loss");
  c.loss.lambda_align = read<double>(l, "lambda_align", "loss");
  c.loss.lambda_msg = read<double>(l, "lambda_msg", "loss");
  c.loss.lambda_quality = read<double>(l, "lambda_quality", "loss");
  c.loss.lambda_quality_final = read<double>(l, "lambda_quality_final", "loss");
  c.loss.quality_ramp_start = read<std::int64_t>(l, "quality_ramp_start", "loss");
  c.loss.quality_ramp_end = read<std::int64_t>(l, "quality_ramp_end", "loss");

  const auto& t = j.at("train");
  c.train.learning_rate = read<double>(t, "learning_rate", "train");
  c.train.batch_size = read<int>(t, "batch_size", "train");
  c.train.steps = read<std::int64_t>(t, "steps", "train");
  c.train.momentum = read<double>(t, "momentum", "train");
  c.train.swap_interval = read<int>(t, "swap_interval", "train");
  c.train.checkpoint_every = read<std::int64_t>(t, "checkpoint_every", "train");
  c.train.eval_every = read<std::int64_t>(t, "eval_every", "train");
  c.train.log_every = read<std::int64_t>(t, "log_every", "train");
  c.train.export_decoder = parse_export(read<std::string>(t, "export_decoder", "train"));
  c.train.deterministic = read<bool>(t, "deterministic", "train");
  c.train.threads = read<int>(t, "threads", "train");

  const auto& s = j.at("strategy");
  c.strategy.variant = parse_variant(read<std::string>(s, "variant", "strategy"));
  c.strategy.feature_alignment = read<bool>(s, "feature_alignment", "strategy");
  c.strategy.momentum_update = read<bool>(s, "momentum_update", "strategy");
  c.strategy.swapping = read<bool>(s, "swapping", "strategy");
  c.strategy.alignment = parse_alignment(read<std::string>(s, "alignment", "strategy"));
  c.strategy.teacher_update = parse_teacher_update(read<std::string>(s, "teacher_update", "strategy"));
  c.strategy.student_msg_weight = read<double>(s, "student_msg_weight", "strategy");
  c.strategy.tdsl_stage1_fraction = read<double>(s, "tdsl_stage1_fraction", "strategy");

  const auto& d = j.at("distortions");
  if (d.is_string()) {
    c.distortions = suite_preset(d.get<std::string>());
  } else {
    c.distortions.mode = parse_mode(read<std::string>(d, "mode", "distortions"));
    c.distortions.entries.clear();
    for (const auto& e : d.at("entries")) c.distortions.entries.push_back(entry_from_json(e));
  }

  const auto& data = j.at("data");
  c.data.train_dir = read<std::string>(data, "train_dir", "data");
  c.data.heldout_dir = read<std::string>(data, "heldout_dir", "data");
  c.data.eval_samples = read<int>(data, "eval_samples", "data");

  const auto& ev = j.at("eval");
  c.eval.strength = read<double>(ev, "strength", "eval");
  c.eval.batch_size = read<int>(ev, "batch_size", "eval");
  return c;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::End2:
      return "END2";
    case Variant::VanillaEnd:
      return "VanillaEND";
    case Variant::ForwardAsl:
      return "ForwardASL";
    case Variant::Tdsl:
      return "TDSL";
  }
  return "END2";
}

Variant parse_variant(const std::string& s) {
  if (s == "END2") return Variant::End2;
  if (s == "VanillaEND") return Variant::VanillaEnd;
  if (s == "ForwardASL") return Variant::ForwardAsl;
  if (s == "TDSL") return Variant::Tdsl;
  throw ConfigError("unknown strategy variant '" + s + "' (expected END2|VanillaEND|ForwardASL|TDSL)");
}

std::string to_string(AlignmentLoss a) {
  switch (a) {
    case AlignmentLoss::Cosine:
      return "cosine";
    case AlignmentLoss::Mse:
      return "mse";
    case AlignmentLoss::Dino:
      return "dino";
  }
  return "cosine";
}

AlignmentLoss parse_alignment(const std::string& s) {
  if (s == "cosine") return AlignmentLoss::Cosine;
  if (s == "mse") return AlignmentLoss::Mse;
  if (s == "dino") return AlignmentLoss::Dino;
  throw ConfigError("unknown alignment loss '" + s + "' (expected cosine|mse|dino)");
}

DistortionEntry parse_distortion(const std::string& spec) {
  DistortionEntry e;
  const auto open = spec.find('(');
  e.name = spec.substr(0, open);
  if (e.name.empty()) throw ConfigError("empty distortion name in '" + spec + "'");
  if (open == std::string::npos) return e;
  if (spec.back() != ')') throw ConfigError("unterminated parameter list in '" + spec + "'");
  std::stringstream body(spec.substr(open + 1, spec.size() - open - 2));
  std::string item;
  while (std::getline(body, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value in '" + spec + "'");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      e.params[key] = v;
    } catch (const std::logic_error&) {
      throw ConfigError("non-numeric value '" + value + "' for '" + key + "' in '" + spec + "'");
    }
  }
  return e;
}

std::string describe_params(const DistortionEntry& entry) {
  std::string out;
  for (const auto& [k, v] : entry.params) {
    if (!out.empty()) out += ";";
    std::ostringstream os;
    os << k << "=" << v;
    out += os.str();
  }
  return out;
}

SuiteConfig suite_preset(const std::string& name) {
  SuiteConfig s;
  if (name == "identity") {
    s.entries = {entry("identity")};
  } else if (name == "train_desk") {
    s.entries = {entry("identity"), entry("gaussian_noise", {{"std", 0.01}}), entry("jpeg_real", {{"Q", 50}})};
  } else if (name == "jpeg50") {
    s.entries = {entry("jpeg_real", {{"Q", 50}})};
  } else if (name == "table2") {
    s.mode = SuiteMode::Fixed;
    s.entries = {entry("identity"),
                 entry("gaussian_filter", {{"sigma", 2}}),
                 entry("jpeg_real", {{"Q", 50}}),
                 entry("crop", {{"p", 0.1}}),
                 entry("dropout", {{"p", 0.5}}),
                 entry("rotate", {{"deg", 10}}),
                 entry("translate", {{"dis", 0.05}}),
                 entry("scale", {{"f", 0.65}}),
                 entry("gaussian_noise", {{"std", 0.01}})};
  } else if (name == "combined") {
    s.entries = {entry("rotate", {{"deg", 10}}),
                 entry("crop", {{"p", 0.5}}),
                 entry("translate", {{"dis", 0.05}}),
                 entry("scale", {{"f", 0.8}}),
                 entry("shear", {{"s", 0.1}}),
                 entry("dropout", {{"p", 0.5}}),
                 entry("cropout", {{"p", 0.3}}),
                 entry("color"),
                 entry("jpeg_real", {{"Q", 50}}),
                 entry("gaussian_filter", {{"sigma", 1}}),
                 entry("gaussian_noise", {{"std", 0.01}})};
  } else if (name == "jpeg_sweep") {
    s.mode = SuiteMode::Fixed;
    for (int q : {50, 40, 30, 20, 10}) s.entries.push_back(entry("jpeg_real", {{"Q", q}}));
  } else {
    throw ConfigError("unknown distortion suite preset '" + name +
                      "' (expected identity|train_desk|jpeg50|table2|combined|jpeg_sweep)");
  }
  return s;
}

LossConfig LossConfig::at_step(std::int64_t step) const {
  LossConfig w = *this;
  if (lambda_quality_final <= 0.0 || step < quality_ramp_start) return w;
  double t = 1.0;
  if (step < quality_ramp_end) {
    t = static_cast<double>(step - quality_ramp_start) / static_cast<double>(quality_ramp_end - quality_ramp_start);
  }
  w.lambda_quality = lambda_quality + t * (lambda_quality_final - lambda_quality);
  return w;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") {
    c.distortions = suite_preset("train_desk");
    c.train.steps = 5000;
    c.loss.lambda_quality = 1.0;
    c.loss.lambda_quality_final = 200.0;
    c.loss.quality_ramp_start = 1000;
    c.loss.quality_ramp_end = 3000;
    return c;
  }
  if (name == "paper") {
    c.message_length = 30;
    c.height = 128;
    c.width = 128;
    c.model.latent_dim = 256;
    c.model.projection_dim = 256;
    c.model.encoder_channels = 64;
    c.model.decoder_channels = 64;
    c.model.decoder_blocks = 3;
    c.model.message_grid = 8;
    c.train.batch_size = 32;
    c.train.steps = 100000;
    c.train.checkpoint_every = 5000;
    c.train.eval_every = 5000;
    c.train.log_every = 10;
    c.data.eval_samples = 2000;
    c.distortions = suite_preset("combined");
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk|paper)");
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.message_length >= 1, "message_length must be >= 1");
  require(c.height >= 16 && c.width >= 16, "image height and width must be >= 16");
  require(c.model.latent_dim >= 1 && c.model.projection_dim >= 1, "latent and projection dims must be >= 1");
  require(c.model.encoder_channels >= 1 && c.model.decoder_channels >= 1, "channel widths must be >= 1");
  require(c.model.encoder_blocks >= 0 && c.model.decoder_blocks >= 0, "block counts must be >= 0");
  require(c.model.message_channels >= 1 && c.model.message_grid >= 1, "message map must be non-empty");
  require(c.loss.lambda_align > 0 && c.loss.lambda_msg > 0 && c.loss.lambda_quality > 0,
          "loss weights lambda_align, lambda_msg, lambda_quality must be > 0");
  require(c.loss.lambda_quality_final >= 0, "loss.lambda_quality_final must be >= 0 (0 disables the ramp)");
  require(c.loss.quality_ramp_start >= 0 && c.loss.quality_ramp_end >= c.loss.quality_ramp_start,
          "loss.quality_ramp_end must be >= quality_ramp_start >= 0");
  require(c.train.momentum >= 0.0 && c.train.momentum <= 1.0, "train.momentum (tau) must lie in [0,1]");
  require(c.train.swap_interval >= 1, "train.swap_interval (k) must be >= 1");
  require(c.train.learning_rate > 0, "train.learning_rate must be > 0");
  require(c.train.batch_size >= 1, "train.batch_size must be >= 1");
  require(c.train.steps >= 0, "train.steps must be >= 0");
  require(c.train.threads >= 1, "train.threads must be >= 1");
  require(c.train.log_every >= 1, "train.log_every must be >= 1");
  require(c.strategy.student_msg_weight >= 0, "strategy.student_msg_weight must be >= 0");
  require(c.strategy.tdsl_stage1_fraction >= 0 && c.strategy.tdsl_stage1_fraction <= 1,
          "strategy.tdsl_stage1_fraction must lie in [0,1]");
  require(!c.distortions.entries.empty(), "distortion suite must have at least one entry");
  for (const auto& e : c.distortions.entries) {
    require(e.weight > 0, "distortion '" + e.name + "' must have a positive weight");
  }
  require(c.data.eval_samples >= 1, "data.eval_samples must be >= 1");
  require(c.eval.strength > 0, "eval.strength must be > 0");
  require(c.eval.batch_size >= 1, "eval.batch_size must be >= 1");
}

json to_json(const RunConfig& c) {
  json entries = json::array();
  for (const auto& e : c.distortions.entries) entries.push_back(entry_to_json(e));
  return json{
      {"preset", c.preset},
      {"seed", c.seed},
      {"message_length", c.message_length},
      {"image", {{"height", c.height}, {"width", c.width}}},
      {"model",
       {{"latent_dim", c.model.latent_dim},
        {"projection_dim", c.model.projection_dim},
        {"encoder_channels", c.model.encoder_channels},
        {"encoder_blocks", c.model.encoder_blocks},
        {"message_channels", c.model.message_channels},
        {"message_grid", c.model.message_grid},
        {"decoder_channels", c.model.decoder_channels},
        {"decoder_blocks", c.model.decoder_blocks},
        {"double_precision", c.model.double_precision}}},
      {"loss",
       {{"lambda_align", c.loss.lambda_align},
        {"lambda_msg", c.loss.lambda_msg},
        {"lambda_quality", c.loss.lambda_quality},
        {"lambda_quality_final", c.loss.lambda_quality_final},
        {"quality_ramp_start", c.loss.quality_ramp_start},
        {"quality_ramp_end", c.loss.quality_ramp_end},
        {"convention", "mean_squared"}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"steps", c.train.steps},
        {"momentum", c.train.momentum},
        {"swap_interval", c.train.swap_interval},
        {"checkpoint_every", c.train.checkpoint_every},
        {"eval_every", c.train.eval_every},
        {"log_every", c.train.log_every},
        {"export_decoder", to_string(c.train.export_decoder)},
        {"deterministic", c.train.deterministic},
        {"threads", c.train.threads}}},
      {"strategy",
       {{"variant", to_string(c.strategy.variant)},
        {"feature_alignment", c.strategy.feature_alignment},
        {"momentum_update", c.strategy.momentum_update},
        {"swapping", c.strategy.swapping},
        {"alignment", to_string(c.strategy.alignment)},
        {"teacher_update", to_string(c.strategy.teacher_update)},
        {"student_msg_weight", c.strategy.student_msg_weight},
        {"tdsl_stage1_fraction", c.strategy.tdsl_stage1_fraction}}},
      {"distortions", {{"mode", to_string(c.distortions.mode)}, {"entries", entries}}},
      {"data",
       {{"train_dir", c.data.train_dir}, {"heldout_dir", c.data.heldout_dir}, {"eval_samples", c.data.eval_samples}}},
      {"eval", {{"strength", c.eval.strength}, {"batch_size", c.eval.batch_size}}},
  };
}

RunConfig merge_json(const RunConfig& base, const json& overrides) {
  json merged = to_json(base);
  json patch = overrides;
  // The suite is replaced wholesale: either a preset name or a full object.
  std::optional<json> suite;
  if (patch.is_object() && patch.contains("distortions")) {
    suite = patch["distortions"];
    patch.erase("distortions");
  }
  overlay(merged, patch, "");
  if (suite) {
    if (suite->is_object()) {
      json full = {{"mode", "random"}, {"entries", json::array()}};
      overlay(full, *suite, "distortions");
      merged["distortions"] = full;
    } else {
      merged["distortions"] = *suite;
    }
  }
  merged["loss"].erase("convention");
  return from_json(merged);
}

RunConfig load_config(const std::filesystem::path& path, const std::optional<std::string>& preset_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be an object");
  std::string preset = preset_override.value_or(j.value("preset", std::string("desk")));
  j.erase("preset");
  RunConfig c = merge_json(preset_config(preset), j);
  validate(c);
  return c;
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(config).dump(2) << "\n";
}

}  // namespace end2
