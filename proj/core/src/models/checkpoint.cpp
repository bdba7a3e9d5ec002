#include "end2/models/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "end2/core/errors.hpp"

namespace end2::models {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'N', 'D', '2', 'C', 'K', 'P', 'T'};
const char* const kSetNames[] = {"encoder", "decoder0", "decoder1", "projection"};

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

const char* dtype_name(torch::ScalarType t) {
  if (t == torch::kFloat32) return "f32";
  if (t == torch::kFloat64) return "f64";
  throw ContractError("checkpoint: unsupported parameter dtype");
}

torch::ScalarType parse_dtype(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  throw DataError("checkpoint: unknown dtype '" + s + "'");
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json tensors = json::array();
  std::vector<torch::Tensor> payload;
  std::uint64_t offset = 0;
  for (const auto& [set_name, set] : ckpt.sets) {
    for (const auto& [name, t] : set) {
      auto data = t.detach().contiguous();
      const std::uint64_t bytes = static_cast<std::uint64_t>(data.numel()) * data.element_size();
      tensors.push_back({{"set", set_name},
                         {"name", name},
                         {"shape", data.sizes().vec()},
                         {"dtype", dtype_name(data.scalar_type())},
                         {"offset", offset},
                         {"bytes", bytes}});
      offset += bytes;
      payload.push_back(data);
    }
  }
  const json header = {{"config", to_json(ckpt.config)},
                       {"step", ckpt.step},
                       {"teacher_index", ckpt.teacher_index},
                       {"student_index", ckpt.student_index},
                       {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : payload) {
    out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path.string() + " is not a checkpoint");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint format version " + std::to_string(version) + " is not supported");
  }
  const auto header_len = read_pod<std::uint64_t>(in);
  if (header_len > (1u << 28)) throw DataError("checkpoint header is implausibly large");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("checkpoint: truncated header");

  Checkpoint ckpt;
  try {
    const json header = json::parse(text);
    json cfg = header.at("config");
    const std::string preset = cfg.at("preset").get<std::string>();
    ckpt.config = merge_json(preset_config(preset), cfg);
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.teacher_index = header.at("teacher_index").get<int>();
    ckpt.student_index = header.at("student_index").get<int>();
    const auto data_start = in.tellg();
    for (const auto& entry : header.at("tensors")) {
      auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      auto t = torch::empty(shape, parse_dtype(entry.at("dtype").get<std::string>()));
      const auto bytes = entry.at("bytes").get<std::uint64_t>();
      if (bytes != static_cast<std::uint64_t>(t.numel() * t.element_size())) {
        throw DataError("checkpoint: size mismatch for " + entry.at("name").get<std::string>());
      }
      in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
      in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
      if (!in) throw DataError("checkpoint: truncated tensor data");
      ckpt.sets[entry.at("set").get<std::string>()].add(entry.at("name").get<std::string>(), t.requires_grad_(true));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: malformed header: " + std::string(e.what()));
  }
  return ckpt;
}

Checkpoint make_checkpoint(const RunConfig& config, const ModelBundle& models, std::int64_t step, int teacher_index,
                           int student_index) {
  Checkpoint c;
  c.config = config;
  c.step = step;
  c.teacher_index = teacher_index;
  c.student_index = student_index;
  c.sets["encoder"] = models.encoder.parameters().clone();
  c.sets["decoder0"] = models.decoders[0].parameters().clone();
  c.sets["decoder1"] = models.decoders[1].parameters().clone();
  c.sets["projection"] = models.projection.parameters().clone();
  return c;
}

ModelBundle restore_models(const Checkpoint& ckpt) {
  for (const char* name : kSetNames) {
    if (!ckpt.sets.contains(name)) throw ContractError(std::string("checkpoint is missing parameter set '") + name + "'");
  }
  const auto arch = Architecture::from(ckpt.config);
  auto role = [&](int i) { return i == ckpt.teacher_index ? Role::Teacher : Role::Student; };
  return ModelBundle{
      Encoder(arch, ckpt.sets.at("encoder").clone()),
      {Decoder(arch, ckpt.sets.at("decoder0").clone(), role(0)),
       Decoder(arch, ckpt.sets.at("decoder1").clone(), role(1))},
      ProjectionHead(arch, ckpt.sets.at("projection").clone()),
  };
}

Decoder extraction_decoder(const Checkpoint& ckpt, ExportDecoder which) {
  auto models = restore_models(ckpt);
  switch (which) {
    case ExportDecoder::Student:
      return models.decoders[static_cast<std::size_t>(ckpt.student_index)];
    case ExportDecoder::Teacher:
      return models.decoders[static_cast<std::size_t>(ckpt.teacher_index)];
    case ExportDecoder::Average: {
      auto avg = ParameterSet::blend(models.decoders[0].parameters(), 0.5, models.decoders[1].parameters());
      return Decoder(Architecture::from(ckpt.config), std::move(avg), Role::Student);
    }
  }
  return models.decoders[static_cast<std::size_t>(ckpt.student_index)];
}

}  // namespace end2::models
