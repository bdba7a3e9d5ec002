#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "end2/core/config.hpp"
#include "end2/core/parameter_set.hpp"
#include "end2/models/models.hpp"

namespace end2::models {

/// Everything needed to rebuild a trained model.
///
/// On disk: the 8-byte magic "END2CKPT", a little-endian u32 format version,
/// a u64 header length, a JSON header (config, step, roles, and per-tensor
/// name/shape/dtype/offset), then the raw tensor bytes in header order. The
/// encoding is a pure function of the contents, so equal checkpoints are
/// byte-identical files.
struct Checkpoint {
  RunConfig config;
  std::int64_t step = 0;
  // Roles during the last executed step (before any swap that followed it).
  // Single-decoder strategies store 0 for both.
  int teacher_index = 0;
  int student_index = 1;
  std::map<std::string, ParameterSet> sets;  // encoder, decoder0, decoder1, projection
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws DataError for unreadable/corrupt files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const RunConfig& config, const ModelBundle& models, std::int64_t step, int teacher_index,
                           int student_index);
/// Rebuilds the networks; throws ContractError when a stored parameter set
/// does not match the schema implied by the stored config.
ModelBundle restore_models(const Checkpoint& ckpt);

/// The decoder used for extraction after training: the student (last to see
/// distorted inputs), the teacher, or the element-wise mean of the two.
Decoder extraction_decoder(const Checkpoint& ckpt, ExportDecoder which);

}  // namespace end2::models
