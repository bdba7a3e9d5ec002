#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "end2/core/config.hpp"
#include "end2/core/types.hpp"
#include "end2/evaluation/ablation.hpp"
#include "end2/evaluation/benchmark.hpp"

namespace end2::cli {

/// Flags shared by every command. Unset fields fall back to the config file,
/// then to the preset.
struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<bool> deterministic;
  std::optional<std::string> preset;
  std::optional<std::filesystem::path> out;
};

/// Preset, then config file, then command-line overrides; validated.
RunConfig resolve_config(const CommonOptions& options);

/// Code version, codec version, torch version, seed.
nlohmann::json run_metadata(const RunConfig& config);

/// Output directory of one command:
///   config.json  metadata.json  train_log.jsonl  checkpoints/  reports/  plots/
class RunDirectory {
 public:
  /// Creates the tree and writes config.json and metadata.json.
  static RunDirectory create(const std::filesystem::path& root, const RunConfig& config);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path config_path() const { return root_ / "config.json"; }
  std::filesystem::path metadata_path() const { return root_ / "metadata.json"; }
  std::filesystem::path log_path() const { return root_ / "train_log.jsonl"; }
  std::filesystem::path checkpoints() const { return root_ / "checkpoints"; }
  std::filesystem::path reports() const { return root_ / "reports"; }
  std::filesystem::path plots() const { return root_ / "plots"; }
  std::filesystem::path final_checkpoint() const { return checkpoints() / "final.ckpt"; }

 private:
  explicit RunDirectory(std::filesystem::path root) : root_(std::move(root)) {}
  std::filesystem::path root_;
};

/// Trains with the resolved config and writes a run directory under --out
/// (default "runs/train"). The dataset is checked before anything is written.
RunDirectory cmd_train(const CommonOptions& options, std::ostream& out, std::ostream& err);

struct EmbedArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::filesystem::path output;
  std::optional<std::string> message;  // "0110..."; otherwise drawn from message_seed
  std::uint64_t message_seed = 0;
  std::optional<double> strength;
};

struct EmbedResult {
  BitMessage message;
  double psnr = 0.0;  // input vs the written 8-bit image
  std::vector<std::string> warnings;
};

EmbedResult cmd_embed(const EmbedArgs& args, std::ostream& out, std::ostream& err);

struct ExtractArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::optional<ExportDecoder> decoder;  // default: the checkpoint's export setting
};

struct ExtractResult {
  BitMessage bits;
  std::vector<double> scores;
  std::vector<std::string> warnings;
};

ExtractResult cmd_extract(const ExtractArgs& args, std::ostream& out, std::ostream& err);

struct BenchArgs {
  std::filesystem::path checkpoint;
  /// "table2", "jpeg_sweep", "combined", or a comma-free distortion spec.
  std::string suite = "table2";
  std::optional<std::filesystem::path> data;  // default: the config's held-out directory
  std::optional<double> strength;
  std::optional<double> target_psnr;  // calibrates the strength instead
};

/// Writes reports/bench.csv, reports/bench.json and a plot under --out
/// (default "runs/bench").
eval::EvalReport cmd_bench(const BenchArgs& args, const CommonOptions& options, std::ostream& out, std::ostream& err);

struct AblateArgs {
  std::string preset = "table4";
  std::string eval_suite = "combined";
};

eval::AblationReport cmd_ablate(const AblateArgs& args, const CommonOptions& options, std::ostream& out,
                                std::ostream& err);

struct DistortArgs {
  std::string spec;
  std::vector<std::filesystem::path> inputs;
};

/// Applies one distortion to each file (the file doubles as the cover) and
/// writes <out>/<stem>.png (default out "distorted").
std::vector<std::filesystem::path> cmd_distort(const DistortArgs& args, const CommonOptions& options,
                                               std::ostream& out);

}  // namespace end2::cli
