#pragma once

#include <string>
#include <vector>

#include "end2/core/config.hpp"
#include "end2/core/types.hpp"
#include "end2/evaluation/benchmark.hpp"
#include "end2/training/dataset.hpp"

namespace end2::eval {

struct AblationCell {
  std::string label;
  RunConfig config;
};

struct AblationRow {
  std::string label;
  double acc = 0.0;   // mean over the evaluation suite
  double psnr = 0.0;  // cover vs marked
  double ssim = 0.0;
  std::string error;
  EvalReport report;

  bool failed() const noexcept { return !error.empty(); }
};

struct AblationReport {
  std::vector<AblationRow> rows;

  /// "cell,acc,psnr,ssim,error"
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
  const AblationRow& row(const std::string& label) const;
};

/// "table4": None, FA, FA+MU, FA+SL, FA+MU+SL.
/// "table5": Proposed (cosine), MSE, DINO, all with momentum and swapping.
/// Every cell copies `base` (seed included) and only changes the strategy.
std::vector<AblationCell> ablation_preset(const std::string& name, const RunConfig& base);

/// Trains each cell from scratch and evaluates it on `heldout` under `suite`.
/// A failing cell is recorded on its row and the remaining cells still run.
AblationReport run_ablation(const std::vector<AblationCell>& cells, const training::ImageDataset& train,
                            const ImageBatch& heldout, const SuiteConfig& suite, const EvalOptions& options);

}  // namespace end2::eval
