#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "end2/core/config.hpp"
#include "end2/core/types.hpp"
#include "end2/distortions/distortions.hpp"
#include "end2/models/checkpoint.hpp"
#include "end2/models/models.hpp"

namespace end2::eval {

struct EvalRow {
  std::string distortion;
  std::string params;
  double acc = 0.0;
  double psnr = 0.0;  // marked vs distorted; kIdenticalPsnr when unchanged
  double ssim = 0.0;
  std::int64_t n_samples = 0;
  std::string error;  // non-empty when the distortion failed for this row

  bool failed() const noexcept { return !error.empty(); }
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double embed_psnr = 0.0;  // cover vs marked
  double embed_ssim = 0.0;
  std::vector<std::string> warnings;
  nlohmann::json metadata = nlohmann::json::object();

  /// "distortion,params,acc,psnr,ssim,n_samples" followed by one line per row.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  /// Rows, warnings, embedding quality and metadata as JSON.
  nlohmann::json to_json() const;
  /// Mean ACC over rows that did not fail.
  double mean_acc() const;
  const EvalRow& row(const std::string& distortion) const;
};

struct EvalOptions {
  double strength = 1.0;
  std::uint64_t seed = 0;
  int batch_size = 32;
};

/// Embeds seeded random messages into every image, applies each distortion
/// (gradient-blocked), and extracts with `decoder`. Distortion failures are
/// recorded on their row and do not abort the run.
EvalReport run_benchmark(const models::Encoder& encoder, const models::Decoder& decoder, const ImageBatch& images,
                         const std::vector<distortions::Distortion>& suite, const EvalOptions& options);

/// Convenience overload: extraction decoder chosen by the checkpoint's export setting.
EvalReport run_benchmark(const models::Checkpoint& ckpt, const ImageBatch& images, const SuiteConfig& suite,
                         const EvalOptions& options);

/// jpeg_real at each quality; duplicate qualities are dropped with a warning.
EvalReport run_jpeg_sweep(const models::Checkpoint& ckpt, const ImageBatch& images, const std::vector<int>& qualities,
                          const EvalOptions& options);

/// Bisects the embedding strength so that mean PSNR(cover, marked) is as close
/// as possible to `target_psnr`.
double calibrate_strength(const models::Encoder& encoder, const ImageBatch& images, double target_psnr,
                          const EvalOptions& options);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal SVG line chart.
void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series);

}  // namespace end2::eval
