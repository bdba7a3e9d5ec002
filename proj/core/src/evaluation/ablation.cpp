#include "end2/evaluation/ablation.hpp"

#include <fstream>
#include <sstream>

#include "end2/core/errors.hpp"
#include "end2/training/trainer.hpp"

namespace end2::eval {

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os << "cell,acc,psnr,ssim,error\n";
  for (const auto& r : rows) {
    if (r.failed()) {
      os << r.label << ",nan,nan,nan,\"" << r.error << "\"\n";
    } else {
      os << r.label << "," << r.acc << "," << r.psnr << "," << r.ssim << ",\n";
    }
  }
  return os.str();
}

void AblationReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_csv();
}

nlohmann::json AblationReport::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"cell", r.label}};
    if (r.failed()) {
      j["error"] = r.error;
    } else {
      j["acc"] = r.acc;
      j["psnr"] = r.psnr;
      j["ssim"] = r.ssim;
      j["report"] = r.report.to_json();
    }
    arr.push_back(j);
  }
  return {{"rows", arr}};
}

const AblationRow& AblationReport::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw ContractError("ablation report has no cell '" + label + "'");
}

std::vector<AblationCell> ablation_preset(const std::string& name, const RunConfig& base) {
  auto cell = [&](std::string label, bool fa, bool mu, bool sl, AlignmentLoss a = AlignmentLoss::Cosine) {
    RunConfig c = base;
    c.strategy.variant = Variant::End2;
    c.strategy.feature_alignment = fa;
    c.strategy.momentum_update = mu;
    c.strategy.swapping = sl;
    c.strategy.alignment = a;
    return AblationCell{std::move(label), std::move(c)};
  };
  if (name == "table4") {
    return {cell("None", false, false, false), cell("FA", true, false, false), cell("FA+MU", true, true, false),
            cell("FA+SL", true, false, true), cell("FA+MU+SL", true, true, true)};
  }
  if (name == "table5") {
    return {cell("Proposed", true, true, true, AlignmentLoss::Cosine), cell("MSE", true, true, true, AlignmentLoss::Mse),
            cell("DINO", true, true, true, AlignmentLoss::Dino)};
  }
  throw ConfigError("unknown ablation preset '" + name + "' (expected table4 or table5)");
}

AblationReport run_ablation(const std::vector<AblationCell>& cells, const training::ImageDataset& train,
                            const ImageBatch& heldout, const SuiteConfig& suite, const EvalOptions& options) {
  if (cells.empty()) throw ConfigError("ablation has no cells");
  AblationReport out;
  for (const auto& cell : cells) {
    AblationRow row;
    row.label = cell.label;
    try {
      const auto trained = training::train_loop(cell.config, train);
      row.report = run_benchmark(trained.checkpoint, heldout, suite, options);
      row.acc = row.report.mean_acc();
      row.psnr = row.report.embed_psnr;
      row.ssim = row.report.embed_ssim;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace end2::eval
