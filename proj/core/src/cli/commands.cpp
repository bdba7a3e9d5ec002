#include "end2/cli/commands.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>

#include <torch/torch.h>
#include <torch/version.h>

#include "end2/core/errors.hpp"
#include "end2/core/image_io.hpp"
#include "end2/core/rng.hpp"
#include "end2/distortions/distortions.hpp"
#include "end2/evaluation/metrics.hpp"
#include "end2/models/checkpoint.hpp"
#include "end2/training/dataset.hpp"
#include "end2/training/trainer.hpp"

#ifndef END2_VERSION
#define END2_VERSION "unknown"
#endif

namespace end2::cli {

namespace fs = std::filesystem;

namespace {

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void require_directory(const std::string& dir, const char* what) {
  if (dir.empty()) throw ConfigError(std::string(what) + " is not set");
  if (!fs::is_directory(dir)) throw DataError(std::string(what) + " '" + dir + "' does not exist");
}

// Resizes to the model's input size, reporting when the image had to change.
torch::Tensor fit_to_model(const torch::Tensor& image, const models::Architecture& arch, const fs::path& source,
                           std::vector<std::string>& warnings, std::ostream& err) {
  if (image.size(1) == arch.height && image.size(2) == arch.width) return image;
  std::ostringstream msg;
  msg << source.string() << " is " << image.size(2) << "x" << image.size(1) << "; center-"
      << (image.size(1) > arch.height || image.size(2) > arch.width ? "cropped" : "padded") << " to " << arch.width
      << "x" << arch.height;
  warnings.push_back(msg.str());
  err << "warning: " << msg.str() << "\n";
  return training::center_fit(image, arch.height, arch.width);
}

SuiteConfig bench_suite(const std::string& name) {
  if (name == "table2" || name == "jpeg_sweep" || name == "combined" || name == "identity" || name == "train_desk") {
    return suite_preset(name);
  }
  SuiteConfig s;
  s.mode = SuiteMode::Fixed;
  s.entries.push_back(parse_distortion(name));
  return s;
}

fs::path out_dir(const CommonOptions& options, const char* fallback) {
  return options.out.value_or(fs::path(fallback));
}

}  // namespace

RunConfig resolve_config(const CommonOptions& options) {
  RunConfig config;
  if (options.config) {
    config = load_config(*options.config, options.preset);
  } else {
    config = preset_config(options.preset.value_or("desk"));
  }
  if (options.seed) config.seed = *options.seed;
  if (options.deterministic) config.train.deterministic = *options.deterministic;
  validate(config);
  training::validate_strategy(config);
  return config;
}

nlohmann::json run_metadata(const RunConfig& config) {
  return {{"code_version", END2_VERSION},
          {"codec_version", distortions::codec_version()},
          {"torch_version", std::to_string(TORCH_VERSION_MAJOR) + "." + std::to_string(TORCH_VERSION_MINOR) + "." +
                                std::to_string(TORCH_VERSION_PATCH)},
          {"seed", config.seed},
          {"preset", config.preset},
          {"deterministic", config.train.deterministic}};
}

RunDirectory RunDirectory::create(const fs::path& root, const RunConfig& config) {
  RunDirectory dir(root);
  for (const auto& p : {dir.checkpoints(), dir.reports(), dir.plots()}) fs::create_directories(p);
  save_config(config, dir.config_path());
  write_json(run_metadata(config), dir.metadata_path());
  return dir;
}

RunDirectory cmd_train(const CommonOptions& options, std::ostream& out, std::ostream& err) {
  const auto config = resolve_config(options);
  require_directory(config.data.train_dir, "data.train_dir");
  if (!config.data.heldout_dir.empty()) require_directory(config.data.heldout_dir, "data.heldout_dir");

  auto train = training::ImageDataset::from_directory(config.data.train_dir, derive_seed(config.seed, "dataset"));
  std::optional<ImageBatch> heldout;
  if (!config.data.heldout_dir.empty()) {
    auto ds = training::ImageDataset::from_directory(config.data.heldout_dir, derive_seed(config.seed, "dataset.heldout"));
    heldout = ds.fixed_crops(config.data.eval_samples, config.height, config.width, derive_seed(config.seed, "heldout"));
  }

  auto dir = RunDirectory::create(out_dir(options, "runs/train"), config);
  training::TrainLoopOptions loop;
  loop.checkpoint_dir = dir.checkpoints();
  loop.log_path = dir.log_path();
  loop.heldout = heldout;
  out << "training " << to_string(config.strategy.variant) << " for " << config.train.steps << " steps on "
      << train.size() << " images -> " << dir.root().string() << "\n";
  const auto result = training::train_loop(config, train, loop);
  if (result.skipped > 0) err << "warning: " << result.skipped << " batches skipped (degenerate projection)\n";
  if (!result.evaluations.empty()) {
    const auto& last = result.evaluations.back();
    write_json(last, dir.reports() / "heldout.json");
    for (const auto& row : last.at("rows")) {
      out << "  held-out " << row.at("distortion").get<std::string>() << ": acc=" << row.value("acc", nlohmann::json())
          << "\n";
    }
    out << "  embed psnr=" << last.at("embed_psnr") << "\n";
  }
  out << "final checkpoint: " << dir.final_checkpoint().string() << "\n";
  return dir;
}

EmbedResult cmd_embed(const EmbedArgs& args, std::ostream& out, std::ostream& err) {
  const auto ckpt = models::load_checkpoint(args.checkpoint);
  const auto arch = models::Architecture::from(ckpt.config);
  EmbedResult r{BitMessage(std::vector<std::uint8_t>(1, 0)), 0.0, {}};
  r.message = args.message ? BitMessage::from_string(*args.message) : make_message(args.message_seed, arch.message_length);
  if (static_cast<int>(r.message.size()) != arch.message_length) {
    throw ConfigError("message has " + std::to_string(r.message.size()) + " bits; the checkpoint expects " +
                      std::to_string(arch.message_length));
  }
  const auto cover = fit_to_model(load_image(args.input), arch, args.input, r.warnings, err);
  const auto bundle = models::restore_models(ckpt);
  torch::NoGradGuard no_grad;
  const auto x = ImageBatch{cover.unsqueeze(0).to(arch.dtype())};
  const auto marked = bundle.encoder.encode(x, r.message, args.strength.value_or(ckpt.config.eval.strength));
  const auto image = marked.data[0].to(torch::kFloat32);
  save_image(image, args.output);
  const auto written = (image * 255.0).round() / 255.0;
  r.psnr = eval::psnr(cover.unsqueeze(0), written.unsqueeze(0));
  out << "message " << r.message.to_string() << "\n";
  out << "psnr " << std::fixed << std::setprecision(2) << r.psnr << " dB\n";
  return r;
}

ExtractResult cmd_extract(const ExtractArgs& args, std::ostream& out, std::ostream& err) {
  const auto ckpt = models::load_checkpoint(args.checkpoint);
  const auto arch = models::Architecture::from(ckpt.config);
  const auto decoder = models::extraction_decoder(ckpt, args.decoder.value_or(ckpt.config.train.export_decoder));
  ExtractResult r{BitMessage(std::vector<std::uint8_t>(1, 0)), {}, {}};
  const auto image = fit_to_model(load_image(args.input), arch, args.input, r.warnings, err);
  torch::NoGradGuard no_grad;
  const auto scores = decoder.decode(ImageBatch{image.unsqueeze(0).to(arch.dtype())})[0].to(torch::kFloat64);
  r.bits = BitMessage::from_scores(scores);
  const auto* p = scores.data_ptr<double>();
  r.scores.assign(p, p + scores.numel());
  out << "bits " << r.bits.to_string() << "\n";
  out << "scores";
  for (double s : r.scores) out << " " << std::fixed << std::setprecision(4) << s;
  out << "\n";
  return r;
}

eval::EvalReport cmd_bench(const BenchArgs& args, const CommonOptions& options, std::ostream& out, std::ostream& err) {
  const auto ckpt = models::load_checkpoint(args.checkpoint);
  RunConfig config = ckpt.config;
  if (options.seed) config.seed = *options.seed;
  const std::string data_dir = args.data ? args.data->string() : config.data.heldout_dir;
  require_directory(data_dir, "held-out data directory");
  const auto suite = bench_suite(args.suite);
  for (const auto& e : suite.entries) distortions::Distortion::from_entry(e);

  const auto images = training::ImageDataset::from_directory(data_dir, derive_seed(config.seed, "dataset.heldout"))
                          .fixed_crops(config.data.eval_samples, config.height, config.width,
                                       derive_seed(config.seed, "heldout"));
  auto dir = RunDirectory::create(out_dir(options, "runs/bench"), config);

  eval::EvalOptions eo;
  eo.seed = derive_seed(config.seed, "bench");
  eo.batch_size = config.eval.batch_size;
  eo.strength = args.strength.value_or(config.eval.strength);
  if (args.target_psnr) {
    const auto bundle = models::restore_models(ckpt);
    eo.strength = eval::calibrate_strength(bundle.encoder, images, *args.target_psnr, eo);
    out << "calibrated strength " << eo.strength << " for PSNR " << *args.target_psnr << "\n";
  }
  auto report = eval::run_benchmark(ckpt, images, suite, eo);
  report.metadata["checkpoint"] = fs::absolute(args.checkpoint).string();
  report.metadata["dataset"] = fs::absolute(data_dir).string();
  report.metadata["suite"] = args.suite;
  report.write_csv(dir.reports() / "bench.csv");
  write_json(report.to_json(), dir.reports() / "bench.json");

  eval::PlotSeries series{"acc", {}, {}};
  if (args.suite == "jpeg_sweep") {
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
      if (report.rows[i].failed()) continue;
      series.x.push_back(suite.entries[i].params.at("Q"));
      series.y.push_back(report.rows[i].acc);
    }
    eval::write_svg_plot(dir.plots() / "acc_vs_q.svg", "ACC under real JPEG", "quality factor Q", "bit accuracy",
                         {series});
  } else {
    for (const auto& row : report.rows) {
      if (row.failed() || !std::isfinite(row.psnr)) continue;
      series.x.push_back(row.psnr);
      series.y.push_back(row.acc);
    }
    eval::write_svg_plot(dir.plots() / "acc_vs_psnr.svg", "ACC per distortion", "PSNR marked vs distorted (dB)",
                         "bit accuracy", {series});
  }
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";
  out << report.to_csv();
  out << "embed psnr " << report.embed_psnr << " ssim " << report.embed_ssim << "\n";
  return report;
}

eval::AblationReport cmd_ablate(const AblateArgs& args, const CommonOptions& options, std::ostream& out,
                                std::ostream& err) {
  const auto config = resolve_config(options);
  require_directory(config.data.train_dir, "data.train_dir");
  require_directory(config.data.heldout_dir, "data.heldout_dir");
  const auto cells = eval::ablation_preset(args.preset, config);
  const auto suite = bench_suite(args.eval_suite);

  const auto train = training::ImageDataset::from_directory(config.data.train_dir, derive_seed(config.seed, "dataset"));
  const auto heldout =
      training::ImageDataset::from_directory(config.data.heldout_dir, derive_seed(config.seed, "dataset.heldout"))
          .fixed_crops(config.data.eval_samples, config.height, config.width, derive_seed(config.seed, "heldout"));
  auto dir = RunDirectory::create(out_dir(options, "runs/ablate"), config);

  eval::EvalOptions eo;
  eo.seed = derive_seed(config.seed, "bench");
  eo.batch_size = config.eval.batch_size;
  eo.strength = config.eval.strength;
  const auto report = eval::run_ablation(cells, train, heldout, suite, eo);
  report.write_csv(dir.reports() / ("ablation_" + args.preset + ".csv"));
  write_json(report.to_json(), dir.reports() / ("ablation_" + args.preset + ".json"));

  eval::PlotSeries series{"cells", {}, {}};
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    if (report.rows[i].failed()) {
      err << "warning: cell " << report.rows[i].label << " failed: " << report.rows[i].error << "\n";
      continue;
    }
    series.x.push_back(report.rows[i].psnr);
    series.y.push_back(report.rows[i].acc);
  }
  eval::write_svg_plot(dir.plots() / ("ablation_" + args.preset + ".svg"), "Ablation " + args.preset,
                       "embedding PSNR (dB)", "mean bit accuracy", {series});
  out << report.to_csv();
  return report;
}

std::vector<fs::path> cmd_distort(const DistortArgs& args, const CommonOptions& options, std::ostream& out) {
  const auto d = distortions::Distortion::parse(args.spec);
  if (args.inputs.empty()) throw ConfigError("no input images");
  const auto dir = out_dir(options, "distorted");
  const auto seed = options.seed.value_or(0);
  std::vector<torch::Tensor> images;
  for (const auto& p : args.inputs) images.push_back(load_image(p));
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ImageBatch x{images[i].unsqueeze(0)};
    const auto y = distortions::apply_blocked(d, x, x, derive_seed(seed, "distort", i));
    auto path = dir / (args.inputs[i].stem().string() + ".png");
    save_image(y.data[0], path);
    out << args.inputs[i].string() << " -> " << path.string() << " (" << d.label() << ", psnr "
        << eval::psnr(x.data, y.data) << " dB)\n";
    written.push_back(std::move(path));
  }
  return written;
}

}  // namespace end2::cli
