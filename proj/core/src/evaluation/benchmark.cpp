#include "end2/evaluation/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <torch/torch.h>

#include "end2/core/errors.hpp"
#include "end2/core/rng.hpp"
#include "end2/evaluation/metrics.hpp"

namespace end2::eval {

namespace {

std::string format_number(double v, int precision) {
  if (std::isinf(v)) return "identical";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

nlohmann::json number_or_string(double v) {
  if (std::isinf(v)) return "identical";
  if (std::isnan(v)) return nullptr;
  return v;
}

struct Embedded {
  torch::Tensor cover;
  torch::Tensor marked;
  torch::Tensor messages;
};

Embedded embed_all(const models::Encoder& encoder, const ImageBatch& images, const EvalOptions& opt) {
  torch::NoGradGuard no_grad;
  const auto dtype = encoder.architecture().dtype();
  auto cover = images.data.to(dtype);
  const auto n = cover.size(0);
  auto messages = make_message_batch(derive_seed(opt.seed, "eval.messages"), static_cast<int>(n),
                                     encoder.architecture().message_length, dtype);
  std::vector<torch::Tensor> parts;
  for (std::int64_t start = 0; start < n; start += opt.batch_size) {
    const auto end = std::min<std::int64_t>(n, start + opt.batch_size);
    parts.push_back(
        encoder.encode(ImageBatch{cover.slice(0, start, end)}, messages.slice(0, start, end), opt.strength).data);
  }
  return {cover, torch::cat(parts), messages};
}

double mean_finite(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isfinite(x)) {
      s += x;
      ++n;
    }
  }
  return n == 0 ? kIdenticalPsnr : s / static_cast<double>(n);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<distortions::Distortion> build_suite(const SuiteConfig& suite) {
  std::vector<distortions::Distortion> out;
  for (const auto& e : suite.entries) out.push_back(distortions::Distortion::from_entry(e));
  return out;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "distortion,params,acc,psnr,ssim,n_samples\n";
  for (const auto& r : rows) {
    os << r.distortion << "," << r.params << "," << (r.failed() ? "nan" : format_number(r.acc, 6)) << ","
       << (r.failed() ? "nan" : format_number(r.psnr, 4)) << "," << (r.failed() ? "nan" : format_number(r.ssim, 6))
       << "," << r.n_samples << "\n";
  }
  return os.str();
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_csv();
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"distortion", r.distortion},
                        {"params", r.params},
                        {"acc", number_or_string(r.acc)},
                        {"psnr", number_or_string(r.psnr)},
                        {"ssim", number_or_string(r.ssim)},
                        {"n_samples", r.n_samples}};
    if (r.failed()) j["error"] = r.error;
    rows_json.push_back(j);
  }
  return {{"rows", rows_json},
          {"embed_psnr", number_or_string(embed_psnr)},
          {"embed_ssim", embed_ssim},
          {"warnings", warnings},
          {"metadata", metadata}};
}

double EvalReport::mean_acc() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (!r.failed()) {
      s += r.acc;
      ++n;
    }
  }
  return n == 0 ? std::nan("") : s / static_cast<double>(n);
}

const EvalRow& EvalReport::row(const std::string& distortion) const {
  for (const auto& r : rows) {
    if (r.distortion == distortion) return r;
  }
  throw ContractError("report has no row for '" + distortion + "'");
}

EvalReport run_benchmark(const models::Encoder& encoder, const models::Decoder& decoder, const ImageBatch& images,
                         const std::vector<distortions::Distortion>& suite, const EvalOptions& options) {
  if (suite.empty()) throw ConfigError("benchmark suite is empty");
  if (images.data.size(0) == 0) throw DataError("benchmark dataset is empty");
  if (options.batch_size < 1) throw ConfigError("benchmark batch size must be >= 1");
  torch::NoGradGuard no_grad;
  const auto embedded = embed_all(encoder, images, options);
  const auto n = embedded.cover.size(0);

  EvalReport report;
  report.embed_psnr = mean_finite(psnr_per_image(embedded.cover, embedded.marked));
  report.embed_ssim = mean(ssim_per_image(embedded.cover, embedded.marked));
  report.metadata["strength"] = options.strength;
  report.metadata["seed"] = options.seed;
  report.metadata["n_images"] = n;
  report.metadata["codec"] = distortions::codec_version();

  for (std::size_t r = 0; r < suite.size(); ++r) {
    const auto& d = suite[r];
    EvalRow row;
    row.distortion = d.name();
    row.params = describe_params(d.entry());
    std::vector<double> psnrs;
    std::vector<double> ssims;
    double correct = 0.0;
    try {
      for (std::int64_t start = 0; start < n; start += options.batch_size) {
        const auto end = std::min<std::int64_t>(n, start + options.batch_size);
        const ImageBatch marked{embedded.marked.slice(0, start, end)};
        const ImageBatch cover{embedded.cover.slice(0, start, end)};
        const auto seed = derive_seed(options.seed, "eval.distortion", static_cast<std::uint64_t>(start));
        auto distorted = distortions::apply_blocked(d, marked, cover, seed);
        auto scores = decoder.decode(distorted);
        const auto bits = embedded.messages.slice(0, start, end);
        correct += bit_accuracy(scores, bits) * static_cast<double>(bits.numel());
        auto p = psnr_per_image(marked.data, distorted.data);
        auto s = ssim_per_image(marked.data, distorted.data);
        psnrs.insert(psnrs.end(), p.begin(), p.end());
        ssims.insert(ssims.end(), s.begin(), s.end());
      }
      row.acc = correct / static_cast<double>(embedded.messages.numel());
      row.psnr = mean_finite(psnrs);
      row.ssim = mean(ssims);
      row.n_samples = n;
    } catch (const Error& e) {
      row.error = e.what();
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    report.rows.push_back(row);
  }
  return report;
}

EvalReport run_benchmark(const models::Checkpoint& ckpt, const ImageBatch& images, const SuiteConfig& suite,
                         const EvalOptions& options) {
  const auto bundle = models::restore_models(ckpt);
  const auto decoder = models::extraction_decoder(ckpt, ckpt.config.train.export_decoder);
  auto report = run_benchmark(bundle.encoder, decoder, images, build_suite(suite), options);
  report.metadata["checkpoint_step"] = ckpt.step;
  return report;
}

EvalReport run_jpeg_sweep(const models::Checkpoint& ckpt, const ImageBatch& images, const std::vector<int>& qualities,
                          const EvalOptions& options) {
  SuiteConfig suite;
  suite.mode = SuiteMode::Fixed;
  std::set<int> seen;
  std::vector<std::string> warnings;
  for (int q : qualities) {
    if (!seen.insert(q).second) {
      warnings.push_back("duplicate JPEG quality " + std::to_string(q) + " ignored");
      continue;
    }
    DistortionEntry e;
    e.name = "jpeg_real";
    e.params["Q"] = q;
    suite.entries.push_back(e);
  }
  auto report = run_benchmark(ckpt, images, suite, options);
  report.warnings.insert(report.warnings.end(), warnings.begin(), warnings.end());
  return report;
}

double calibrate_strength(const models::Encoder& encoder, const ImageBatch& images, double target_psnr,
                          const EvalOptions& options) {
  auto quality = [&](double s) {
    EvalOptions o = options;
    o.strength = s;
    auto e = embed_all(encoder, images, o);
    return mean_finite(psnr_per_image(e.cover, e.marked));
  };
  // PSNR falls as strength grows; bracket then bisect.
  double lo = 1e-3;
  double hi = 1.0;
  while (quality(hi) > target_psnr && hi < 64.0) hi *= 2.0;
  for (int i = 0; i < 30; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (quality(mid) > target_psnr) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series) {
  constexpr double width = 640, height = 420, left = 70, right = 20, top = 40, bottom = 60;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (width - left - right); };
  auto py = [&](double y) { return height - bottom - (y - ymin) / (ymax - ymin) * (height - top - bottom); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right << "\" y2=\""
      << height - bottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << height - bottom
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    out << "<text x=\"" << px(xv) << "\" y=\"" << height - bottom + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
        << format_number(xv, 2) << "</text>\n";
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
        << format_number(yv, 3) << "</text>\n";
  }
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\" font-size=\"13\">"
      << x_label << "</text>\n";
  out << "<text x=\"18\" y=\"" << height / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
      << height / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) out << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    out << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
        out << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    out << "<text x=\"" << width - right - 150 << "\" y=\"" << top + 16 * (k + 1) << "\" font-size=\"12\" fill=\""
        << color << "\">" << s.label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace end2::eval
