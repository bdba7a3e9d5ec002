#include "end2/distortions/distortions.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>
#include <opencv2/core.hpp>
#include <opencv2/core/utility.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "end2/core/errors.hpp"
#include "end2/core/image_io.hpp"
#include "end2/core/rng.hpp"

namespace end2::distortions {

namespace F = torch::nn::functional;

namespace {

struct ParamRule {
  const char* key;
  double fallback;
  double lo;
  double hi;
  bool lo_open;
};

struct KindInfo {
  const char* name;
  std::vector<ParamRule> params;
  bool differentiable;
  bool needs_cover;
};

const std::vector<KindInfo>& registry() {
  static const std::vector<KindInfo> kinds = {
      {"identity", {}, true, false},
      {"gaussian_noise", {{"std", 0.01, 0.0, 1.0, false}}, true, false},
      {"gaussian_filter", {{"sigma", 2.0, 0.0, 10.0, true}}, true, false},
      {"jpeg_real", {{"Q", 50, 1, 100, false}}, false, false},
      {"rotate", {{"deg", 10, -45, 45, false}}, true, false},
      {"translate", {{"dis", 0.05, 0, 0.5, false}}, true, false},
      {"scale", {{"f", 0.65, 0, 2, true}}, true, false},
      {"shear", {{"s", 0.1, -1, 1, false}}, true, false},
      {"crop", {{"p", 0.1, 0, 1, true}}, true, false},
      {"dropout", {{"p", 0.5, 0, 1, true}}, true, true},
      {"cropout", {{"p", 0.5, 0, 1, true}}, true, true},
      {"color", {{"jitter", 0.2, 0, 0.999, false}}, true, false},
      {"external", {}, false, false},
  };
  return kinds;
}

const KindInfo& lookup(const std::string& name) {
  for (const auto& k : registry()) {
    if (name == k.name) return k;
  }
  std::string known;
  for (const auto& k : registry()) known += std::string(known.empty() ? "" : ", ") + k.name;
  throw ConfigError("unknown distortion '" + name + "' (known: " + known + ")");
}

void check_batch(const torch::Tensor& x, const char* who) {
  if (!x.defined() || x.dim() != 4 || x.size(1) != 3) throw ShapeError(std::string(who) + ": expected (b,3,h,w)");
}

// Pixel-space affine warp: output(p) = input(M p + t), p measured from the
// image centre in pixels. Bilinear sampling, zeros outside.
torch::Tensor warp(const torch::Tensor& x, const std::vector<std::array<double, 6>>& transforms) {
  const auto b = x.size(0);
  const double hw = static_cast<double>(x.size(3)) / 2.0;
  const double hh = static_cast<double>(x.size(2)) / 2.0;
  auto theta = torch::empty({b, 2, 3}, torch::kFloat64);
  auto acc = theta.accessor<double, 3>();
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& [m00, m01, m10, m11, tx, ty] = transforms[static_cast<std::size_t>(i)];
    // theta = S^-1 M S with S = diag(w/2, h/2); translation normalised by S.
    acc[i][0][0] = m00;
    acc[i][0][1] = m01 * hh / hw;
    acc[i][0][2] = tx / hw;
    acc[i][1][0] = m10 * hw / hh;
    acc[i][1][1] = m11;
    acc[i][1][2] = ty / hh;
  }
  theta = theta.to(x.scalar_type());
  auto grid = F::affine_grid(theta, x.sizes().vec(), /*align_corners=*/false);
  return F::grid_sample(x, grid,
                        F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
}

bool is_identity(const std::array<double, 6>& t) {
  return t[0] == 1.0 && t[1] == 0.0 && t[2] == 0.0 && t[3] == 1.0 && t[4] == 0.0 && t[5] == 0.0;
}

double random_sign(std::mt19937_64& rng) { return (rng() >> 63) ? 1.0 : -1.0; }

torch::Tensor affine_kind(const torch::Tensor& x, GeometricKind kind, double param, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double w = static_cast<double>(x.size(3));
  const double h = static_cast<double>(x.size(2));
  std::vector<std::array<double, 6>> transforms;
  bool all_identity = true;
  for (std::int64_t i = 0; i < x.size(0); ++i) {
    std::array<double, 6> t{1, 0, 0, 1, 0, 0};
    switch (kind) {
      case GeometricKind::Rotate: {
        const double a = random_sign(rng) * param * std::numbers::pi / 180.0;
        t = {std::cos(a), std::sin(a), -std::sin(a), std::cos(a), 0, 0};
        if (param == 0.0) t = {1, 0, 0, 1, 0, 0};
        break;
      }
      case GeometricKind::Translate: {
        const double sx = random_sign(rng);
        const double sy = random_sign(rng);
        t = {1, 0, 0, 1, -sx * param * w, -sy * param * h};
        if (param == 0.0) t = {1, 0, 0, 1, 0, 0};
        break;
      }
      case GeometricKind::Scale:
        t = {1.0 / param, 0, 0, 1.0 / param, 0, 0};
        break;
      case GeometricKind::Shear: {
        const double s = random_sign(rng) * param;
        t = {1, -s, 0, 1, 0, 0};
        if (param == 0.0) t = {1, 0, 0, 1, 0, 0};
        break;
      }
      case GeometricKind::Crop:
        break;
    }
    all_identity = all_identity && is_identity(t);
    transforms.push_back(t);
  }
  if (all_identity) return x;
  return warp(x, transforms);
}

torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma) {
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  auto k = torch::arange(-radius, radius + 1, torch::kFloat64);
  k = torch::exp(-(k * k) / (2.0 * sigma * sigma));
  k = (k / k.sum()).to(x.scalar_type());
  const auto size = 2 * radius + 1;
  auto kx = k.view({1, 1, 1, size}).expand({3, 1, 1, size}).contiguous();
  auto ky = k.view({1, 1, size, 1}).expand({3, 1, size, 1}).contiguous();
  auto padded = F::pad(x, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReplicate));
  auto out = torch::conv2d(padded, kx, torch::Tensor(), 1, torch::IntArrayRef{0, 0}, 1, 3);
  return torch::conv2d(out, ky, torch::Tensor(), 1, torch::IntArrayRef{0, 0}, 1, 3);
}

torch::Tensor gaussian_noise(const torch::Tensor& x, double std, std::uint64_t seed) {
  if (std == 0.0) return x;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto noise = torch::randn(x.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat64)).to(x.scalar_type());
  return (x + std * noise).clamp(0.0, 1.0);
}

torch::Tensor color_jitter(const torch::Tensor& x, double jitter, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> factor(1.0 - jitter, 1.0 + jitter);
  const auto b = x.size(0);
  auto f = torch::empty({3, b}, torch::kFloat64);
  auto acc = f.accessor<double, 2>();
  for (std::int64_t i = 0; i < b; ++i) {
    for (int j = 0; j < 3; ++j) acc[j][i] = factor(rng);
  }
  f = f.to(x.scalar_type());
  auto brightness = f[0].view({b, 1, 1, 1});
  auto contrast = f[1].view({b, 1, 1, 1});
  auto saturation = f[2].view({b, 1, 1, 1});
  auto luma = torch::tensor({0.299, 0.587, 0.114}, torch::kFloat64).to(x.scalar_type()).view({1, 3, 1, 1});

  auto y = x * brightness;
  auto mean_grey = (y * luma).sum(1, true).mean({2, 3}, true);
  y = (y - mean_grey) * contrast + mean_grey;
  auto grey = (y * luma).sum(1, true);
  y = grey + (y - grey) * saturation;
  return y.clamp(0.0, 1.0);
}

torch::Tensor require_cover(const torch::Tensor& marked, const torch::Tensor& cover, const char* who) {
  if (!cover.defined()) throw ConfigError(std::string(who) + " needs the cover image batch");
  if (cover.sizes() != marked.sizes()) throw ShapeError(std::string(who) + ": cover and marked batch shapes differ");
  return cover.to(marked.scalar_type());
}

torch::Tensor mask_blend(const torch::Tensor& marked, const torch::Tensor& cover, MaskKind kind, double p,
                         std::uint64_t seed) {
  const auto b = marked.size(0);
  const auto h = marked.size(2);
  const auto w = marked.size(3);
  torch::Tensor take_cover;
  if (kind == MaskKind::Dropout) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    take_cover = torch::rand({b, 1, h, w}, gen, torch::TensorOptions().dtype(torch::kFloat64)) < p;
  } else {
    std::mt19937_64 rng(seed);
    take_cover = torch::zeros({b, 1, h, w}, torch::kBool);
    const double side = std::sqrt(p);
    const auto rh = std::clamp<std::int64_t>(std::llround(side * static_cast<double>(h)), 1, h);
    const auto rw = std::clamp<std::int64_t>(std::llround(side * static_cast<double>(w)), 1, w);
    for (std::int64_t i = 0; i < b; ++i) {
      const auto top = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(h - rh + 1));
      const auto left = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(w - rw + 1));
      take_cover[i].slice(1, top, top + rh).slice(2, left, left + rw).fill_(true);
    }
  }
  return torch::where(take_cover.expand_as(marked), cover, marked);
}

torch::Tensor jpeg_round_trip(const torch::Tensor& x, int quality) {
  auto out = torch::empty_like(x);
  const std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, quality};
  for (std::int64_t i = 0; i < x.size(0); ++i) {
    auto bytes = to_rgb8(x[i]);
    cv::Mat rgb(static_cast<int>(x.size(2)), static_cast<int>(x.size(3)), CV_8UC3, bytes.data());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<std::uint8_t> encoded;
    if (!cv::imencode(".jpg", bgr, encoded, params)) throw DistortionFailedError("jpeg_real", "encoder failed");
    cv::Mat decoded = cv::imdecode(encoded, cv::IMREAD_COLOR);
    if (decoded.empty() || decoded.rows != bgr.rows || decoded.cols != bgr.cols) {
      throw DistortionFailedError("jpeg_real", "decoder failed");
    }
    cv::cvtColor(decoded, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_64FC3, 1.0 / 255.0);
    auto hwc = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat64);
    out[i].copy_(hwc.permute({2, 0, 1}));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Distortion Distortion::from_entry(const DistortionEntry& entry) {
  const auto& info = lookup(entry.name);
  DistortionEntry resolved = entry;
  std::set<std::string> allowed;
  for (const auto& rule : info.params) {
    allowed.insert(rule.key);
    auto it = resolved.params.find(rule.key);
    const double v = it == resolved.params.end() ? rule.fallback : it->second;
    const bool low_ok = rule.lo_open ? v > rule.lo : v >= rule.lo;
    if (!std::isfinite(v) || !low_ok || v > rule.hi) {
      std::ostringstream os;
      os << entry.name << ": parameter " << rule.key << "=" << v << " outside " << (rule.lo_open ? "(" : "[") << rule.lo
         << ", " << rule.hi << "]";
      throw ConfigError(os.str());
    }
    resolved.params[rule.key] = v;
  }
  for (const auto& [key, _] : resolved.params) {
    if (!allowed.contains(key)) throw ConfigError(entry.name + ": unknown parameter '" + key + "'");
  }
  if (entry.name == "jpeg_real" && std::floor(resolved.params["Q"]) != resolved.params["Q"]) {
    throw ConfigError("jpeg_real: Q must be an integer");
  }
  if (entry.name == "external") {
    if (!entry.command || entry.command->executable.empty()) {
      throw ConfigError("external distortion needs a command with an executable");
    }
    if (entry.command->timeout_seconds <= 0 || entry.command->max_parallel < 1) {
      throw ConfigError("external distortion needs a positive timeout and max_parallel");
    }
  } else if (entry.command) {
    throw ConfigError(entry.name + ": only 'external' takes a command");
  }
  if (!(entry.weight > 0)) throw ConfigError(entry.name + ": weight must be positive");
  return Distortion(std::move(resolved));
}

double Distortion::param(const std::string& key) const {
  auto it = entry_.params.find(key);
  if (it == entry_.params.end()) throw ConfigError(entry_.name + " has no parameter '" + key + "'");
  return it->second;
}

std::string Distortion::label() const {
  std::string out = entry_.name;
  if (entry_.params.empty()) return out;
  out += "(";
  bool first = true;
  for (const auto& [k, v] : entry_.params) {
    std::ostringstream os;
    os << (first ? "" : ",") << k << "=" << v;
    out += os.str();
    first = false;
  }
  return out + ")";
}

bool Distortion::intrinsically_differentiable() const noexcept {
  for (const auto& k : registry()) {
    if (entry_.name == k.name) return k.differentiable;
  }
  return false;
}

bool Distortion::needs_cover() const noexcept { return entry_.name == "dropout" || entry_.name == "cropout"; }

torch::Tensor Distortion::apply(const torch::Tensor& marked, const torch::Tensor& cover, std::uint64_t seed) const {
  check_batch(marked, "distortion");
  const auto& n = entry_.name;
  if (n == "identity") return marked;
  if (n == "gaussian_noise") return gaussian_noise(marked, param("std"), seed);
  if (n == "gaussian_filter") return gaussian_blur(marked, param("sigma"));
  if (n == "jpeg_real") return jpeg_real(ImageBatch{marked.detach()}, static_cast<int>(param("Q"))).data;
  if (n == "rotate") return affine_kind(marked, GeometricKind::Rotate, param("deg"), seed);
  if (n == "translate") return affine_kind(marked, GeometricKind::Translate, param("dis"), seed);
  if (n == "scale") return affine_kind(marked, GeometricKind::Scale, param("f"), seed);
  if (n == "shear") return affine_kind(marked, GeometricKind::Shear, param("s"), seed);
  if (n == "crop") {
    return marked * crop_mask(marked.size(2), marked.size(3), param("p"), seed).to(marked.scalar_type());
  }
  if (n == "dropout") return mask_blend(marked, require_cover(marked, cover, "dropout"), MaskKind::Dropout, param("p"), seed);
  if (n == "cropout") return mask_blend(marked, require_cover(marked, cover, "cropout"), MaskKind::Cropout, param("p"), seed);
  if (n == "color") return color_jitter(marked, param("jitter"), seed);
  if (n == "external") return external_command(ImageBatch{marked.detach()}, *entry_.command).data;
  throw ConfigError("unknown distortion '" + n + "'");
}

// ---------------------------------------------------------------------------

ImageBatch apply_blocked(const Distortion& d, const ImageBatch& marked, const ImageBatch& cover, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  torch::Tensor out;
  try {
    out = d.apply(marked.data.detach(), cover.data.defined() ? cover.data.detach() : cover.data, seed);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw DistortionFailedError(d.label(), e.what());
  }
  if (out.sizes() != marked.data.sizes()) throw DistortionFailedError(d.label(), "output shape differs from input");
  return ImageBatch{out.detach().clone()};
}

ImageBatch apply_blocked(const Distortion& d, const ImageBatch& marked, std::uint64_t seed) {
  return apply_blocked(d, marked, ImageBatch{}, seed);
}

ImageBatch jpeg_real(const ImageBatch& marked, int quality) {
  if (quality < 1 || quality > 100) throw ConfigError("jpeg_real: Q must lie in [1,100], got " + std::to_string(quality));
  check_batch(marked.data, "jpeg_real");
  torch::NoGradGuard no_grad;
  try {
    return ImageBatch{jpeg_round_trip(marked.data.detach(), quality)};
  } catch (const cv::Exception& e) {
    throw DistortionFailedError("jpeg_real", e.what());
  }
}

ImageBatch geometric(const ImageBatch& marked, GeometricKind kind, double param, std::uint64_t seed) {
  const char* names[] = {"rotate", "translate", "scale", "shear", "crop"};
  const char* keys[] = {"deg", "dis", "f", "s", "p"};
  const auto idx = static_cast<std::size_t>(kind);
  DistortionEntry e;
  e.name = names[idx];
  e.params[keys[idx]] = param;
  return ImageBatch{Distortion::from_entry(e).apply(marked.data, {}, seed)};
}

ImageBatch masking(const ImageBatch& marked, const ImageBatch& cover, MaskKind kind, double p, std::uint64_t seed) {
  DistortionEntry e;
  e.name = kind == MaskKind::Dropout ? "dropout" : "cropout";
  e.params["p"] = p;
  return ImageBatch{Distortion::from_entry(e).apply(marked.data, cover.data, seed)};
}

torch::Tensor crop_mask(std::int64_t h, std::int64_t w, double p, std::uint64_t seed) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("crop: p must lie in (0,1]");
  const std::int64_t total = h * w;
  const auto keep = std::min<std::int64_t>(total, static_cast<std::int64_t>(std::ceil(p * static_cast<double>(total))));
  const auto side = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(keep))));
  const auto min_width = (keep + h - 1) / h;
  const auto cols = std::min(w, std::max(side, min_width));
  const auto rows = (keep + cols - 1) / cols;
  std::mt19937_64 rng(seed);
  const auto top = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(h - rows + 1));
  const auto left = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(w - cols + 1));
  auto mask = torch::zeros({h, w}, torch::kFloat64);
  auto acc = mask.accessor<double, 2>();
  for (std::int64_t k = 0; k < keep; ++k) acc[top + k / cols][left + k % cols] = 1.0;
  return mask;
}

std::string codec_version() {
  std::string info = cv::getBuildInformation();
  std::string jpeg = "unknown";
  std::istringstream lines(info);
  std::string line;
  while (std::getline(lines, line)) {
    const auto pos = line.find("JPEG:");
    if (pos != std::string::npos) {
      jpeg = line.substr(pos + 5);
      jpeg.erase(0, jpeg.find_first_not_of(' '));
      break;
    }
  }
  return std::string("OpenCV ") + CV_VERSION + " imgcodecs, JPEG: " + jpeg;
}

// ---------------------------------------------------------------------------

DistortionSuite DistortionSuite::from_config(const SuiteConfig& config) {
  if (config.entries.empty()) throw ConfigError("distortion suite is empty");
  DistortionSuite s;
  s.mode_ = config.mode;
  double acc = 0.0;
  for (const auto& e : config.entries) {
    s.entries_.push_back(Distortion::from_entry(e));
    acc += e.weight;
    s.cumulative_.push_back(acc);
  }
  return s;
}

const Distortion& DistortionSuite::sample(std::uint64_t seed, std::uint64_t index) const {
  if (entries_.empty()) throw ConfigError("distortion suite is empty");
  if (mode_ == SuiteMode::Fixed) return entries_[index % entries_.size()];
  std::mt19937_64 rng(seed);
  const double u = std::uniform_real_distribution<double>(0.0, cumulative_.back())(rng);
  for (std::size_t i = 0; i < cumulative_.size(); ++i) {
    if (u < cumulative_[i]) return entries_[i];
  }
  return entries_.back();
}

bool DistortionSuite::all_differentiable() const noexcept {
  return std::all_of(entries_.begin(), entries_.end(), [](const Distortion& d) { return d.intrinsically_differentiable(); });
}

}  // namespace end2::distortions
