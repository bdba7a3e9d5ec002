#include "end2/core/image_io.hpp"

#include <algorithm>
#include <cctype>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "end2/core/errors.hpp"

namespace end2 {

torch::Tensor load_image(const std::filesystem::path& path) {
  cv::Mat raw;
  try {
    raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw DataError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (raw.empty()) throw DataError("cannot read image " + path.string());

  cv::Mat rgb;
  switch (raw.channels()) {
    case 1:
      cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
      break;
    case 3:
      cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
      break;
    case 4:
      cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
      break;
    default:
      throw DataError("unsupported channel count in " + path.string());
  }
  double scale = 0.0;
  if (rgb.depth() == CV_8U) {
    scale = 1.0 / 255.0;
  } else if (rgb.depth() == CV_16U) {
    scale = 1.0 / 65535.0;
  } else {
    throw DataError("unsupported pixel depth in " + path.string());
  }
  cv::Mat f;
  rgb.convertTo(f, CV_64FC3, scale);
  auto hwc = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat64).clone();
  return hwc.permute({2, 0, 1}).contiguous().to(torch::kFloat32);
}

std::vector<std::uint8_t> to_rgb8(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("expected a (3,h,w) image");
  auto hwc = image.detach()
                 .to(torch::kFloat64)
                 .clamp(0.0, 1.0)
                 .mul(255.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  const auto* p = hwc.data_ptr<std::uint8_t>();
  return std::vector<std::uint8_t>(p, p + hwc.numel());
}

void save_image(const torch::Tensor& image, const std::filesystem::path& path) {
  auto bytes = to_rgb8(image);
  cv::Mat rgb(static_cast<int>(image.size(1)), static_cast<int>(image.size(2)), CV_8UC3, bytes.data());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception& e) {
    throw DataError("cannot write image " + path.string() + ": " + e.what());
  }
  if (!ok) throw DataError("cannot write image " + path.string());
}

bool is_image_file(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm" || ext == ".tif" ||
         ext == ".tiff" || ext == ".webp";
}

}  // namespace end2
