#include "end2/training/dataset.hpp"

#include <algorithm>
#include <random>

#include <torch/torch.h>

#include "end2/core/errors.hpp"
#include "end2/core/image_io.hpp"
#include "end2/core/rng.hpp"

namespace end2::training {

namespace fs = std::filesystem;

namespace {

torch::Tensor crop_at(const torch::Tensor& img, std::uint64_t draw, int h, int w) {
  if (img.size(1) < h || img.size(2) < w) {
    throw DataError("image of size " + std::to_string(img.size(1)) + "x" + std::to_string(img.size(2)) +
                    " is smaller than the " + std::to_string(h) + "x" + std::to_string(w) + " crop");
  }
  std::mt19937_64 rng(draw);
  const auto top = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(img.size(1) - h + 1));
  const auto left = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(img.size(2) - w + 1));
  return img.slice(1, top, top + h).slice(2, left, left + w);
}

}  // namespace

ImageDataset ImageDataset::from_directory(const fs::path& dir, std::uint64_t seed) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  if (files.empty()) throw DataError("no image files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::mt19937_64 rng(derive_seed(seed, "dataset.order"));
  std::shuffle(files.begin(), files.end(), rng);

  ImageDataset ds;
  ds.source_ = dir.string();
  for (const auto& f : files) {
    ds.images_.push_back(load_image(f));
    ds.names_.push_back(f.filename().string());
  }
  return ds;
}

ImageDataset ImageDataset::from_images(std::vector<torch::Tensor> images, std::vector<std::string> names) {
  ImageDataset ds;
  ds.source_ = "memory";
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& img = images[i];
    if (img.dim() != 3 || img.size(0) != 3) throw ShapeError("dataset images must be (3,h,w)");
    ds.images_.push_back(img.to(torch::kFloat32).contiguous());
    ds.names_.push_back(i < names.size() ? names[i] : "image" + std::to_string(i));
  }
  return ds;
}

ImageBatch ImageDataset::fixed_crops(int count, int h, int w, std::uint64_t seed) const {
  if (images_.empty()) throw DataError("dataset is empty");
  if (count < 1) throw ConfigError("crop count must be >= 1");
  std::vector<torch::Tensor> crops;
  crops.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const auto& img = images_[static_cast<std::size_t>(i) % images_.size()];
    crops.push_back(crop_at(img, derive_seed(seed, "heldout.crop", static_cast<std::uint64_t>(i)), h, w));
  }
  return ImageBatch{torch::stack(crops)};
}

CropSampler::CropSampler(const ImageDataset& data, int height, int width, std::uint64_t seed)
    : data_(&data), height_(height), width_(width), seed_(seed) {
  if (data.empty()) throw DataError("training dataset is empty");
  order_.resize(data.size());
  reshuffle();
}

void CropSampler::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  std::mt19937_64 rng(derive_seed(seed_, "epoch", static_cast<std::uint64_t>(epoch_)));
  std::shuffle(order_.begin(), order_.end(), rng);
  cursor_ = 0;
}

ImageBatch CropSampler::next(int batch) {
  std::vector<torch::Tensor> crops;
  crops.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    const auto& img = data_->image(order_[cursor_++]);
    crops.push_back(crop_at(img, derive_seed(seed_, "crop", drawn_++), height_, width_));
  }
  return ImageBatch{torch::stack(crops)};
}

torch::Tensor center_fit(const torch::Tensor& image, int height, int width) {
  auto out = torch::zeros({3, height, width}, image.options());
  const auto h = image.size(1);
  const auto w = image.size(2);
  const auto copy_h = std::min<std::int64_t>(h, height);
  const auto copy_w = std::min<std::int64_t>(w, width);
  const auto src_top = (h - copy_h) / 2;
  const auto src_left = (w - copy_w) / 2;
  const auto dst_top = (height - copy_h) / 2;
  const auto dst_left = (width - copy_w) / 2;
  out.slice(1, dst_top, dst_top + copy_h)
      .slice(2, dst_left, dst_left + copy_w)
      .copy_(image.slice(1, src_top, src_top + copy_h).slice(2, src_left, src_left + copy_w));
  return out;
}

}  // namespace end2::training
