#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/types.h>

#include "end2/core/types.hpp"

namespace end2::training {

/// In-memory collection of decoded (3, h, w) float32 images.
class ImageDataset {
 public:
  /// Loads every image file in `dir`. Files are sorted by name, then shuffled
  /// with `seed`. Throws DataError when the directory is missing or empty.
  static ImageDataset from_directory(const std::filesystem::path& dir, std::uint64_t seed);
  static ImageDataset from_images(std::vector<torch::Tensor> images, std::vector<std::string> names = {});

  std::size_t size() const noexcept { return images_.size(); }
  bool empty() const noexcept { return images_.empty(); }
  const torch::Tensor& image(std::size_t i) const { return images_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::string& source() const noexcept { return source_; }

  /// `count` crops of h x w at seeded positions, cycling over the images.
  /// Used as a fixed held-out evaluation set.
  ImageBatch fixed_crops(int count, int h, int w, std::uint64_t seed) const;

 private:
  std::vector<torch::Tensor> images_;
  std::vector<std::string> names_;
  std::string source_;
};

/// Endless stream of random training crops. Each epoch visits the images in a
/// fresh seeded permutation; crop offsets are drawn per sample.
class CropSampler {
 public:
  CropSampler(const ImageDataset& data, int height, int width, std::uint64_t seed);

  ImageBatch next(int batch);
  std::int64_t epoch() const noexcept { return epoch_; }

 private:
  void reshuffle();

  const ImageDataset* data_;
  int height_;
  int width_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t epoch_ = 0;
  std::uint64_t drawn_ = 0;
};

/// Centre crop (or zero pad) a (3, h, w) image to the requested size.
torch::Tensor center_fit(const torch::Tensor& image, int height, int width);

}  // namespace end2::training
