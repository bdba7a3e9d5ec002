#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/types.h>

namespace end2 {

/// Reads a common-format image file as a (3, h, w) float32 tensor in [0,1].
/// 8-bit files are divided by 255, 16-bit files by 65535; grey and alpha
/// channels are converted to RGB. Throws DataError on unreadable files.
torch::Tensor load_image(const std::filesystem::path& path);

/// Writes a (3, h, w) tensor in [0,1] as an 8-bit image; the format follows
/// the file extension.
void save_image(const torch::Tensor& image, const std::filesystem::path& path);

/// 8-bit quantisation used for file output and codecs: round(x * 255).
std::vector<std::uint8_t> to_rgb8(const torch::Tensor& image);

bool is_image_file(const std::filesystem::path& path);

}  // namespace end2
