#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spaformer/tensor.hpp"

namespace spaformer {

/// 8-bit image with interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes any PNG to gray or RGB, keeping the file's own color type.
/// Alpha is dropped; 16-bit samples are reduced to 8 bits.
Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& image);

/// (1, C, H, W) with values in [0, 255].
Tensor<float> image_to_tensor(const Image8& image);
/// Rounds to nearest and clamps to [0, 255]. Accepts 1 or 3 channels.
Image8 tensor_to_image(const Tensor<float>& t);

}  // namespace spaformer
