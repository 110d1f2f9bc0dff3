#include "spaformer/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "spaformer/errors.hpp"

namespace spaformer {

Image8 read_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
    throw IoError(path, std::string("cannot decode PNG: ") + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr) == 0) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError(path, "cannot decode PNG: " + msg);
  }
  return out;
}

void write_png(const std::string& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ContractViolation("write_png: expected 1 or 3 channels, got " + std::to_string(image.channels));
  }
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw ContractViolation("write_png: pixel buffer does not match " + std::to_string(image.width) + "x" +
                            std::to_string(image.height));
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr) == 0) {
    throw IoError(path, std::string("cannot write PNG: ") + img.message);
  }
}

Tensor<float> image_to_tensor(const Image8& image) {
  const std::size_t c = image.channels, h = image.height, w = image.width;
  Tensor<float> t(Shape{1, c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    float* plane = t.plane(0, ch);
    for (std::size_t i = 0; i < h * w; ++i) plane[i] = static_cast<float>(image.pixels[i * c + ch]);
  }
  return t;
}

Image8 tensor_to_image(const Tensor<float>& t) {
  const Shape s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw ContractViolation("tensor_to_image: expected (1, 1|3, H, W), got " + s.str());
  }
  Image8 out;
  out.width = s.w;
  out.height = s.h;
  out.channels = s.c;
  out.pixels.resize(s.numel());
  for (std::size_t ch = 0; ch < s.c; ++ch) {
    const float* plane = t.plane(0, ch);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const float v = std::isnan(plane[i]) ? 0.0f : std::clamp(std::round(plane[i]), 0.0f, 255.0f);
      out.pixels[i * s.c + ch] = static_cast<std::uint8_t>(v);
    }
  }
  return out;
}

}  // namespace spaformer
