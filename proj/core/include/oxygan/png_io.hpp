#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oxygan/tensor.hpp"

namespace oxygan {

// Minimal 8-bit PNG support (gray and RGB, non-interlaced) for the
// visualization path. The value/255 quantization makes it lossy by
// design; OXT1 is the exact format.
struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 = gray, 3 = rgb
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
  std::map<std::string, std::string> texts;  // tEXt chunks (read side)

  std::uint8_t& at(int y, int x, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

void png_write(const std::string& path, const PngImage& img,
               const std::map<std::string, std::string>& texts = {});
PngImage png_read(const std::string& path);

// CHW [0,1] tensor -> 8-bit image, round(255*v) with clamping
PngImage tensor_to_png(const Tensor& chw);
// 8-bit image -> CHW tensor, value/255
Tensor png_to_tensor(const PngImage& img);

}  // namespace oxygan
