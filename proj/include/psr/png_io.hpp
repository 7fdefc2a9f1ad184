#pragma once

#include <string>

#include "psr/image.hpp"

namespace psr {

// 8-bit PNG <-> unit-range tensors. RGB images and grayscale masks only;
// anything else (16-bit, palette, alpha) is rejected.
ImageTensor load_image(const std::string& path);
void save_image(const ImageTensor& img, const std::string& path);

// Grayscale mask raster; load thresholds at 128.
ShadowMask load_mask(const std::string& path);
void save_mask(const ShadowMask& mask, const std::string& path);

}  // namespace psr
