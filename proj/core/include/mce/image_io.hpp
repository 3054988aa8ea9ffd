#pragma once

#include <string>

#include "mce/tensor.hpp"

namespace mce {

/// 8-bit binary PPM (P6). Values are clamped to [0,1] and scaled to 255.
void write_ppm(const std::string& path, const Tensor& image);

/// 8-bit binary PGM (P5); a binary mask maps {0,1} to {0,255}.
void write_pgm(const std::string& path, const Tensor& gray);

/// Reads a P6 file to [3xHxW] in [0,1].
Tensor read_ppm(const std::string& path);

/// Reads a P5 file to [HxW] in [0,1]; threshold_binary maps >=0.5 to 1.
Tensor read_pgm(const std::string& path, bool threshold_binary = false);

}  // namespace mce
