#pragma once

#include <string>

#include "bevloc/tensor.hpp"

namespace bevloc::map {

// 8-bit PNG <-> float tensors in [0,1]. Values quantize as round(255*v), so a
// save/load cycle of already-quantized data is bit-exact.
nn::Tensor read_png_rgb(const std::string& path);                   // {3,H,W}
void write_png_rgb(const std::string& path, const nn::Tensor& img);  // {3,H,W}
void write_png_gray(const std::string& path, const nn::Tensor& img); // {H,W}

}  // namespace bevloc::map
