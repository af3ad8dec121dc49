#pragma once

#include <string>

#include "asl/tensor.hpp"

namespace asl {

// Binary PPM (P6) and PGM (P5), 8-bit. Pixels are scaled to [0,1] on read
// and quantized back to 8 bits on write.
Tensor read_image(const std::string& path);  // -> {H,W,3} or {H,W,1}
void write_ppm(const std::string& path, const Tensor& image);

}  // namespace asl
