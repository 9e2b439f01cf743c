#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmcd/tensor.hpp"

namespace mmcd {

// 8-bit image buffer; channels is 1 (gray) or 3 (rgb), row-major, interleaved.
struct Image8 {
    long width = 0;
    long height = 0;
    long channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(long y, long x, long c) {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    std::uint8_t at(long y, long x, long c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
};

void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

// round(255 x) quantization of a (C,H,W) tensor in [0,1].
Image8 quantize_chw(const Tensor& t);
// Back to (C,H,W) doubles in [0,1].
Tensor dequantize_chw(const Image8& img);

}  // namespace mmcd
