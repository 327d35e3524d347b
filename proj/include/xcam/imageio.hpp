#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xcam/tensor.hpp"

namespace xcam {

struct RgbImage {
    int h = 0, w = 0;
    std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major
};

// 8-bit grayscale readers; pixel values returned as doubles in [0, 255].
Grid read_pgm(const std::string& path);
Grid read_png_gray(const std::string& path);
// Dispatches on file magic (P5 vs PNG signature).
Grid load_image(const std::string& path);

void write_pgm(const std::string& path, int h, int w, const std::uint8_t* data);
void write_ppm(const std::string& path, const RgbImage& img);

// round(255 * v) per pixel; input expected in [0, 1].
std::vector<std::uint8_t> quantize_unit(const Grid& g);

} // namespace xcam
