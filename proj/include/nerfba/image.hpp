#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nerfba {

// Row-major interleaved RGB, values in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0.0) {}

    double& at(int x, int y, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Binary PPM (P6, maxval 255), rounding to nearest with clamping to [0, 1].
// This is the on-disk 8-bit format for datasets and rendered output; the
// exact byte layout is documented in the README.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

// Binary PGM (P5, maxval 255) of a single channel in [0, 1] (depth maps).
void write_pgm(const std::vector<double>& gray, int width, int height, const std::string& path);

uint8_t quantize8(double v);

}  // namespace nerfba
