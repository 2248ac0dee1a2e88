#pragma once

#include <cstdint>
#include <vector>

#include "lpr/tensor.hpp"

namespace lpr {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0);

    bool empty() const noexcept { return width <= 0 || height <= 0; }
    std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
    const std::uint8_t* at(int x, int y) const { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear resample of the source window [x0, x0 + src_w) x [y0, y0 + src_h)
/// into a 1 x 3 x out_h x out_w tensor with values in [0, 1]. Pixel centres are
/// aligned (half-pixel convention); samples outside the image clamp to the edge.
TensorF resample_window(const Image& image, double x0, double y0, double src_w, double src_h, int out_w, int out_h);

}  // namespace lpr
