#include "lpr/image.hpp"

#include <algorithm>
#include <cmath>

#include "lpr/error.hpp"

namespace lpr {

Image::Image(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0) * 3, fill)
{
}

TensorF resample_window(const Image& image, double x0, double y0, double src_w, double src_h, int out_w, int out_h)
{
    if (image.empty()) throw ArgumentError("resample_window: empty image");
    if (out_w < 1 || out_h < 1 || !(src_w > 0) || !(src_h > 0)) throw ArgumentError("resample_window: bad size");
    auto out = TensorF::zeros({1, 3, out_h, out_w});
    auto dst = out.data();
    const double sx = src_w / out_w, sy = src_h / out_h;
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;

    // Horizontal taps are shared by every row.
    std::vector<int> xa(static_cast<std::size_t>(out_w)), xb(xa.size());
    std::vector<float> fx(xa.size());
    for (int x = 0; x < out_w; ++x) {
        double u = x0 + (x + 0.5) * sx - 0.5;
        u = std::clamp(u, 0.0, image.width - 1.0);
        const int u0 = static_cast<int>(std::floor(u));
        xa[x] = u0;
        xb[x] = std::min(u0 + 1, image.width - 1);
        fx[x] = static_cast<float>(u - u0);
    }
    for (int y = 0; y < out_h; ++y) {
        double v = y0 + (y + 0.5) * sy - 0.5;
        v = std::clamp(v, 0.0, image.height - 1.0);
        const int v0 = static_cast<int>(std::floor(v));
        const int v1 = std::min(v0 + 1, image.height - 1);
        const float fy = static_cast<float>(v - v0);
        for (int x = 0; x < out_w; ++x) {
            const std::uint8_t* p00 = image.at(xa[x], v0);
            const std::uint8_t* p01 = image.at(xb[x], v0);
            const std::uint8_t* p10 = image.at(xa[x], v1);
            const std::uint8_t* p11 = image.at(xb[x], v1);
            for (int c = 0; c < 3; ++c) {
                const float top = p00[c] + (p01[c] - p00[c]) * fx[x];
                const float bot = p10[c] + (p11[c] - p10[c]) * fx[x];
                dst[c * plane + static_cast<std::size_t>(y) * out_w + x] = (top + (bot - top) * fy) / 255.0f;
            }
        }
    }
    return out;
}

}  // namespace lpr
