#pragma once

// Image codecs and drawing for annotated outputs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lpr/bbox.hpp"
#include "lpr/font.hpp"
#include "lpr/image.hpp"

namespace lpr {

/// Binary portable pixmap (P6, maxval 255). Throws DataError on malformed input.
Image decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);

/// True when the build links libpng.
bool png_supported();
Image decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image& image);

/// Format chosen from the file signature. Throws DataError when the file is
/// unreadable, the format is unsupported or the content is malformed.
Image load_image(const std::filesystem::path& path);
/// Format chosen from the extension (.ppm or .png).
void save_image(const Image& image, const std::filesystem::path& path);

using Rgb = std::array<std::uint8_t, 3>;

void fill_rect(Image& image, int x0, int y0, int x1, int y1, Rgb color);
void draw_box(Image& image, const BBox& box, Rgb color, int thickness = 2);
/// Each bitmap pixel becomes a scale x scale block; unknown characters are skipped.
void draw_text(Image& image, int x, int y, std::string_view text, Rgb color, int scale = 2,
               const BitmapFont& font = BitmapFont::builtin());

struct Annotation {
    BBox box;
    std::string label;
};

/// Copy of the image with every box outlined and its label drawn above it.
Image annotate(const Image& image, std::span<const Annotation> annotations, Rgb color = {255, 32, 32});

}  // namespace lpr
