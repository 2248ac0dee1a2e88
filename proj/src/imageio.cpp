#include "lpr/imageio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#ifdef LPR_HAVE_PNG
#include <png.h>
#endif

#include "lpr/error.hpp"

namespace lpr {

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    // Skips whitespace and '#' comments, then reads a decimal number.
    long number(const char* what)
    {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
        long v = 0;
        std::size_t digits = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_++] - '0');
            if (++digits > 9) throw DataError(std::string("ppm: ") + what + " too large");
        }
        if (digits == 0) throw DataError(std::string("ppm: missing ") + what);
        return v;
    }
    std::size_t& pos() { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

bool has_png_signature(std::span<const std::uint8_t> b)
{
    static constexpr std::uint8_t sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    return b.size() >= 8 && std::equal(std::begin(sig), std::end(sig), b.begin());
}

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw DataError("ppm: missing P6 signature");
    HeaderReader r(bytes.subspan(2));
    const long w = r.number("width");
    const long h = r.number("height");
    const long maxval = r.number("maxval");
    if (w < 1 || h < 1) throw DataError("ppm: image dimensions must be positive");
    if (maxval != 255) throw DataError("ppm: only maxval 255 is supported");
    std::size_t pos = r.pos() + 2;
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw DataError("ppm: truncated header");
    ++pos;
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
    if (bytes.size() - pos < need) throw DataError("ppm: pixel data truncated");
    Image img(static_cast<int>(w), static_cast<int>(h));
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), need, img.pixels.begin());
    return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& image)
{
    if (image.empty()) throw ArgumentError("encode_ppm: empty image");
    const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

#ifdef LPR_HAVE_PNG

bool png_supported() { return true; }

Image decode_png(std::span<const std::uint8_t> bytes)
{
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw DataError("png: " + msg);
    }
    png.format = PNG_FORMAT_RGB;
    if (png.width < 1 || png.height < 1 || png.width > 1u << 15 || png.height > 1u << 15) {
        png_image_free(&png);
        throw DataError("png: unsupported dimensions");
    }
    Image img(static_cast<int>(png.width), static_cast<int>(png.height));
    if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw DataError("png: " + msg);
    }
    return img;
}

std::vector<std::uint8_t> encode_png(const Image& image)
{
    if (image.empty()) throw ArgumentError("encode_png: empty image");
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
        throw DataError(std::string("png: ") + png.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
        throw DataError(std::string("png: ") + png.message);
    }
    out.resize(size);
    return out;
}

#else

bool png_supported() { return false; }
Image decode_png(std::span<const std::uint8_t>) { throw DataError("png support not built"); }
std::vector<std::uint8_t> encode_png(const Image&) { throw DataError("png support not built"); }

#endif

Image load_image(const std::filesystem::path& path)
{
    const auto bytes = read_file(path);
    try {
        if (has_png_signature(bytes)) return decode_png(bytes);
        if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    throw DataError(path.string() + ": unsupported image format");
}

void save_image(const Image& image, const std::filesystem::path& path)
{
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ppm") {
        write_file(path, encode_ppm(image));
    } else if (ext == ".png") {
        write_file(path, encode_png(image));
    } else {
        throw DataError("unsupported image extension '" + ext + "'");
    }
}

void fill_rect(Image& image, int x0, int y0, int x1, int y1, Rgb color)
{
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, image.width);
    y1 = std::min(y1, image.height);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) std::copy(color.begin(), color.end(), image.at(x, y));
    }
}

void draw_box(Image& image, const BBox& box, Rgb color, int thickness)
{
    const int x0 = static_cast<int>(std::lround(box.x1())), y0 = static_cast<int>(std::lround(box.y1()));
    const int x1 = static_cast<int>(std::lround(box.x2())), y1 = static_cast<int>(std::lround(box.y2()));
    fill_rect(image, x0, y0, x1, y0 + thickness, color);
    fill_rect(image, x0, y1 - thickness, x1, y1, color);
    fill_rect(image, x0, y0, x0 + thickness, y1, color);
    fill_rect(image, x1 - thickness, y0, x1, y1, color);
}

void draw_text(Image& image, int x, int y, std::string_view text, Rgb color, int scale, const BitmapFont& font)
{
    for (char c : text) {
        const auto g = font.glyph(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        if (g) {
            for (int r = 0; r < GlyphBitmap::kRows; ++r) {
                for (int col = 0; col < GlyphBitmap::kCols; ++col) {
                    if (!g->ink(col, r)) continue;
                    fill_rect(image, x + col * scale, y + r * scale, x + (col + 1) * scale, y + (r + 1) * scale, color);
                }
            }
        }
        x += (GlyphBitmap::kCols + 1) * scale;
    }
}

Image annotate(const Image& image, std::span<const Annotation> annotations, Rgb color)
{
    Image out = image;
    for (const auto& a : annotations) {
        draw_box(out, a.box, color);
        const int ty = static_cast<int>(std::lround(a.box.y1())) - 2 * GlyphBitmap::kRows - 3;
        draw_text(out, static_cast<int>(std::lround(a.box.x1())), std::max(ty, 0), a.label, color);
    }
    return out;
}

}  // namespace lpr
