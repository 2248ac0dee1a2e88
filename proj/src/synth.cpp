#include "lpr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "lpr/error.hpp"
#include "lpr/imageio.hpp"

namespace lpr {

namespace {

using Rng = std::mt19937_64;

float uniform(Rng& rng, float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Rgb random_color(Rng& rng, int lo = 0, int hi = 255)
{
    return {static_cast<std::uint8_t>(uniform_int(rng, lo, hi)), static_cast<std::uint8_t>(uniform_int(rng, lo, hi)),
            static_cast<std::uint8_t>(uniform_int(rng, lo, hi))};
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f))); }

// Float RGB raster used to draw a plate in its own frame before warping it into the scene.
struct Raster {
    int width, height;
    std::vector<float> px;

    Raster(int w, int h) : width(w), height(h), px(static_cast<std::size_t>(w) * h * 3, 0.0f) {}
    float* at(int x, int y) { return &px[(static_cast<std::size_t>(y) * width + x) * 3]; }
    const float* at(int x, int y) const { return &px[(static_cast<std::size_t>(y) * width + x) * 3]; }

    void fill(float x0, float y0, float x1, float y1, const std::array<float, 3>& c)
    {
        const int a = std::max(0, static_cast<int>(std::floor(x0))), b = std::max(0, static_cast<int>(std::floor(y0)));
        const int e = std::min(width, static_cast<int>(std::ceil(x1))), f = std::min(height, static_cast<int>(std::ceil(y1)));
        for (int y = b; y < f; ++y) {
            for (int x = a; x < e; ++x) {
                // Fractional coverage along both axes.
                const float cov = std::clamp(std::min(x + 1.0f, x1) - std::max(x + 0.0f, x0), 0.0f, 1.0f) *
                                  std::clamp(std::min(y + 1.0f, y1) - std::max(y + 0.0f, y0), 0.0f, 1.0f);
                float* p = at(x, y);
                for (int k = 0; k < 3; ++k) p[k] = p[k] * (1 - cov) + c[static_cast<std::size_t>(k)] * cov;
            }
        }
    }

    // Bilinear sample with pixel centres at integer + 0.5; edges clamp.
    std::array<float, 3> sample(float x, float y) const
    {
        x = std::clamp(x - 0.5f, 0.0f, static_cast<float>(width - 1));
        y = std::clamp(y - 0.5f, 0.0f, static_cast<float>(height - 1));
        const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
        const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
        const float fx = x - x0, fy = y - y0;
        std::array<float, 3> out{};
        for (int k = 0; k < 3; ++k) {
            const float top = at(x0, y0)[k] * (1 - fx) + at(x1, y0)[k] * fx;
            const float bot = at(x0, y1)[k] * (1 - fx) + at(x1, y1)[k] * fx;
            out[static_cast<std::size_t>(k)] = top * (1 - fy) + bot * fy;
        }
        return out;
    }
};

struct LocalGlyph {
    int class_id;
    // Ink bounds in the plate frame.
    float x0, y0, x1, y1;
};

// Draws the bitmap scaled into [x0, x0 + w) x [y0, y0 + h) and returns its ink bounds.
LocalGlyph draw_glyph(Raster& r, const GlyphBitmap& g, int class_id, float x0, float y0, float w, float h,
                      const std::array<float, 3>& ink)
{
    const float cw = w / GlyphBitmap::kCols, ch = h / GlyphBitmap::kRows;
    for (int row = 0; row < GlyphBitmap::kRows; ++row) {
        for (int col = 0; col < GlyphBitmap::kCols; ++col) {
            if (g.ink(col, row)) r.fill(x0 + col * cw, y0 + row * ch, x0 + (col + 1) * cw, y0 + (row + 1) * ch, ink);
        }
    }
    const auto e = g.extent();
    return {class_id, x0 + e.col0 * cw, y0 + e.row0 * ch, x0 + e.col1 * cw, y0 + e.row1 * ch};
}

struct Placement {
    float cx, cy, theta;
    BBox bounds;
};

BBox rotated_bounds(float cx, float cy, float theta, float lx0, float ly0, float lx1, float ly1, float pw, float ph)
{
    const float c = std::cos(theta), s = std::sin(theta);
    float xs[4], ys[4];
    const float lx[4] = {lx0, lx1, lx1, lx0}, ly[4] = {ly0, ly0, ly1, ly1};
    for (int i = 0; i < 4; ++i) {
        const float dx = lx[i] - pw / 2, dy = ly[i] - ph / 2;
        xs[i] = cx + c * dx - s * dy;
        ys[i] = cy + s * dx + c * dy;
    }
    return BBox::from_corners(*std::min_element(xs, xs + 4), *std::min_element(ys, ys + 4),
                              *std::max_element(xs, xs + 4), *std::max_element(ys, ys + 4));
}

bool overlaps(const BBox& a, const BBox& b, float margin)
{
    return a.x1() - margin < b.x2() && b.x1() - margin < a.x2() && a.y1() - margin < b.y2() && b.y1() - margin < a.y2();
}

void draw_background(Image& img, Rng& rng, const SynthConfig& cfg)
{
    const Rgb top = random_color(rng, 30, 220), bottom = random_color(rng, 30, 220);
    for (int y = 0; y < img.height; ++y) {
        const float t = img.height > 1 ? static_cast<float>(y) / (img.height - 1) : 0.0f;
        for (int x = 0; x < img.width; ++x) {
            auto* p = img.at(x, y);
            for (int k = 0; k < 3; ++k) p[k] = to_byte(top[static_cast<std::size_t>(k)] * (1 - t) + bottom[static_cast<std::size_t>(k)] * t);
        }
    }
    for (int i = 0; i < cfg.clutter_shapes; ++i) {
        const int w = uniform_int(rng, 4, std::max(5, img.width / 4)), h = uniform_int(rng, 4, std::max(5, img.height / 4));
        const int x = uniform_int(rng, -w / 2, img.width - w / 2), y = uniform_int(rng, -h / 2, img.height - h / 2);
        if (uniform_int(rng, 0, 2) == 0) {
            // Thin stroke.
            if (w > h) {
                fill_rect(img, x, y, x + w, y + uniform_int(rng, 1, 3), random_color(rng));
            } else {
                fill_rect(img, x, y, x + uniform_int(rng, 1, 3), y + h, random_color(rng));
            }
        } else {
            fill_rect(img, x, y, x + w, y + h, random_color(rng));
        }
    }
}

}  // namespace

void SynthConfig::validate() const
{
    if (canvas_width < 1 || canvas_height < 1) throw ArgumentError("canvas dimensions must be positive");
    if (min_plates < 1 || max_plates < min_plates || max_plates > 3) {
        throw ArgumentError("plates per image must satisfy 1 <= min <= max <= 3");
    }
    if (!(min_plate_width > 0 && max_plate_width >= min_plate_width)) throw ArgumentError("bad plate width range");
    if (!(plate_aspect >= 1)) throw ArgumentError("plate_aspect must be >= 1");
    if (!(max_rotation_deg >= 0 && max_rotation_deg <= 15)) throw ArgumentError("max_rotation_deg must lie in [0, 15]");
    if (!(min_brightness > 0 && max_brightness >= min_brightness)) throw ArgumentError("bad brightness range");
    if (clutter_shapes < 0 || distractor_strings < 0) throw ArgumentError("clutter counts must be non-negative");
    const auto b = rotated_bounds(0, 0, static_cast<float>(max_rotation_deg * std::numbers::pi / 180), 0, 0,
                                  max_plate_width, max_plate_width / plate_aspect, max_plate_width,
                                  max_plate_width / plate_aspect);
    if (b.w + 4 > static_cast<float>(canvas_width) || b.h + 4 > static_cast<float>(canvas_height)) {
        throw ArgumentError("canvas " + std::to_string(canvas_width) + "x" + std::to_string(canvas_height) +
                            " too small for plates up to " + std::to_string(max_plate_width) + " px wide");
    }
    CharClassTable table(letters);
}

SyntheticScene generate_scene(const SynthConfig& cfg, std::uint64_t seed, int letter_hint, const BitmapFont& font)
{
    cfg.validate();
    const CharClassTable table(cfg.letters);
    Rng rng(seed);
    SyntheticScene scene;
    scene.seed = seed;
    scene.image = Image(cfg.canvas_width, cfg.canvas_height);
    draw_background(scene.image, rng, cfg);

    // Choose plate sizes and non-overlapping placements first.
    const int count = uniform_int(rng, cfg.min_plates, cfg.max_plates);
    struct Planned {
        int pw, ph;
        Placement at;
    };
    std::vector<Planned> planned;
    for (int k = 0; k < count; ++k) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            const float width = uniform(rng, cfg.min_plate_width, cfg.max_plate_width);
            const float aspect = cfg.plate_aspect * uniform(rng, 0.95f, 1.05f);
            const int pw = std::max(8, static_cast<int>(std::lround(width)));
            const int ph = std::max(4, static_cast<int>(std::lround(width / aspect)));
            const float theta = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg) * std::numbers::pi_v<float> / 180;
            const auto local = rotated_bounds(0, 0, theta, 0, 0, static_cast<float>(pw), static_cast<float>(ph),
                                              static_cast<float>(pw), static_cast<float>(ph));
            const float lo_x = local.w / 2 + 2, hi_x = cfg.canvas_width - local.w / 2 - 2;
            const float lo_y = local.h / 2 + 2, hi_y = cfg.canvas_height - local.h / 2 - 2;
            if (hi_x < lo_x || hi_y < lo_y) continue;
            const float cx = uniform(rng, lo_x, hi_x), cy = uniform(rng, lo_y, hi_y);
            const auto bounds = rotated_bounds(cx, cy, theta, 0, 0, static_cast<float>(pw), static_cast<float>(ph),
                                               static_cast<float>(pw), static_cast<float>(ph));
            const bool clash = std::any_of(planned.begin(), planned.end(),
                                           [&](const Planned& p) { return overlaps(p.at.bounds, bounds, 0.6f * ph); });
            if (clash) continue;
            planned.push_back({pw, ph, {cx, cy, theta, bounds}});
            break;
        }
    }
    if (static_cast<int>(planned.size()) < count) {
        throw ArgumentError("canvas too small to place " + std::to_string(count) + " plates");
    }

    // Vehicle-like bodies behind the plates, then distractor marks.
    for (const auto& p : planned) {
        const float bw = p.at.bounds.w * uniform(rng, 1.6f, 2.6f), bh = p.at.bounds.h * uniform(rng, 2.5f, 5.0f);
        const float bx = p.at.cx - bw * uniform(rng, 0.35f, 0.65f), by = p.at.cy - bh * uniform(rng, 0.3f, 0.7f);
        fill_rect(scene.image, static_cast<int>(bx), static_cast<int>(by), static_cast<int>(bx + bw),
                  static_cast<int>(by + bh), random_color(rng, 10, 200));
    }
    for (int i = 0; i < cfg.distractor_strings; ++i) {
        std::string s;
        const int n = uniform_int(rng, 2, 6);
        for (int j = 0; j < n; ++j) s.push_back(table[uniform_int(rng, 0, table.size() - 1)].glyph);
        const int scale = uniform_int(rng, 1, 3);
        const int x = uniform_int(rng, 0, std::max(0, cfg.canvas_width - n * 6 * scale));
        const int y = uniform_int(rng, 0, std::max(0, cfg.canvas_height - 7 * scale));
        BBox mark = BBox::from_corners(static_cast<float>(x), static_cast<float>(y), static_cast<float>(x + n * 6 * scale),
                                       static_cast<float>(y + 7 * scale));
        const bool clash = std::any_of(planned.begin(), planned.end(),
                                       [&](const Planned& p) { return overlaps(p.at.bounds, mark, 4.0f); });
        if (!clash) draw_text(scene.image, x, y, s, random_color(rng));
    }

    for (int k = 0; k < count; ++k) {
        const auto& p = planned[static_cast<std::size_t>(k)];
        const float pw = static_cast<float>(p.pw), ph = static_cast<float>(p.ph);
        const float bright = uniform(rng, cfg.min_brightness, cfg.max_brightness);
        const float base = uniform(rng, 215.0f, 250.0f);
        Raster r(p.pw, p.ph);
        r.fill(0, 0, pw, ph, {base, base, base * uniform(rng, 0.96f, 1.0f)});
        const float border = std::max(1.0f, ph / 22);
        const std::array<float, 3> dark{25, 25, 30};
        r.fill(0, 0, pw, border, dark);
        r.fill(0, ph - border, pw, ph, dark);
        r.fill(0, 0, border, ph, dark);
        r.fill(pw - border, 0, pw, ph, dark);
        r.fill(border, border, 0.09f * pw, ph - border, {25, 60, 170});
        r.fill(0.772f * pw, border, 0.772f * pw + border, ph - border, dark);

        // Glyph classes: two digits, the letter, five digits.
        int letter;
        if (letter_hint >= 0) {
            letter = 10 + (letter_hint + k) % 15;
        } else {
            letter = 10 + uniform_int(rng, 0, 14);
        }
        std::array<int, 8> ids{};
        for (int i = 0; i < 8; ++i) ids[static_cast<std::size_t>(i)] = i == 2 ? letter : uniform_int(rng, 0, 9);

        const std::array<float, 3> ink{uniform(rng, 5, 45), uniform(rng, 5, 45), uniform(rng, 5, 45)};
        std::vector<LocalGlyph> glyphs;
        const float main_x0 = 0.11f * pw, main_x1 = 0.76f * pw, slot = (main_x1 - main_x0) / 6;
        const float gh = 0.62f * ph, gy = (ph - gh) / 2;
        for (int i = 0; i < 6; ++i) {
            const float gw = slot * (i == 2 ? 0.8f : 0.68f);
            const float gx = main_x0 + slot * i + (slot - gw) / 2;
            const auto bitmap = font.glyph(table[ids[static_cast<std::size_t>(i)]].glyph);
            if (!bitmap) throw ArgumentError(std::string("font lacks glyph '") + table[ids[static_cast<std::size_t>(i)]].glyph + "'");
            glyphs.push_back(draw_glyph(r, *bitmap, ids[static_cast<std::size_t>(i)], gx, gy, gw, gh, ink));
        }
        const float reg_x0 = 0.79f * pw, reg_slot = (0.97f * pw - reg_x0) / 2;
        const float rh = 0.5f * ph, ry = 0.3f * ph;
        for (int i = 6; i < 8; ++i) {
            const float gw = reg_slot * 0.72f;
            const float gx = reg_x0 + reg_slot * (i - 6) + (reg_slot - gw) / 2;
            const auto bitmap = font.glyph(table[ids[static_cast<std::size_t>(i)]].glyph);
            if (!bitmap) throw ArgumentError("font lacks a digit glyph");
            glyphs.push_back(draw_glyph(r, *bitmap, ids[static_cast<std::size_t>(i)], gx, ry, gw, rh, ink));
        }

        // Lighting: overall factor with a mild left-right gradient.
        const float g0 = uniform(rng, 0.85f, 1.0f), g1 = uniform(rng, 0.85f, 1.0f);
        for (int y = 0; y < p.ph; ++y) {
            for (int x = 0; x < p.pw; ++x) {
                const float f = bright * (g0 + (g1 - g0) * (x + 0.5f) / pw);
                float* px = r.at(x, y);
                for (int c = 0; c < 3; ++c) px[c] *= f;
            }
        }

        // Warp into the scene with coverage-weighted edges.
        const float c = std::cos(p.at.theta), s = std::sin(p.at.theta);
        const auto& bb = p.at.bounds;
        const int x0 = std::max(0, static_cast<int>(std::floor(bb.x1())) - 1);
        const int y0 = std::max(0, static_cast<int>(std::floor(bb.y1())) - 1);
        const int x1 = std::min(cfg.canvas_width, static_cast<int>(std::ceil(bb.x2())) + 1);
        const int y1 = std::min(cfg.canvas_height, static_cast<int>(std::ceil(bb.y2())) + 1);
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const float dx = x + 0.5f - p.at.cx, dy = y + 0.5f - p.at.cy;
                const float lx = c * dx + s * dy + pw / 2, ly = -s * dx + c * dy + ph / 2;
                const float alpha = std::clamp(std::min({lx, pw - lx, ly, ph - ly}) + 0.5f, 0.0f, 1.0f);
                if (alpha <= 0) continue;
                const auto col = r.sample(lx, ly);
                auto* q = scene.image.at(x, y);
                for (int k2 = 0; k2 < 3; ++k2) q[k2] = to_byte(col[static_cast<std::size_t>(k2)] * alpha + q[k2] * (1 - alpha));
            }
        }

        PlateTruth truth;
        truth.box = bb;
        for (const auto& g : glyphs) {
            const auto sb = rotated_bounds(p.at.cx, p.at.cy, p.at.theta, g.x0, g.y0, g.x1, g.y1, pw, ph);
            truth.chars.push_back({g.class_id, BBox{sb.cx - bb.x1(), sb.cy - bb.y1(), sb.w, sb.h}});
            truth.text.push_back(table[g.class_id].glyph);
        }
        scene.plates.push_back(std::move(truth));
    }
    return scene;
}

std::vector<SyntheticScene> generate_corpus(const SynthConfig& config, int count, std::uint64_t seed)
{
    if (count < 0) throw ArgumentError("generate_corpus: negative count");
    std::vector<SyntheticScene> out;
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(count));
    Rng master(seed);
    for (auto& s : seeds) s = master();
    for (int i = 0; i < count; ++i) {
        out.push_back(generate_scene(config, seeds[static_cast<std::size_t>(i)], (i * config.max_plates) % 15));
    }
    return out;
}

double signal_power(const Image& image)
{
    if (image.pixels.empty()) return 0.0;
    double sum = 0;
    for (auto v : image.pixels) {
        const double x = v / 255.0;
        sum += x * x;
    }
    return sum / static_cast<double>(image.pixels.size());
}

double noise_sigma(double power, double snr_db)
{
    if (std::isnan(snr_db)) throw ArgumentError("noise: snr is NaN");
    if (std::isinf(snr_db) && snr_db > 0) return 0.0;
    return std::sqrt(power / std::pow(10.0, snr_db / 10.0));
}

Image add_gaussian_noise(const Image& image, double snr_db, std::uint64_t seed)
{
    const double sigma = noise_sigma(signal_power(image), snr_db);
    if (sigma == 0.0) return image;
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    Image out = image;
    for (auto& v : out.pixels) {
        const double x = std::clamp(v / 255.0 + n(rng), 0.0, 1.0);
        v = static_cast<std::uint8_t>(std::lround(x * 255.0));
    }
    return out;
}

std::vector<CharAnnotation> chars_in_window(const PlateTruth& plate, double x0, double y0, double w, double h,
                                            int out_w, int out_h)
{
    if (!(w > 0 && h > 0) || out_w < 1 || out_h < 1) throw ArgumentError("chars_in_window: empty window");
    const double sx = out_w / w, sy = out_h / h;
    std::vector<CharAnnotation> out;
    for (const auto& ch : plate.chars) {
        const double ax = ch.box.x1() + static_cast<double>(plate.box.x1()), ay = ch.box.y1() + static_cast<double>(plate.box.y1());
        const double bx = ch.box.x2() + static_cast<double>(plate.box.x1()), by = ch.box.y2() + static_cast<double>(plate.box.y1());
        const double u0 = (ax - x0) * sx, v0 = (ay - y0) * sy, u1 = (bx - x0) * sx, v1 = (by - y0) * sy;
        const double c0 = std::clamp(u0, 0.0, double(out_w)), d0 = std::clamp(v0, 0.0, double(out_h));
        const double c1 = std::clamp(u1, 0.0, double(out_w)), d1 = std::clamp(v1, 0.0, double(out_h));
        const double full = (u1 - u0) * (v1 - v0), kept = (c1 - c0) * (d1 - d0);
        if (full <= 0 || kept < 0.5 * full) continue;
        out.push_back({ch.class_id, BBox::from_corners(static_cast<float>(c0), static_cast<float>(d0),
                                                        static_cast<float>(c1), static_cast<float>(d1))});
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int count, double train_fraction, double test_fraction,
                                                            std::uint64_t seed)
{
    if (count < 0) throw ArgumentError("split: negative count");
    if (!(train_fraction >= 0 && test_fraction >= 0) || std::abs(train_fraction + test_fraction - 1.0) > 1e-9) {
        throw ArgumentError("split fractions must be non-negative and sum to 1");
    }
    std::vector<int> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(count * train_fraction));
    std::vector<int> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<int> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

}  // namespace lpr
