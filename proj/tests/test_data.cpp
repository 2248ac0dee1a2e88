#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "lpr/error.hpp"
#include "lpr/imageio.hpp"
#include "lpr/labels.hpp"
#include "lpr/metrics.hpp"
#include "lpr/synth.hpp"

using namespace lpr;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("lpr_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ParseErrorKind parse_kind(std::string_view line)
{
    try {
        parse_yolo_label(line, 7);
    } catch (const ParseError& e) {
        CHECK(e.line() == 7);
        return e.kind();
    }
    FAIL("no error for '" << std::string(line) << "'");
    return ParseErrorKind::bad_class;
}

// "0.250000" -> "0.25", "1.000" -> "1".
std::string strip_zeros(std::string s)
{
    if (s.find('.') == std::string::npos) return s;
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    return s;
}

Image random_image(std::mt19937_64& rng, int w, int h)
{
    Image img(w, h);
    std::uniform_int_distribution<int> b(0, 255);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(b(rng));
    return img;
}

double luminance(const std::uint8_t* p) { return (p[0] + p[1] + p[2]) / 3.0; }

}  // namespace

TEST_CASE("yolo label parse example")
{
    const auto r = parse_yolo_label("0 0.5 0.5 0.2 0.1");
    CHECK(r.class_id == 0);
    CHECK(r.cx == 0.5f);
    CHECK(r.cy == 0.5f);
    CHECK(r.w == 0.2f);
    CHECK(r.h == 0.1f);
    CHECK(format_yolo_label(r) == "0 0.5 0.5 0.2 0.1");
}

TEST_CASE("yolo label errors are distinct and positioned")
{
    CHECK(parse_kind("0 1.5 0.5 0.2 0.1") == ParseErrorKind::out_of_range);
    CHECK(parse_kind("0 0.5 0.5 0.2") == ParseErrorKind::token_count);
    CHECK(parse_kind("0 0.5 0.5 0.2 0.1 9") == ParseErrorKind::token_count);
    CHECK(parse_kind("0 0.5 abc 0.2 0.1") == ParseErrorKind::non_numeric);
    CHECK(parse_kind("x 0.5 0.5 0.2 0.1") == ParseErrorKind::non_numeric);
    CHECK(parse_kind("0 0.5 0.5 0.2 nan") == ParseErrorKind::non_numeric);
    CHECK(parse_kind("-1 0.5 0.5 0.2 0.1") == ParseErrorKind::bad_class);
    try {
        parse_yolo_labels("0 0.5 0.5 0.2 0.1\n\n0 0.5 0.5 0.2\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("yolo label write of parse gives the normalized line")
{
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> cls(0, 30), digits(0, 6), mant(0, 999999), pad(0, 3);
    for (int i = 0; i < 1000; ++i) {
        std::string line = std::to_string(cls(rng));
        std::string expected = line;
        for (int k = 0; k < 4; ++k) {
            const int d = digits(rng);
            std::string tok;
            if (d == 0) {
                tok = pad(rng) == 0 ? "1" : "0";
            } else {
                const int limit = static_cast<int>(std::pow(10, d));
                std::string frac = std::to_string(mant(rng) % limit);
                frac.insert(0, static_cast<std::size_t>(d) - frac.size(), '0');
                tok = "0." + frac + std::string(static_cast<std::size_t>(pad(rng)), '0');
            }
            line += std::string(1 + static_cast<std::size_t>(pad(rng)), ' ') + tok;
            expected += " " + strip_zeros(tok);
        }
        CHECK(format_yolo_label(parse_yolo_label(line)) == expected);
    }
}

TEST_CASE("boxes past the border are clipped with a warning")
{
    const auto f = parse_yolo_labels("0 0.95 0.5 0.2 0.1\n0 0.5 0.5 0.2 0.1\n");
    REQUIRE(f.records.size() == 2);
    CHECK(f.warnings.size() == 1);
    CHECK(f.records[0].cx + f.records[0].w / 2 == doctest::Approx(1.0f));
    CHECK(f.records[0].w == doctest::Approx(0.15f));
}

TEST_CASE("character annotations round trip and validate")
{
    std::vector<CharAnnotation> chars{{3, BBox::from_corners(1.5f, 2, 10.25f, 20)}, {17, BBox::from_corners(12, 2, 20, 20)}};
    const auto text = format_char_annotations(chars);
    CHECK(text == "3 1.5 2 10.25 20\n17 12 2 20 20\n");
    const auto back = parse_char_annotations(text, 25, 30, 22);
    REQUIRE(back.size() == 2);
    CHECK(back[0].box == chars[0].box);
    CHECK(back[1].class_id == 17);
    CHECK_THROWS_AS(parse_char_annotations("25 1 1 2 2\n", 25, 30, 22), ParseError);
    CHECK_THROWS_AS(parse_char_annotations("1 1 1 40 2\n", 25, 30, 22), ParseError);
    CHECK_THROWS_AS(parse_char_annotations("1 5 1 2 2\n", 25, 30, 22), ParseError);
    CHECK_THROWS_AS(parse_char_annotations("1 1 1 2\n", 25, 30, 22), ParseError);
}

TEST_CASE("manifest round trip")
{
    std::vector<ManifestEntry> m{{"images/a.ppm", "labels/a.txt", Split::train, {"chars/a_0.chars", "chars/a_1.chars"}},
                                 {"images/b.ppm", "labels/b.txt", Split::test, {}}};
    const auto back = parse_manifest(format_manifest(m));
    REQUIRE(back.size() == 2);
    CHECK(back[0].chars == m[0].chars);
    CHECK(back[1].split == Split::test);
    CHECK(back[1].chars.empty());
    CHECK_THROWS_AS(parse_manifest("a\tb\tvalidation\t-\n"), ParseError);
    CHECK_THROWS_AS(parse_manifest("a\tb\n"), ParseError);
    CHECK(parse_manifest("").empty());
}

TEST_CASE("ppm and png round trips are lossless")
{
    std::mt19937_64 rng(1);
    const auto dir = scratch_dir("codec");
    for (auto [w, h] : {std::pair{1, 1}, std::pair{17, 5}, std::pair{64, 48}}) {
        const auto img = random_image(rng, w, h);
        save_image(img, dir / "x.ppm");
        CHECK(load_image(dir / "x.ppm") == img);
        CHECK(decode_ppm(encode_ppm(img)) == img);
        if (png_supported()) {
            save_image(img, dir / "x.png");
            CHECK(load_image(dir / "x.png") == img);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("corrupt or unsupported images raise data errors")
{
    auto bytes = [](std::string s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
    CHECK_THROWS_AS(decode_ppm(bytes("P5\n1 1\n255\n\x01")), DataError);
    CHECK_THROWS_AS(decode_ppm(bytes("P6\n# c\n2 2\n255\n\x01\x02")), DataError);
    CHECK_THROWS_AS(decode_ppm(bytes("P6\n0 2\n255\n")), DataError);
    CHECK_THROWS_AS(decode_ppm(bytes("P6\n2 x\n255\n")), DataError);
    CHECK_THROWS_AS(decode_ppm(bytes("P6\n1 1\n65535\n\x01\x02\x03")), DataError);
    CHECK_THROWS_AS(decode_ppm(bytes("P6\n99999999999 1\n255\n")), DataError);
    CHECK(decode_ppm(bytes("P6\n# comment\n1 1\n255\n\x01\x02\x03")).pixels == std::vector<std::uint8_t>{1, 2, 3});

    const auto dir = scratch_dir("corrupt");
    write_text_file(dir / "bad.ppm", "GIF89a....");
    CHECK_THROWS_AS(load_image(dir / "bad.ppm"), DataError);
    CHECK_THROWS_AS(load_image(dir / "missing.ppm"), DataError);
    if (png_supported()) {
        auto png = encode_png(Image(4, 4, 9));
        png.resize(30);
        CHECK_THROWS_AS(decode_png(png), DataError);
    }
    CHECK_THROWS_AS(save_image(Image(2, 2), dir / "x.bmp"), DataError);
    fs::remove_all(dir);
}

TEST_CASE("annotation draws boxes and labels")
{
    Image img(80, 60, 0);
    const Annotation a[] = {{BBox::from_corners(10, 30, 50, 50), "12"}};
    const auto out = annotate(img, a, {255, 0, 0});
    CHECK(out.at(10, 40)[0] == 255);
    CHECK(out.at(30, 40)[0] == 0);
    int lit = 0;
    for (int y = 0; y < 30; ++y) {
        for (int x = 0; x < 80; ++x) lit += out.at(x, y)[0] == 255;
    }
    CHECK(lit > 10);
    CHECK(img.at(10, 40)[0] == 0);
}

TEST_CASE("scene generation is deterministic")
{
    SynthConfig cfg;
    const auto a = generate_scene(cfg, 42), b = generate_scene(cfg, 42), c = generate_scene(cfg, 43);
    CHECK(a.image == b.image);
    REQUIRE(a.plates.size() == b.plates.size());
    for (std::size_t i = 0; i < a.plates.size(); ++i) {
        CHECK(a.plates[i].box == b.plates[i].box);
        CHECK(a.plates[i].text == b.plates[i].text);
        for (std::size_t k = 0; k < a.plates[i].chars.size(); ++k) CHECK(a.plates[i].chars[k].box == b.plates[i].chars[k].box);
    }
    CHECK_FALSE(a.image == c.image);
}

TEST_CASE("plates per image and layout")
{
    SynthConfig cfg;
    cfg.min_plates = cfg.max_plates = 2;
    const CharClassTable table;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = generate_scene(cfg, seed);
        REQUIRE(s.plates.size() == 2);
        for (const auto& p : s.plates) {
            REQUIRE(p.chars.size() == 8);
            REQUIRE(p.text.size() == 8);
            for (int i = 0; i < 8; ++i) {
                CHECK((table[p.chars[i].class_id].kind == GlyphKind::letter) == (i == 2));
                CHECK(table[p.chars[i].class_id].glyph == p.text[static_cast<std::size_t>(i)]);
                CHECK(p.chars[i].box.x1() >= -1e-3f);
                CHECK(p.chars[i].box.y1() >= -1e-3f);
                CHECK(p.chars[i].box.x2() <= p.box.w + 1e-3f);
                CHECK(p.chars[i].box.y2() <= p.box.h + 1e-3f);
                if (i > 0) CHECK(p.chars[i - 1].box.cx < p.chars[i].box.cx);
            }
            CHECK(p.box.x1() >= 0);
            CHECK(p.box.y1() >= 0);
            CHECK(p.box.x2() <= cfg.canvas_width);
            CHECK(p.box.y2() <= cfg.canvas_height);
        }
        CHECK(iou(s.plates[0].box, s.plates[1].box) == 0.0f);
    }
}

TEST_CASE("too small a canvas is rejected")
{
    SynthConfig cfg;
    cfg.canvas_width = 150;
    CHECK_THROWS_AS(generate_scene(cfg, 1), ArgumentError);
    cfg = {};
    cfg.max_plates = 4;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = {};
    cfg.letters = "ABC";
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("character boxes cover exactly the rendered ink")
{
    SynthConfig cfg;
    cfg.max_rotation_deg = 0;
    cfg.min_brightness = cfg.max_brightness = 1.0f;
    cfg.clutter_shapes = 0;
    cfg.distractor_strings = 0;
    cfg.min_plates = cfg.max_plates = 1;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto s = generate_scene(cfg, seed);
        const auto& p = s.plates[0];
        std::vector<BBox> boxes;
        for (const auto& c : p.chars) boxes.push_back(BBox{c.box.cx + p.box.x1(), c.box.cy + p.box.y1(), c.box.w, c.box.h});
        // Interior of the plate without border, flag strip and separator.
        const float margin = std::max(1.0f, p.box.h / 22) + 1.5f;
        for (int y = static_cast<int>(p.box.y1() + margin); y < static_cast<int>(p.box.y2() - margin); ++y) {
            for (int x = static_cast<int>(p.box.x1() + 0.09f * p.box.w + 1.5f); x < static_cast<int>(p.box.x2() - margin); ++x) {
                const float rel = (x + 0.5f - p.box.x1()) / p.box.w;
                if (std::abs(rel - 0.772f) * p.box.w < margin + 1) continue;
                if (luminance(s.image.at(x, y)) > 100) continue;
                const bool covered = std::any_of(boxes.begin(), boxes.end(), [&](const BBox& b) {
                    return x + 1 > b.x1() && x < b.x2() && y + 1 > b.y1() && y < b.y2();
                });
                CHECK(covered);
            }
        }
        // Every box has ink touching each of its edges.
        for (const auto& b : boxes) {
            auto dark_in = [&](float x0, float y0, float x1, float y1) {
                for (int y = static_cast<int>(std::floor(y0)); y < static_cast<int>(std::ceil(y1)); ++y) {
                    for (int x = static_cast<int>(std::floor(x0)); x < static_cast<int>(std::ceil(x1)); ++x) {
                        if (luminance(s.image.at(x, y)) < 160) return true;
                    }
                }
                return false;
            };
            CHECK(dark_in(b.x1(), b.y1(), b.x1() + 1, b.y2()));
            CHECK(dark_in(b.x2() - 1, b.y1(), b.x2(), b.y2()));
            CHECK(dark_in(b.x1(), b.y1(), b.x2(), b.y1() + 1));
            CHECK(dark_in(b.x1(), b.y2() - 1, b.x2(), b.y2()));
        }
    }
}

TEST_CASE("corpus covers every glyph class at least twenty times")
{
    SynthConfig cfg;
    const auto corpus = generate_corpus(cfg, 500, 2024);
    REQUIRE(corpus.size() == 500);
    std::vector<int> counts(25, 0);
    for (const auto& s : corpus) {
        for (const auto& p : s.plates) {
            for (const auto& c : p.chars) ++counts[static_cast<std::size_t>(c.class_id)];
        }
    }
    for (int c = 0; c < 25; ++c) CHECK_MESSAGE(counts[static_cast<std::size_t>(c)] >= 20, "class " << c);
}

TEST_CASE("generator ground truth matched against itself is perfect")
{
    SynthConfig cfg;
    const auto corpus = generate_corpus(cfg, 30, 5);
    std::vector<EvalImage> plates, chars;
    for (const auto& s : corpus) {
        EvalImage img;
        for (const auto& p : s.plates) {
            img.ground_truth.push_back({p.box, 0});
            img.detections.push_back({p.box, 0, 1.0f});
            EvalImage ci;
            for (const auto& c : p.chars) {
                ci.ground_truth.push_back({c.box, c.class_id});
                ci.detections.push_back({c.box, c.class_id, 1.0f});
            }
            chars.push_back(ci);
        }
        plates.push_back(img);
    }
    const std::vector<std::string> one{"plate"};
    std::vector<std::string> names;
    const CharClassTable table;
    for (const auto& c : table.classes()) names.push_back(std::string(1, c.glyph));
    for (float thr : {0.5f, 0.9f, 1.0f}) {
        const auto pr = evaluate(plates, one, {thr});
        CHECK(*pr.precision == 1.0);
        CHECK(*pr.recall == 1.0);
        const auto cr = evaluate(chars, names, {thr});
        CHECK(*cr.precision == 1.0);
        CHECK(*cr.recall == 1.0);
    }
}

TEST_CASE("char boxes map into a resized window")
{
    PlateTruth p;
    p.box = BBox::from_corners(100, 50, 200, 72);
    p.chars = {{1, BBox::from_corners(10, 2, 20, 20)}, {2, BBox::from_corners(95, 2, 99, 20)}};
    auto m = chars_in_window(p, 100, 50, 100, 22, 640, 128);
    REQUIRE(m.size() == 2);
    CHECK(m[0].box.x1() == doctest::Approx(64.0f));
    CHECK(m[0].box.y2() == doctest::Approx(20 * 128 / 22.0f));
    // Window that cuts off most of the second glyph.
    m = chars_in_window(p, 90, 50, 106, 22, 640, 128);
    REQUIRE(m.size() == 1);
    CHECK(m[0].class_id == 1);
}

TEST_CASE("noise level follows the signal-to-noise definition")
{
    CHECK(noise_sigma(0.5, 30) * noise_sigma(0.5, 30) == doctest::Approx(0.0005).epsilon(1e-12));
    CHECK(noise_sigma(0.5, std::numeric_limits<double>::infinity()) == 0.0);
    std::mt19937_64 rng(3);
    const auto img = random_image(rng, 20, 20);
    CHECK(add_gaussian_noise(img, std::numeric_limits<double>::infinity(), 1) == img);
    CHECK(add_gaussian_noise(img, 30, 9) == add_gaussian_noise(img, 30, 9));
    CHECK_THROWS_AS(add_gaussian_noise(img, std::nan(""), 1), ArgumentError);
}

TEST_CASE("measured SNR on mid-gray is within half a decibel")
{
    const Image gray(256, 256, 128);
    const auto noisy = add_gaussian_noise(gray, 30, 77);
    double p = 0, n = 0, shift = 0;
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
        const double x = gray.pixels[i] / 255.0, y = noisy.pixels[i] / 255.0;
        p += x * x;
        n += (y - x) * (y - x);
        shift += y - x;
    }
    const double snr = 10 * std::log10(p / n);
    CHECK(std::abs(snr - 30) < 0.5);
    CHECK(std::abs(shift / gray.pixels.size()) < 0.01);
}

TEST_CASE("noise leaves the mean pixel value nearly unchanged on scenes")
{
    const auto s = generate_scene(SynthConfig{}, 8);
    double before = 0, after = 0;
    const auto noisy = add_gaussian_noise(s.image, 30, 1);
    for (std::size_t i = 0; i < s.image.pixels.size(); ++i) {
        before += s.image.pixels[i] / 255.0;
        after += noisy.pixels[i] / 255.0;
    }
    CHECK(std::abs(after - before) / s.image.pixels.size() < 0.01);
}

TEST_CASE("dataset split")
{
    std::vector<int> items(100);
    for (int i = 0; i < 100; ++i) items[i] = i * 3;
    const auto [train, test] = split_dataset(items, 0.8, 0.2, 5);
    CHECK(train.size() == 80);
    CHECK(test.size() == 20);
    const auto again = split_dataset(items, 0.8, 0.2, 5);
    CHECK(again.first == train);
    CHECK(again.second == test);
    std::set<int> all(train.begin(), train.end());
    for (int v : test) CHECK(all.insert(v).second);
    CHECK(all == std::set<int>(items.begin(), items.end()));
    CHECK_THROWS_AS(split_dataset(items, 0.8, 0.3, 5), ArgumentError);
    CHECK_THROWS_AS(split_dataset(items, 1.2, -0.2, 5), ArgumentError);
    CHECK(split_dataset(std::vector<int>{}, 0.8, 0.2, 1).first.empty());
}
