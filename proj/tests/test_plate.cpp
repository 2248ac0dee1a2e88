#include <algorithm>
#include <random>

#include "doctest.h"
#include "lpr/error.hpp"
#include "lpr/plate.hpp"

using namespace lpr;

namespace {

CharDetection glyph(float cx, int class_id, float score = 0.9f)
{
    return {BBox{cx, 64.0f, 40.0f, 80.0f}, class_id, score};
}

// Ids for "12L34567".
std::vector<CharDetection> standard_plate()
{
    const CharClassTable table;
    const int letter = *table.id_of('L');
    const int ids[] = {1, 2, letter, 3, 4, 5, 6, 7};
    std::vector<CharDetection> out;
    for (int i = 0; i < 8; ++i) out.push_back(glyph(40.0f + 70.0f * i, ids[i], 0.5f + 0.05f * i));
    return out;
}

bool same(const CharDetection& a, const CharDetection& b)
{
    return a.box == b.box && a.class_id == b.class_id && a.score == b.score;
}

bool same_reading(const PlateReading& a, const PlateReading& b)
{
    if (a.layout != b.layout || a.text != b.text || a.mean_score != b.mean_score) return false;
    if (a.glyphs.size() != b.glyphs.size()) return false;
    for (std::size_t i = 0; i < a.glyphs.size(); ++i) {
        if (a.glyphs[i].cls.id != b.glyphs[i].cls.id || !(a.glyphs[i].box == b.glyphs[i].box)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("ordering leaves sorted input unchanged")
{
    const auto dets = standard_plate();
    const auto out = order_characters(dets);
    REQUIRE(out.size() == dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) CHECK(same(out[i], dets[i]));
}

TEST_CASE("ordering restores reversed input")
{
    const auto dets = standard_plate();
    std::vector<CharDetection> rev(dets.rbegin(), dets.rend());
    const auto out = order_characters(rev);
    for (std::size_t i = 0; i < dets.size(); ++i) CHECK(same(out[i], dets[i]));
}

TEST_CASE("ordering matches a comparison sort on random positions")
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> x(0.0f, 640.0f);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<CharDetection> dets;
        while (dets.size() < 8) {
            const float cx = x(rng);
            const bool clear = std::all_of(dets.begin(), dets.end(),
                                           [&](const CharDetection& d) { return std::abs(d.box.cx - cx) >= 1.0f; });
            if (clear) dets.push_back(glyph(cx, static_cast<int>(dets.size()), 0.5f));
        }
        auto expected = dets;
        for (std::size_t i = 1; i < expected.size(); ++i) {
            for (std::size_t j = i; j > 0 && expected[j].box.cx < expected[j - 1].box.cx; --j) {
                std::swap(expected[j], expected[j - 1]);
            }
        }
        const auto out = order_characters(dets);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(same(out[i], expected[i]));
    }
}

TEST_CASE("centers within a pixel are ordered by score")
{
    std::vector<CharDetection> dets{glyph(100.0f, 3, 0.4f), glyph(100.5f, 4, 0.8f), glyph(50.0f, 1, 0.1f)};
    const auto out = order_characters(dets);
    CHECK(out[0].class_id == 1);
    CHECK(out[1].class_id == 4);
    CHECK(out[2].class_id == 3);
}

TEST_CASE("a standard plate renders in grouped form")
{
    const auto r = assemble(standard_plate());
    CHECK(r.layout == PlateLayout::standard_iranian);
    CHECK(r.text == "12 L 345 67");
    CHECK(r.glyphs.size() == 8);
    CHECK(r.mean_score == doctest::Approx((0.5 + 0.85) / 2).epsilon(1e-6));
    CHECK(to_string(r.layout) == "standard_iranian");
}

TEST_CASE("seven glyphs are nonconforming")
{
    auto dets = standard_plate();
    dets.pop_back();
    const auto r = assemble(dets);
    CHECK(r.layout == PlateLayout::nonconforming);
    CHECK(r.text == "12L3456");
}

TEST_CASE("letter in the wrong position is nonconforming")
{
    auto dets = standard_plate();
    std::swap(dets[2].class_id, dets[3].class_id);
    CHECK(assemble(dets).layout == PlateLayout::nonconforming);
}

TEST_CASE("empty input")
{
    const auto r = assemble({});
    CHECK(r.layout == PlateLayout::nonconforming);
    CHECK(r.text.empty());
    CHECK(r.mean_score == 0.0f);
}

TEST_CASE("overlapping duplicate keeps the higher score")
{
    auto dets = standard_plate();
    dets.push_back({BBox{dets[4].box.cx + 2.0f, 64.0f, 40.0f, 80.0f}, 9, 0.99f});
    const auto r = assemble(dets);
    CHECK(r.layout == PlateLayout::standard_iranian);
    CHECK(r.text == "12 L 395 67");
}

TEST_CASE("unknown class id is rejected")
{
    std::vector<CharDetection> dets{glyph(10.0f, 25)};
    CHECK_THROWS_AS(assemble(dets), ArgumentError);
}

TEST_CASE("assembly is permutation invariant and keeps its invariants")
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> x(0.0f, 640.0f), s(0.0f, 1.0f);
    std::uniform_int_distribution<int> cls(0, 24), count(0, 12), near(0, 3);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<CharDetection> dets;
        const int n = count(rng);
        for (int i = 0; i < n; ++i) {
            // Some detections land on top of existing ones to exercise the duplicate rule.
            const float cx = (!dets.empty() && near(rng) == 0) ? dets.back().box.cx + 0.5f : x(rng);
            dets.push_back(glyph(cx, cls(rng), s(rng)));
        }
        if (trial % 3 == 0) dets = standard_plate();
        const auto base = assemble(dets);
        for (int p = 0; p < 4; ++p) {
            std::shuffle(dets.begin(), dets.end(), rng);
            CHECK(same_reading(assemble(dets), base));
        }
        CHECK(base.mean_score >= 0.0f);
        CHECK(base.mean_score <= 1.0f);
        if (base.layout == PlateLayout::standard_iranian) {
            REQUIRE(base.glyphs.size() == 8);
            for (int i = 0; i < 8; ++i) CHECK((base.glyphs[i].cls.kind == GlyphKind::letter) == (i == 2));
        }
        for (std::size_t i = 1; i < base.glyphs.size(); ++i) CHECK(base.glyphs[i - 1].box.cx < base.glyphs[i].box.cx);
    }
}
