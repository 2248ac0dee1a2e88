#include "lpr/plate.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

#include "lpr/error.hpp"

namespace lpr {

namespace {

constexpr float kTieDistance = 1.0f;
constexpr float kDuplicateIou = 0.5f;

// Total order on every field so that the result does not depend on the input order.
bool full_less(const CharDetection& a, const CharDetection& b)
{
    return std::tie(a.box.cx, b.score, a.class_id, a.box.cy, a.box.w, a.box.h) <
           std::tie(b.box.cx, a.score, b.class_id, b.box.cy, b.box.w, b.box.h);
}

bool score_first(const CharDetection& a, const CharDetection& b)
{
    if (a.score != b.score) return a.score > b.score;
    return full_less(a, b);
}

}  // namespace

std::string to_string(PlateLayout layout)
{
    return layout == PlateLayout::standard_iranian ? "standard_iranian" : "nonconforming";
}

std::vector<CharDetection> order_characters(std::span<const CharDetection> dets)
{
    std::vector<CharDetection> out(dets.begin(), dets.end());
    std::sort(out.begin(), out.end(), full_less);
    std::size_t start = 0;
    while (start < out.size()) {
        std::size_t end = start + 1;
        while (end < out.size() && out[end].box.cx - out[end - 1].box.cx < kTieDistance) ++end;
        std::sort(out.begin() + static_cast<std::ptrdiff_t>(start), out.begin() + static_cast<std::ptrdiff_t>(end),
                  score_first);
        start = end;
    }
    return out;
}

bool is_standard_layout(std::span<const Glyph> glyphs)
{
    if (glyphs.size() != 8) return false;
    for (std::size_t i = 0; i < glyphs.size(); ++i) {
        const auto want = i == 2 ? GlyphKind::letter : GlyphKind::digit;
        if (glyphs[i].cls.kind != want) return false;
    }
    return true;
}

PlateReading assemble(std::span<const CharDetection> dets, const CharClassTable& table)
{
    std::vector<CharDetection> ranked(dets.begin(), dets.end());
    std::sort(ranked.begin(), ranked.end(), score_first);
    std::vector<CharDetection> kept;
    for (const auto& d : ranked) {
        if (d.class_id < 0 || d.class_id >= table.size()) {
            throw ArgumentError("assemble: class id " + std::to_string(d.class_id) + " outside the glyph table");
        }
        const bool dup = std::any_of(kept.begin(), kept.end(),
                                     [&](const CharDetection& k) { return iou(k.box, d.box) > kDuplicateIou; });
        if (!dup) kept.push_back(d);
    }

    PlateReading reading;
    for (const auto& d : order_characters(kept)) reading.glyphs.push_back({table[d.class_id], d.score, d.box});
    if (!reading.glyphs.empty()) {
        double sum = 0;
        for (const auto& g : reading.glyphs) sum += g.score;
        reading.mean_score = static_cast<float>(sum / static_cast<double>(reading.glyphs.size()));
    }
    std::string plain;
    for (const auto& g : reading.glyphs) plain.push_back(g.cls.glyph);
    if (is_standard_layout(reading.glyphs)) {
        reading.layout = PlateLayout::standard_iranian;
        reading.text = plain.substr(0, 2) + " " + plain.substr(2, 1) + " " + plain.substr(3, 3) + " " + plain.substr(6);
    } else {
        reading.text = plain;
    }
    return reading;
}

}  // namespace lpr
