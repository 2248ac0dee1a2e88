#pragma once

// Character detections to a plate reading.

#include <span>
#include <string>
#include <vector>

#include "lpr/bbox.hpp"
#include "lpr/charset.hpp"
#include "lpr/frcnn.hpp"

namespace lpr {

enum class PlateLayout { standard_iranian, nonconforming };

std::string to_string(PlateLayout layout);

struct Glyph {
    CharClass cls;
    float score = 0;
    BBox box;
};

struct PlateReading {
    std::vector<Glyph> glyphs;
    PlateLayout layout = PlateLayout::nonconforming;
    std::string text;
    float mean_score = 0;
};

/// Ascending box center-x. Detections whose centers lie within 1 px of their
/// neighbour form a group ordered by descending score.
std::vector<CharDetection> order_characters(std::span<const CharDetection> dets);

/// Digit, digit, letter, then five digits.
bool is_standard_layout(std::span<const Glyph> glyphs);

/// Drops the lower-scored glyph of every pair overlapping by IoU > 0.5, orders
/// the rest and checks the layout. Standard plates render as "DD L DDD DD";
/// anything else as the glyphs concatenated.
PlateReading assemble(std::span<const CharDetection> dets, const CharClassTable& table = CharClassTable());

}  // namespace lpr
