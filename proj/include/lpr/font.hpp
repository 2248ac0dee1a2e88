#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string_view>

namespace lpr {

/// 5 x 7 bitmap glyph; bit 4 of each row is the leftmost column.
struct GlyphBitmap {
    static constexpr int kCols = 5;
    static constexpr int kRows = 7;
    std::array<std::uint8_t, kRows> rows{};

    bool ink(int col, int row) const { return (rows[static_cast<std::size_t>(row)] >> (kCols - 1 - col)) & 1u; }

    /// Tight bounds of the set bits as [col0, col1) x [row0, row1); all zero when blank.
    struct Extent {
        int col0 = 0, row0 = 0, col1 = 0, row1 = 0;
    };
    Extent extent() const;
};

class BitmapFont {
public:
    /// Digits, A-Z and a few punctuation marks.
    static const BitmapFont& builtin();

    std::optional<GlyphBitmap> glyph(char c) const;
    /// Rows as 7 strings of 5 characters, '#' for ink. Throws ArgumentError on bad shape.
    void set(char c, const std::array<std::string_view, GlyphBitmap::kRows>& rows);

private:
    std::map<char, GlyphBitmap> glyphs_;
};

}  // namespace lpr
