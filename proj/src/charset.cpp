#include "lpr/charset.hpp"

#include <cctype>

#include "lpr/error.hpp"

namespace lpr {

CharClassTable::CharClassTable(std::string_view letters) : letters_(letters)
{
    if (letters.size() != 15) throw ArgumentError("letter set must hold exactly 15 glyphs");
    for (int d = 0; d < 10; ++d) classes_.push_back({d, static_cast<char>('0' + d), GlyphKind::digit});
    for (char c : letters) {
        if (std::isdigit(static_cast<unsigned char>(c)) || std::isspace(static_cast<unsigned char>(c))) {
            throw ArgumentError(std::string("letter glyph '") + c + "' is a digit or blank");
        }
        if (id_of(c)) throw ArgumentError(std::string("duplicate letter glyph '") + c + "'");
        classes_.push_back({static_cast<int>(classes_.size()), c, GlyphKind::letter});
    }
}

std::optional<int> CharClassTable::id_of(char glyph) const
{
    for (const auto& c : classes_) {
        if (c.glyph == glyph) return c.id;
    }
    return std::nullopt;
}

}  // namespace lpr
