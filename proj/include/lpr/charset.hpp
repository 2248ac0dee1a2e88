#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lpr {

enum class GlyphKind { digit, letter };

struct CharClass {
    int id = 0;
    char glyph = '0';
    GlyphKind kind = GlyphKind::digit;
};

/// Ten digits (ids 0-9) followed by the letter glyphs (ids 10 and up). The
/// letters are Latin stand-ins for the alphabet classes and are configurable.
class CharClassTable {
public:
    static constexpr std::string_view kDefaultLetters = "BCDGHJLMNPSTVYZ";

    explicit CharClassTable(std::string_view letters = kDefaultLetters);

    int size() const noexcept { return static_cast<int>(classes_.size()); }
    const CharClass& operator[](int id) const { return classes_.at(static_cast<std::size_t>(id)); }
    std::optional<int> id_of(char glyph) const;
    const std::string& letters() const noexcept { return letters_; }
    const std::vector<CharClass>& classes() const noexcept { return classes_; }

private:
    std::string letters_;
    std::vector<CharClass> classes_;
};

}  // namespace lpr
