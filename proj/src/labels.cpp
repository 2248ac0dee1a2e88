#include "lpr/labels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lpr/error.hpp"

namespace lpr {

namespace {

std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view tok, int line, const char* what)
{
    T v{};
    const auto* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ParseError(ParseErrorKind::non_numeric, line, std::string(what) + " '" + std::string(tok) + "' is not a number");
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(v)) {
            throw ParseError(ParseErrorKind::non_numeric, line, std::string(what) + " is not finite");
        }
    }
    return v;
}

std::string shortest(float v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    return std::string(buf, ptr);
}

template <typename F>
void for_each_line(std::string_view text, F&& f)
{
    int number = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        ++number;
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!split_ws(line).empty()) f(line, number);
        start = end + 1;
    }
}

}  // namespace

BBox YoloLabelRecord::to_pixels(int width, int height) const
{
    return {cx * static_cast<float>(width), cy * static_cast<float>(height), w * static_cast<float>(width),
            h * static_cast<float>(height)};
}

YoloLabelRecord YoloLabelRecord::from_pixels(int class_id, const BBox& box, int width, int height)
{
    const auto fw = static_cast<float>(width), fh = static_cast<float>(height);
    return {class_id, box.cx / fw, box.cy / fh, box.w / fw, box.h / fh};
}

YoloLabelRecord parse_yolo_label(std::string_view line, int line_number)
{
    const auto tok = split_ws(line);
    if (tok.size() != 5) {
        throw ParseError(ParseErrorKind::token_count, line_number,
                         "expected 5 tokens, found " + std::to_string(tok.size()));
    }
    YoloLabelRecord r;
    r.class_id = parse_number<int>(tok[0], line_number, "class");
    if (r.class_id < 0) throw ParseError(ParseErrorKind::bad_class, line_number, "negative class id");
    const char* names[] = {"cx", "cy", "w", "h"};
    float* fields[] = {&r.cx, &r.cy, &r.w, &r.h};
    for (int i = 0; i < 4; ++i) {
        *fields[i] = parse_number<float>(tok[static_cast<std::size_t>(i) + 1], line_number, names[i]);
        if (*fields[i] < 0.0f || *fields[i] > 1.0f) {
            throw ParseError(ParseErrorKind::out_of_range, line_number,
                             std::string(names[i]) + " = " + std::string(tok[static_cast<std::size_t>(i) + 1]) +
                                 " outside [0, 1]");
        }
    }
    return r;
}

std::string format_yolo_label(const YoloLabelRecord& r)
{
    return std::to_string(r.class_id) + " " + shortest(r.cx) + " " + shortest(r.cy) + " " + shortest(r.w) + " " +
           shortest(r.h);
}

YoloLabelFile parse_yolo_labels(std::string_view text)
{
    YoloLabelFile file;
    for_each_line(text, [&](std::string_view line, int number) {
        auto r = parse_yolo_label(line, number);
        const float x1 = r.cx - r.w / 2, x2 = r.cx + r.w / 2, y1 = r.cy - r.h / 2, y2 = r.cy + r.h / 2;
        if (x1 < 0.0f || y1 < 0.0f || x2 > 1.0f || y2 > 1.0f) {
            const float a = std::max(x1, 0.0f), b = std::max(y1, 0.0f), c = std::min(x2, 1.0f), d = std::min(y2, 1.0f);
            r.cx = (a + c) / 2;
            r.cy = (b + d) / 2;
            r.w = c - a;
            r.h = d - b;
            file.warnings.push_back("line " + std::to_string(number) + ": box clipped to the image");
        }
        file.records.push_back(r);
    });
    return file;
}

std::string format_yolo_labels(const std::vector<YoloLabelRecord>& records)
{
    std::string out;
    for (const auto& r : records) out += format_yolo_label(r) + '\n';
    return out;
}

std::vector<CharAnnotation> parse_char_annotations(std::string_view text, int num_classes, float crop_width,
                                                   float crop_height)
{
    constexpr float slack = 1e-3f;
    std::vector<CharAnnotation> out;
    for_each_line(text, [&](std::string_view line, int number) {
        const auto tok = split_ws(line);
        if (tok.size() != 5) {
            throw ParseError(ParseErrorKind::token_count, number, "expected 5 tokens, found " + std::to_string(tok.size()));
        }
        const int cls = parse_number<int>(tok[0], number, "class");
        if (cls < 0 || cls >= num_classes) {
            throw ParseError(ParseErrorKind::bad_class, number, "class id " + std::to_string(cls) + " out of range");
        }
        float v[4];
        for (int i = 0; i < 4; ++i) v[i] = parse_number<float>(tok[static_cast<std::size_t>(i) + 1], number, "coordinate");
        if (!(v[0] >= -slack && v[1] >= -slack && v[2] <= crop_width + slack && v[3] <= crop_height + slack &&
              v[0] < v[2] && v[1] < v[3])) {
            throw ParseError(ParseErrorKind::out_of_range, number, "box outside the crop or inverted");
        }
        out.push_back({cls, BBox::from_corners(v[0], v[1], v[2], v[3])});
    });
    return out;
}

std::string format_char_annotations(const std::vector<CharAnnotation>& chars)
{
    std::string out;
    for (const auto& c : chars) {
        out += std::to_string(c.class_id) + " " + shortest(c.box.x1()) + " " + shortest(c.box.y1()) + " " +
               shortest(c.box.x2()) + " " + shortest(c.box.y2()) + '\n';
    }
    return out;
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text)
{
    if (text == "train") return Split::train;
    if (text == "test") return Split::test;
    throw DataError("unknown split '" + std::string(text) + "'");
}

std::vector<ManifestEntry> parse_manifest(std::string_view text)
{
    std::vector<ManifestEntry> out;
    for_each_line(text, [&](std::string_view line, int number) {
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const auto tab = line.find('\t', start);
            fields.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
            if (tab == std::string_view::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 4) {
            throw ParseError(ParseErrorKind::token_count, number,
                             "manifest records need 4 tab-separated fields, found " + std::to_string(fields.size()));
        }
        ManifestEntry e;
        e.image = fields[0];
        e.labels = fields[1];
        try {
            e.split = parse_split(fields[2]);
        } catch (const DataError&) {
            throw ParseError(ParseErrorKind::out_of_range, number, "unknown split '" + fields[2] + "'");
        }
        if (fields[3] != "-") {
            std::stringstream ss(fields[3]);
            std::string item;
            while (std::getline(ss, item, ',')) e.chars.push_back(item);
        }
        out.push_back(std::move(e));
    });
    return out;
}

std::string format_manifest(const std::vector<ManifestEntry>& entries)
{
    std::string out;
    for (const auto& e : entries) {
        std::string chars;
        for (std::size_t i = 0; i < e.chars.size(); ++i) chars += (i ? "," : "") + e.chars[i];
        out += e.image + '\t' + e.labels + '\t' + to_string(e.split) + '\t' + (chars.empty() ? "-" : chars) + '\n';
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

}  // namespace lpr
