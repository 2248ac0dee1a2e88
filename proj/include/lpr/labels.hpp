#pragma once

// Text annotation formats: YOLO plate labels, character boxes and the dataset manifest.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lpr/bbox.hpp"

namespace lpr {

/// "class cx cy w h", coordinates normalized to the image size.
struct YoloLabelRecord {
    int class_id = 0;
    float cx = 0, cy = 0, w = 0, h = 0;

    /// Box in pixels of a width x height image.
    BBox to_pixels(int width, int height) const;
    static YoloLabelRecord from_pixels(int class_id, const BBox& box, int width, int height);
};

/// Throws ParseError (carrying `line_number`) on a wrong token count,
/// non-numeric token, bad class or coordinate outside [0, 1].
YoloLabelRecord parse_yolo_label(std::string_view line, int line_number = 1);
/// Shortest decimal forms that read back to the same floats.
std::string format_yolo_label(const YoloLabelRecord& record);

struct YoloLabelFile {
    std::vector<YoloLabelRecord> records;
    /// Clipping notes for boxes reaching past the image border.
    std::vector<std::string> warnings;
};

/// Blank lines are skipped. Boxes extending past the border are clipped.
YoloLabelFile parse_yolo_labels(std::string_view text);
std::string format_yolo_labels(const std::vector<YoloLabelRecord>& records);

/// Character box in plate-crop pixels.
struct CharAnnotation {
    int class_id = 0;
    BBox box;
};

/// "class_id x1 y1 x2 y2" per line. Class ids must lie in [0, num_classes) and
/// boxes inside the crop_width x crop_height crop (1e-3 px slack).
std::vector<CharAnnotation> parse_char_annotations(std::string_view text, int num_classes, float crop_width,
                                                   float crop_height);
std::string format_char_annotations(const std::vector<CharAnnotation>& chars);

enum class Split { train, test };

std::string to_string(Split split);
Split parse_split(std::string_view text);

/// Paths are relative to the manifest's directory. `chars` holds one
/// annotation file per plate, in label order.
struct ManifestEntry {
    std::string image;
    std::string labels;
    Split split = Split::train;
    std::vector<std::string> chars;
};

/// Tab-separated: image, labels, split, comma-joined chars files ("-" when none).
std::vector<ManifestEntry> parse_manifest(std::string_view text);
std::string format_manifest(const std::vector<ManifestEntry>& entries);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace lpr
