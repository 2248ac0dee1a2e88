#pragma once

#include <span>
#include <vector>

namespace lpr {

/// Axis-aligned box in center form. Units are pixels unless stated otherwise.
struct BBox {
    float cx = 0, cy = 0, w = 0, h = 0;

    static BBox from_corners(float x1, float y1, float x2, float y2)
    {
        return {(x1 + x2) * 0.5f, (y1 + y2) * 0.5f, x2 - x1, y2 - y1};
    }
    float x1() const { return cx - w * 0.5f; }
    float y1() const { return cy - h * 0.5f; }
    float x2() const { return cx + w * 0.5f; }
    float y2() const { return cy + h * 0.5f; }
    float area() const { return w * h; }

    /// Clipped to [0, width] x [0, height].
    BBox clipped(float width, float height) const;

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Intersection over union; 0 when the union is empty.
float iou(const BBox& a, const BBox& b);

/// Greedy suppression over boxes ranked by descending score (ties: lower index
/// first). A box is dropped when its IoU with an already kept box exceeds
/// `iou_threshold`. Returns kept indices in rank order.
std::vector<int> nms_indices(std::span<const BBox> boxes, std::span<const float> scores, float iou_threshold);

}  // namespace lpr
