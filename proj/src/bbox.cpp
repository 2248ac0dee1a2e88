#include "lpr/bbox.hpp"

#include <algorithm>
#include <numeric>

#include "lpr/error.hpp"

namespace lpr {

BBox BBox::clipped(float width, float height) const
{
    float a = std::clamp(x1(), 0.0f, width);
    float b = std::clamp(y1(), 0.0f, height);
    float c = std::clamp(x2(), 0.0f, width);
    float d = std::clamp(y2(), 0.0f, height);
    return from_corners(a, b, c, d);
}

float iou(const BBox& a, const BBox& b)
{
    // Double accumulation keeps iou(a, b) == iou(b, a) bit-exact.
    const double ix = std::max(0.0, static_cast<double>(std::min(a.x2(), b.x2())) - std::max(a.x1(), b.x1()));
    const double iy = std::max(0.0, static_cast<double>(std::min(a.y2(), b.y2())) - std::max(a.y1(), b.y1()));
    const double inter = ix * iy;
    // Areas from the same corners as the intersection, so iou(a, a) == 1.
    const double area_a = (static_cast<double>(a.x2()) - a.x1()) * (static_cast<double>(a.y2()) - a.y1());
    const double area_b = (static_cast<double>(b.x2()) - b.x1()) * (static_cast<double>(b.y2()) - b.y1());
    const double uni = area_a + area_b - inter;
    if (uni <= 0) return 0.0f;
    return static_cast<float>(std::clamp(inter / uni, 0.0, 1.0));
}

std::vector<int> nms_indices(std::span<const BBox> boxes, std::span<const float> scores, float iou_threshold)
{
    if (boxes.size() != scores.size()) throw ArgumentError("nms: boxes and scores differ in length");
    if (!(iou_threshold >= 0.0f && iou_threshold <= 1.0f)) throw ArgumentError("nms: threshold outside [0, 1]");
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
    std::vector<int> kept;
    for (int idx : order) {
        bool keep = true;
        for (int k : kept) {
            if (iou(boxes[idx], boxes[k]) > iou_threshold) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(idx);
    }
    return kept;
}

}  // namespace lpr
