#pragma once

// Brute-force reference implementations used to cross-check the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace lpr::oracle {

struct Corners {
    double x1, y1, x2, y2;
};

inline double iou(const Corners& a, const Corners& b)
{
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Greedy suppression characterised as a fixed point: with boxes ranked by
/// (score desc, index asc), box i survives iff no surviving box ranked above
/// it overlaps it by more than `thr` (overlaps compared in single precision). Finds that set by enumerating every
/// subset, then returns it in rank order. n <= 16.
inline std::vector<int> nms_by_subsets(const std::vector<Corners>& boxes, const std::vector<double>& scores,
                                       const std::vector<int>& tie_key, float thr)
{
    const int n = static_cast<int>(boxes.size());
    std::vector<int> rank(n);
    for (int i = 0; i < n; ++i) rank[i] = i;
    std::sort(rank.begin(), rank.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return tie_key[a] < tie_key[b];
    });
    std::vector<int> pos(n);
    for (int r = 0; r < n; ++r) pos[rank[r]] = r;
    std::vector<int> found;
    int solutions = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        bool ok = true;
        for (int i = 0; i < n && ok; ++i) {
            bool suppressed = false;
            for (int j = 0; j < n; ++j) {
                if ((mask >> j & 1u) && pos[j] < pos[i] && static_cast<float>(iou(boxes[i], boxes[j])) > thr) suppressed = true;
            }
            const bool in = mask >> i & 1u;
            ok = in == !suppressed;
        }
        if (ok) {
            ++solutions;
            found.clear();
            for (int r = 0; r < n; ++r) {
                if (mask >> rank[r] & 1u) found.push_back(rank[r]);
            }
        }
    }
    if (solutions != 1) return {-1};
    return found;
}

struct ProposalCase {
    std::vector<double> cx, cy, w, h;  // anchors
    std::vector<double> score;
    std::vector<std::array<double, 4>> deltas;
    double width = 0, height = 0;
    int pre_nms_top = 0, post_nms_top = 0;
    float nms_iou = 0.7f;
    double min_size = 2.0;
};

/// Anchor indices of the selected proposals, in output order.
inline std::vector<int> propose_brute_force(const ProposalCase& c)
{
    const double clamp = std::log(1000.0 / 16.0);
    std::vector<Corners> boxes;
    std::vector<int> alive;
    for (std::size_t i = 0; i < c.cx.size(); ++i) {
        const auto& d = c.deltas[i];
        const double cx = c.cx[i] + d[0] * c.w[i], cy = c.cy[i] + d[1] * c.h[i];
        const double w = c.w[i] * std::exp(std::min(d[2], clamp)), h = c.h[i] * std::exp(std::min(d[3], clamp));
        Corners b{std::clamp(cx - w / 2, 0.0, c.width), std::clamp(cy - h / 2, 0.0, c.height),
                  std::clamp(cx + w / 2, 0.0, c.width), std::clamp(cy + h / 2, 0.0, c.height)};
        boxes.push_back(b);
        if (b.x2 - b.x1 >= c.min_size && b.y2 - b.y1 >= c.min_size) alive.push_back(static_cast<int>(i));
    }
    // Full ranking, then the pre-NMS cut.
    std::sort(alive.begin(), alive.end(), [&](int a, int b) {
        if (c.score[a] != c.score[b]) return c.score[a] > c.score[b];
        return a < b;
    });
    if (static_cast<int>(alive.size()) > c.pre_nms_top) alive.resize(static_cast<std::size_t>(c.pre_nms_top));
    std::vector<Corners> kept_boxes;
    std::vector<double> kept_scores;
    std::vector<int> keys;
    for (int i : alive) {
        kept_boxes.push_back(boxes[static_cast<std::size_t>(i)]);
        kept_scores.push_back(c.score[static_cast<std::size_t>(i)]);
        keys.push_back(i);
    }
    auto survivors = nms_by_subsets(kept_boxes, kept_scores, keys, c.nms_iou);
    std::vector<int> out;
    for (int k : survivors) {
        if (k < 0) return {-1};
        if (static_cast<int>(out.size()) < c.post_nms_top) out.push_back(keys[static_cast<std::size_t>(k)]);
    }
    return out;
}

struct LabelledBox {
    Corners box;
    int class_id = 0;
};

/// Greedy matching characterised per detection: visiting detections by
/// (score desc, index asc), a detection must take the available same-class gt
/// whose overlap (single precision) is at least `thr` and beats every other
/// available gt (ties: lower index), and must stay unmatched when none
/// qualifies. Enumerates every assignment of gts (or none) to detections and
/// keeps the consistent ones. Returns the gt index per detection, or {-2} if
/// the consistent assignment is not unique.
inline std::vector<int> match_by_search(const std::vector<LabelledBox>& dets, const std::vector<double>& scores,
                                        const std::vector<LabelledBox>& gts, float thr)
{
    const int n = static_cast<int>(dets.size()), m = static_cast<int>(gts.size());
    std::vector<int> rank(n);
    for (int i = 0; i < n; ++i) rank[i] = i;
    std::sort(rank.begin(), rank.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    auto ov = [&](int d, int g) { return static_cast<float>(iou(dets[d].box, gts[g].box)); };
    std::vector<int> choice(n, -1), found;
    std::vector<char> used(m, 0);
    int solutions = 0;
    auto consistent = [&](int d, int g) {
        auto eligible = [&](int k) { return !used[k] && gts[k].class_id == dets[d].class_id && ov(d, k) >= thr; };
        if (g < 0) {
            for (int k = 0; k < m; ++k) {
                if (eligible(k)) return false;
            }
            return true;
        }
        if (!eligible(g)) return false;
        for (int k = 0; k < m; ++k) {
            if (k == g || !eligible(k)) continue;
            if (ov(d, k) > ov(d, g) || (ov(d, k) == ov(d, g) && k < g)) return false;
        }
        return true;
    };
    auto search = [&](auto&& self, int r) -> void {
        if (r == n) {
            ++solutions;
            found = choice;
            return;
        }
        const int d = rank[r];
        for (int g = -1; g < m; ++g) {
            if (!consistent(d, g)) continue;
            choice[d] = g;
            if (g >= 0) used[g] = 1;
            self(self, r + 1);
            if (g >= 0) used[g] = 0;
            choice[d] = -1;
        }
    };
    search(search, 0);
    if (solutions != 1) return {-2};
    return found;
}

/// All-points AP straight from its definition: each true positive adds
/// 1/num_gt times the best precision reached at its rank or any later rank.
inline double ap_all_points(const std::vector<bool>& correct, long num_gt)
{
    const std::size_t n = correct.size();
    double ap = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!correct[k]) continue;
        double best = 0;
        for (std::size_t j = k; j < n; ++j) {
            long tp = 0;
            for (std::size_t i = 0; i <= j; ++i) tp += correct[i] ? 1 : 0;
            best = std::max(best, static_cast<double>(tp) / static_cast<double>(j + 1));
        }
        ap += best / static_cast<double>(num_gt);
    }
    return ap;
}

}  // namespace lpr::oracle
