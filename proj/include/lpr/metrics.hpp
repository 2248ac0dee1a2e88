#pragma once

// Detection evaluation: matching, precision/recall/accuracy, AP and reports.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lpr/bbox.hpp"

namespace lpr {

struct ScoredBox {
    BBox box;
    int class_id = 0;
    float score = 0;
};

struct GroundTruth {
    BBox box;
    int class_id = 0;
};

struct MatchedPair {
    int detection = 0;
    int ground_truth = 0;
    float iou = 0;
};

struct MatchResult {
    std::int64_t tp = 0, fp = 0, fn = 0;
    std::vector<MatchedPair> pairs;

    MatchResult& operator+=(const MatchResult& other);
};

/// Detections are visited by descending score (ties: lower index first). Each
/// takes the unmatched same-class ground truth of highest IoU (ties: lower
/// index) if that IoU is at least `iou_threshold`, and is a false positive
/// otherwise. Pairs are listed in visiting order.
MatchResult match_detections(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts,
                             float iou_threshold = 0.5f);

// Undefined (nullopt) when the denominator is zero.
std::optional<double> precision(std::int64_t tp, std::int64_t fp);
std::optional<double> recall(std::int64_t tp, std::int64_t fn);
std::optional<double> accuracy(std::int64_t tp, std::int64_t tn, std::int64_t fp, std::int64_t fn);

enum class ApInterpolation { all_points, voc11 };

/// AP from detections already ranked by score: `correct[k]` tells whether the
/// k-th ranked detection is a true positive. Undefined when num_gt is 0.
std::optional<double> average_precision(std::span<const bool> correct, std::int64_t num_gt,
                                        ApInterpolation mode = ApInterpolation::all_points);

/// Detections and ground truth of one image.
struct EvalImage {
    std::vector<ScoredBox> detections;
    std::vector<GroundTruth> ground_truth;
};

/// Per-image matching of one class, pooled across images and ranked by score
/// (ties: image order, then in-image rank).
std::optional<double> average_precision(std::span<const EvalImage> images, int class_id, float iou_threshold = 0.5f,
                                        ApInterpolation mode = ApInterpolation::all_points);

struct ClassAp {
    int class_id = 0;
    std::optional<double> ap;
};

struct MeanAp {
    /// Unweighted mean over classes with ground truth; undefined if there are none.
    std::optional<double> map;
    std::vector<ClassAp> per_class;
    std::vector<int> classes_without_gt;
};

MeanAp mean_average_precision(std::span<const ClassAp> per_class);

/// s0 = x0, s_i = factor * s_{i-1} + (1 - factor) * x_i. factor in [0, 1).
std::vector<double> ema_smooth(std::span<const double> series, double factor = 0.6);

struct TimingStats {
    double mean_ms = 0, p50_ms = 0, p95_ms = 0;
};

/// Nearest-rank percentiles. Throws ArgumentError on an empty sample.
TimingStats timing_stats(std::span<const double> samples_ms);

struct ClassRow {
    int class_id = 0;
    std::string name;
    MatchResult counts;
    std::optional<double> ap;
};

struct EvalReport {
    std::string title;
    std::vector<ClassRow> classes;
    MatchResult total;
    std::optional<double> precision, recall, accuracy;
    /// Mean IoU over true positives.
    std::optional<double> average_iou;
    std::optional<double> map;
    std::optional<TimingStats> timing;
};

struct EvalOptions {
    float iou_threshold = 0.5f;
    ApInterpolation interpolation = ApInterpolation::all_points;
};

/// Matches every image, then tallies per class (accuracy uses TN = 0).
/// class_names[c] labels class c; the list also fixes which classes appear.
EvalReport evaluate(std::span<const EvalImage> images, std::span<const std::string> class_names,
                    const EvalOptions& options = {}, std::span<const double> latencies_ms = {});

/// Rebuilds the summary fields from `total` and per-class counts.
void finalize_totals(EvalReport& report);

/// Fixed-width table: per-class rows then the total row. Percentages to two
/// decimals, "n/a" when undefined.
std::string format_table(const EvalReport& report);

/// Side-by-side summary rows for several reports (e.g. clean vs noisy).
std::string format_comparison(std::span<const EvalReport> reports);

/// One JSON object per line: a "class" record per class then a "summary" record.
std::string to_jsonl(const EvalReport& report);
/// Inverse of to_jsonl. Throws DataError on malformed input.
EvalReport from_jsonl(const std::string& text);

}  // namespace lpr
