#pragma once

// Three-scale anchor-based plate detector.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lpr/backbones.hpp"
#include "lpr/bbox.hpp"
#include "lpr/image.hpp"

namespace lpr {

/// Channels of a detection head: B boxes of (tx, ty, tw, th, objectness, C classes).
int head_channels(int boxes_per_cell, int num_classes);

/// Boxes predicted over the stride 32, 16 and 8 grids of a square input.
int total_boxes(int input_size, int boxes_per_cell);

struct Detection {
    BBox box;
    float objectness = 0;
    int class_id = 0;
    float class_score = 0;
    /// Position in decode order; used to break score ties.
    int index = 0;

    float score() const { return objectness * class_score; }
};

/// Greedy NMS over Detection::score(). Output in descending score order.
std::vector<Detection> nms(std::span<const Detection> dets, float iou_threshold);

// ---------------------------------------------------------------------------
// Letterbox

struct LetterboxTransform {
    int source_width = 0;
    int source_height = 0;
    int target = 0;
    double scale_x = 1, scale_y = 1;
    double pad_x = 0, pad_y = 0;

    double map_x(double x) const { return x * scale_x + pad_x; }
    double map_y(double y) const { return y * scale_y + pad_y; }
    double unmap_x(double x) const { return (x - pad_x) / scale_x; }
    double unmap_y(double y) const { return (y - pad_y) / scale_y; }
    BBox map(const BBox& b) const;
    BBox unmap(const BBox& b) const;
};

struct Letterboxed {
    TensorF tensor;  // 1 x 3 x target x target
    LetterboxTransform transform;
};

/// Aspect-preserving bilinear resize onto a mid-gray target x target canvas,
/// centred. Throws ArgumentError for an empty image.
LetterboxTransform letterbox_transform(int width, int height, int target = 320);
Letterboxed letterbox(const Image& image, int target = 320);

// ---------------------------------------------------------------------------
// Anchors

struct AnchorWH {
    float w = 0, h = 0;
};

/// Nine priors in network-input pixels, ascending by area. Anchors 0-2 belong
/// to the stride-8 head, 3-5 to stride 16 and 6-8 to stride 32.
class AnchorSet {
public:
    explicit AnchorSet(std::array<AnchorWH, 9> anchors);
    /// Priors matched to synthetic plate crops at 320 x 320.
    static AnchorSet fallback();

    const std::array<AnchorWH, 9>& anchors() const noexcept { return anchors_; }
    const AnchorWH& operator[](int i) const { return anchors_.at(static_cast<std::size_t>(i)); }
    /// Index of the first of the three anchors used at `stride`.
    static int first_index(int stride);

private:
    std::array<AnchorWH, 9> anchors_;
};

/// IoU of two boxes sharing a centre.
float shape_iou(float w1, float h1, float w2, float h2);

/// k-means (k = 9, distance 1 - IoU) over box sizes. Falls back to
/// AnchorSet::fallback() when fewer than 9 distinct sizes are given.
AnchorSet kmeans_anchors(std::span<const AnchorWH> sizes, std::uint64_t seed, int iterations = 100);

// ---------------------------------------------------------------------------
// Decoding

inline constexpr std::array<int, 3> kYoloStrides = {32, 16, 8};

/// Decode raw head output (1 x B(5+C) x H x W, or one image of a batch) into
/// H*W*B detections. Order: row, column, anchor. `index_offset` is added to
/// Detection::index.
std::vector<Detection> decode_yolo(const TensorF& raw, const AnchorSet& anchors, int stride, int num_classes,
                                   int batch_index = 0, int index_offset = 0);

// ---------------------------------------------------------------------------
// Training targets and loss

enum class CellState : std::uint8_t { negative = 0, positive = 1, ignore = 2 };

struct ScaleTargets {
    int stride = 0;
    int grid_h = 0, grid_w = 0;
    std::vector<CellState> state;           // (row * grid_w + col) * 3 + anchor
    std::vector<std::array<float, 4>> box;  // sigma(tx), sigma(ty), tw, th targets
    std::vector<int> class_id;

    std::size_t slot(int row, int col, int anchor) const
    {
        return (static_cast<std::size_t>(row) * grid_w + col) * 3 + anchor;
    }
    int positives() const;
};

struct YoloTargets {
    std::array<ScaleTargets, 3> scales;  // strides 32, 16, 8
    int positives() const;
};

/// Each box goes to the anchor with best shape IoU and to the cell holding its
/// centre. Other anchors whose shape IoU with the box exceeds ignore_iou are
/// marked ignore at their own responsible cell. When two boxes claim one slot
/// the first keeps it. Boxes in network-input pixels; throws ArgumentError for
/// boxes outside [0, input_size].
YoloTargets assign_targets(std::span<const BBox> gt, std::span<const int> classes, const AnchorSet& anchors,
                           int input_size, float ignore_iou = 0.5f);

struct YoloLossConfig {
    int num_classes = 1;
    double lambda_coord = 5.0;
};

template <typename Scalar>
struct YoloLossResult {
    Tensor<Scalar> total;  // scalar, batch mean
    double coord = 0, objectness = 0, no_object = 0, classification = 0;
};

/// Composite loss over raw head outputs (per scale, N x B(5+C) x H x W, order
/// of kYoloStrides) and per-image targets. Summed over anchors, averaged over
/// the batch.
template <typename Scalar>
YoloLossResult<Scalar> yolo_loss(const std::vector<Tensor<Scalar>>& raw, std::span<const YoloTargets> targets,
                                 const YoloLossConfig& config);

// ---------------------------------------------------------------------------
// Network

struct YoloConfig {
    BackboneSpec backbone{BackboneFamily::tiny_darknet, 0.25, false};
    int num_classes = 1;
    int input_size = 320;
    /// Convolutions in each neck block (1, 3 or 5).
    int neck_convs = 5;
    double head_init_std = 0.01;

    void validate() const;
};

class YoloDetector {
public:
    YoloDetector(const YoloConfig& config, const AnchorSet& anchors, std::uint64_t seed);

    /// Raw head outputs in kYoloStrides order.
    std::vector<TensorF> forward(const TensorF& batch, bool training);

    /// All decoded boxes of one image of a forward result.
    std::vector<Detection> decode(const std::vector<TensorF>& raw, int batch_index = 0) const;

    const YoloConfig& config() const noexcept { return config_; }
    const AnchorSet& anchors() const noexcept { return anchors_; }
    void set_anchors(const AnchorSet& anchors) { anchors_ = anchors; }
    Network<float>& network() noexcept { return backbone_.network; }
    const Network<float>& network() const noexcept { return backbone_.network; }
    const std::array<int, 3>& head_nodes() const noexcept { return heads_; }

private:
    YoloConfig config_;
    AnchorSet anchors_;
    Backbone backbone_;
    std::array<int, 3> heads_{};
};

struct DetectOptions {
    float conf_threshold = 0.25f;
    float nms_iou = 0.45f;
};

/// Letterbox, forward, decode all scales, keep score >= conf_threshold, NMS and
/// map back to original image coordinates.
std::vector<Detection> detect_plates(YoloDetector& net, const Image& image, const DetectOptions& options);

}  // namespace lpr
