#pragma once

// Two-stage character recognizer: RPN over a stride-16 feature map, ROI max
// pooling and a classification / per-class regression head.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lpr/backbones.hpp"
#include "lpr/bbox.hpp"
#include "lpr/charset.hpp"
#include "lpr/image.hpp"

namespace lpr {

inline constexpr int kPlateHeight = 128;
inline constexpr int kPlateWidth = 640;

/// Non-aspect-preserving bilinear resize to 1 x 3 x height x width.
TensorF resize_plate(const Image& crop, int height = kPlateHeight, int width = kPlateWidth);

// ---------------------------------------------------------------------------
// Anchors and box coding

struct RpnAnchorConfig {
    std::vector<double> areas{16.0 * 16, 32.0 * 32, 64.0 * 64, 96.0 * 96};
    std::vector<double> ratios{0.5, 1.0, 2.0};  // width / height
    int stride = 16;

    int per_cell() const { return static_cast<int>(areas.size() * ratios.size()); }
};

/// Anchor index = (row * cols + col) * per_cell + k with k = area_idx * ratios + ratio_idx.
struct RpnAnchorGrid {
    int rows = 0, cols = 0, per_cell = 0, stride = 16;
    std::vector<BBox> anchors;

    int size() const { return static_cast<int>(anchors.size()); }
};

/// Throws ArgumentError for non-positive areas, ratios or grid sizes.
RpnAnchorGrid build_rpn_anchors(int rows = kPlateHeight / 16, int cols = kPlateWidth / 16,
                                const RpnAnchorConfig& config = {});

using Deltas = std::array<float, 4>;
using DeltaWeights = std::array<double, 4>;
inline constexpr DeltaWeights kRpnDeltaWeights{1, 1, 1, 1};
inline constexpr DeltaWeights kHeadDeltaWeights{10, 10, 5, 5};

Deltas encode_deltas(const BBox& anchor, const BBox& target, const DeltaWeights& weights = kRpnDeltaWeights);
/// cx + dx*w, cy + dy*h, w*exp(dw), h*exp(dh), with deltas divided by the
/// weights and dw, dh clamped at log(1000/16). No clipping.
BBox apply_deltas(const BBox& anchor, const Deltas& deltas, const DeltaWeights& weights = kRpnDeltaWeights);

// ---------------------------------------------------------------------------
// Proposals

struct Proposal {
    BBox box;
    float objectness = 0;
    int anchor_index = 0;
};

struct ProposalConfig {
    int pre_nms_top = 2000;
    int post_nms_top = 300;
    float nms_iou = 0.7f;
    float min_size = 2.0f;
};

/// Decode every anchor, clip to the image, drop boxes with a side under
/// min_size, keep the pre_nms_top best by objectness (ties: lower anchor
/// index), NMS, keep at most post_nms_top.
std::vector<Proposal> propose(std::span<const float> objectness, std::span<const Deltas> deltas,
                              const RpnAnchorGrid& grid, const ProposalConfig& config, int image_width,
                              int image_height);

/// Per-anchor object probability (softmax of the background/object logit pair
/// at channels 2k, 2k+1) from N x 2A x H x W logits, in anchor order.
std::vector<float> rpn_objectness(const TensorF& logits, int batch_index = 0);
/// Per-anchor deltas from N x 4A x H x W regression output, in anchor order.
std::vector<Deltas> rpn_deltas(const TensorF& deltas, int batch_index = 0);

/// ROI max pool of proposal boxes (input pixels) from a 1 x C x H x W map.
TensorF roi_pool_boxes(const TensorF& feature, std::span<const BBox> boxes, int output_size, int stride);

// ---------------------------------------------------------------------------
// Training targets and losses

struct RpnSamplingConfig {
    int batch = 256;
    double positive_fraction = 0.5;
    float positive_iou = 0.7f;
    float negative_iou = 0.3f;
};

struct RpnTargets {
    std::vector<int> anchors;           // sampled anchor indices
    std::vector<std::uint8_t> labels;   // 1 object, 0 background
    std::vector<Deltas> regression;     // valid where label == 1
};

/// Labels anchors (positive: IoU >= positive_iou or best for some gt box;
/// negative: IoU < negative_iou) and samples a minibatch.
RpnTargets sample_rpn_targets(const RpnAnchorGrid& grid, std::span<const BBox> gt, const RpnSamplingConfig& config,
                              std::mt19937_64& rng);

struct RoiSamplingConfig {
    int batch = 128;
    double positive_fraction = 0.25;
    float foreground_iou = 0.5f;
    float background_low = 0.1f;
};

struct RoiTargets {
    std::vector<BBox> rois;
    std::vector<int> labels;  // 0 background, class id + 1 otherwise
    std::vector<Deltas> regression;
};

/// Candidates are the proposals plus the gt boxes themselves.
RoiTargets sample_roi_targets(std::span<const Proposal> proposals, std::span<const BBox> gt,
                              std::span<const int> classes, const RoiSamplingConfig& config, std::mt19937_64& rng);

template <typename Scalar>
struct LossPair {
    Tensor<Scalar> classification;  // objectness for the RPN
    Tensor<Scalar> localization;
};

/// Cross-entropy over sampled anchors and smooth-L1 (beta 1/9) over the
/// positives, both divided by the sample count. logits 1 x 2A x H x W,
/// deltas 1 x 4A x H x W.
template <typename Scalar>
LossPair<Scalar> rpn_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& deltas, const RpnTargets& targets);

/// Cross-entropy over all ROIs and smooth-L1 (beta 1/9) on the labelled
/// class's regressor at foreground ROIs, divided by the ROI count.
/// logits N x (C+1), deltas N x C x 4.
template <typename Scalar>
LossPair<Scalar> detector_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& deltas, const RoiTargets& targets);

// ---------------------------------------------------------------------------
// Network

struct RecognizerConfig {
    BackboneSpec backbone{BackboneFamily::tiny_resnet, 1.0, false, 1000, 16};
    int feature_channels = 512;
    int rpn_channels = 512;
    int fc_hidden = 1024;
    int num_classes = 25;
    int pool_size = 7;
    RpnAnchorConfig anchors;
    ProposalConfig proposals;
    RpnSamplingConfig rpn_sampling;
    RoiSamplingConfig roi_sampling;

    void validate() const;
};

struct RpnOutput {
    TensorF logits;  // N x 2A x H x W
    TensorF deltas;  // N x 4A x H x W
};

struct RoiHeadOutput {
    TensorF logits;  // N x (C+1)
    TensorF scores;  // softmax of logits, column 0 background
    TensorF deltas;  // N x C x 4
};

struct CharDetection {
    BBox box;
    int class_id = 0;
    float score = 0;
};

template <typename Scalar>
struct RecognizerLosses {
    Tensor<Scalar> rpn_objectness, rpn_localization, classification, localization;
    Tensor<Scalar> total() const;
};

class Recognizer {
public:
    using NamedTensors = std::vector<std::pair<std::string, TensorF>>;

    Recognizer(const RecognizerConfig& config, std::uint64_t seed);

    /// N x 3 x 128 x 640 -> N x feature_channels x 8 x 40.
    TensorF features(const TensorF& batch, bool training);
    RpnOutput rpn_forward(const TensorF& features);
    RoiHeadOutput classify_rois(const TensorF& pooled);

    /// Joint loss over a batch of plate tensors with per-image gt boxes and
    /// class ids in 128 x 640 pixel units. Averaged over the batch.
    RecognizerLosses<float> losses(const TensorF& batch, std::span<const std::vector<BBox>> gt,
                                   std::span<const std::vector<int>> classes, std::mt19937_64& rng);

    const RecognizerConfig& config() const noexcept { return config_; }
    const RpnAnchorGrid& anchors() const noexcept { return grid_; }
    NamedTensors named_tensors() const;
    NamedTensors named_parameters() const;
    Network<float>& backbone_network() noexcept { return backbone_.network; }

private:
    RecognizerConfig config_;
    Backbone backbone_;
    RpnAnchorGrid grid_;
    std::mt19937_64 init_rng_;
    Layer<float> projection_, rpn_conv_, rpn_cls_, rpn_reg_, fc1_, fc2_, cls_, reg_;
};

/// NMS within each class only. Output in descending score order.
std::vector<CharDetection> per_class_nms(std::span<const CharDetection> dets, float iou_threshold);

/// resize -> features -> RPN -> proposals -> ROI pool -> head -> per-class NMS
/// -> score threshold. Boxes in crop pixel coordinates.
std::vector<CharDetection> recognize_characters(Recognizer& net, const Image& crop, float score_threshold,
                                                float nms_iou);

/// Same, starting from a 1 x 3 x 128 x 640 tensor; boxes in tensor pixels.
std::vector<CharDetection> recognize_tensor(Recognizer& net, const TensorF& plate, float score_threshold,
                                            float nms_iou);

}  // namespace lpr
