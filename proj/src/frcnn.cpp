#include "lpr/frcnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lpr/error.hpp"
#include "lpr/ops.hpp"

namespace lpr {

namespace {

const double kMaxLogScale = std::log(1000.0 / 16.0);
constexpr double kSmoothL1Beta = 1.0 / 9.0;

double smooth_l1(double d, double& grad)
{
    const double a = std::abs(d);
    if (a < kSmoothL1Beta) {
        grad = d / kSmoothL1Beta;
        return 0.5 * d * d / kSmoothL1Beta;
    }
    grad = d > 0 ? 1.0 : -1.0;
    return a - 0.5 * kSmoothL1Beta;
}

LayerSpec with_std(LayerSpec spec, double stddev)
{
    spec.init_std = stddev;
    return spec;
}

BackboneSpec truncated(BackboneSpec spec)
{
    spec.output_stride = 16;
    spec.include_classifier_head = false;
    return spec;
}

// Scalar loss node whose backward scatters a precomputed gradient buffer into one input.
template <typename Scalar>
Tensor<Scalar> fused_loss(const char* op, double value, const Tensor<Scalar>& input,
                          std::shared_ptr<std::vector<Scalar>> grad)
{
    auto impl = input.impl();
    return make_op_result<Scalar>(op, {}, {static_cast<Scalar>(value)}, {input},
                                  [impl, grad](const detail::TensorImpl<Scalar>& out) {
                                      auto sink = impl->grad_sink();
                                      const Scalar up = out.grad[0];
                                      for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += up * (*grad)[i];
                                  });
}

}  // namespace

TensorF resize_plate(const Image& crop, int height, int width)
{
    if (crop.empty()) throw ArgumentError("resize_plate: zero-dimension crop");
    return resample_window(crop, 0, 0, crop.width, crop.height, width, height);
}

RpnAnchorGrid build_rpn_anchors(int rows, int cols, const RpnAnchorConfig& config)
{
    if (rows < 1 || cols < 1 || config.stride < 1) throw ArgumentError("build_rpn_anchors: grid must be non-empty");
    if (config.areas.empty() || config.ratios.empty()) throw ArgumentError("build_rpn_anchors: no areas or ratios");
    for (double a : config.areas) {
        if (!(a > 0)) throw ArgumentError("build_rpn_anchors: anchor areas must be positive");
    }
    for (double r : config.ratios) {
        if (!(r > 0)) throw ArgumentError("build_rpn_anchors: aspect ratios must be positive");
    }
    RpnAnchorGrid grid;
    grid.rows = rows;
    grid.cols = cols;
    grid.per_cell = config.per_cell();
    grid.stride = config.stride;
    grid.anchors.reserve(static_cast<std::size_t>(rows) * cols * grid.per_cell);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const float cx = static_cast<float>((c + 0.5) * config.stride);
            const float cy = static_cast<float>((r + 0.5) * config.stride);
            for (double area : config.areas) {
                for (double ratio : config.ratios) {
                    grid.anchors.push_back(
                        {cx, cy, static_cast<float>(std::sqrt(area * ratio)), static_cast<float>(std::sqrt(area / ratio))});
                }
            }
        }
    }
    return grid;
}

Deltas encode_deltas(const BBox& anchor, const BBox& target, const DeltaWeights& weights)
{
    const double aw = anchor.w, ah = anchor.h;
    return {static_cast<float>(weights[0] * (static_cast<double>(target.cx) - anchor.cx) / aw),
            static_cast<float>(weights[1] * (static_cast<double>(target.cy) - anchor.cy) / ah),
            static_cast<float>(weights[2] * std::log(target.w / aw)),
            static_cast<float>(weights[3] * std::log(target.h / ah))};
}

BBox apply_deltas(const BBox& anchor, const Deltas& deltas, const DeltaWeights& weights)
{
    const double dx = deltas[0] / weights[0], dy = deltas[1] / weights[1];
    const double dw = std::min(deltas[2] / weights[2], kMaxLogScale);
    const double dh = std::min(deltas[3] / weights[3], kMaxLogScale);
    return {static_cast<float>(anchor.cx + dx * anchor.w), static_cast<float>(anchor.cy + dy * anchor.h),
            static_cast<float>(anchor.w * std::exp(dw)), static_cast<float>(anchor.h * std::exp(dh))};
}

std::vector<Proposal> propose(std::span<const float> objectness, std::span<const Deltas> deltas,
                              const RpnAnchorGrid& grid, const ProposalConfig& config, int image_width,
                              int image_height)
{
    if (objectness.size() != grid.anchors.size() || deltas.size() != grid.anchors.size()) {
        throw ArgumentError("propose: expected " + std::to_string(grid.size()) + " scores and deltas");
    }
    std::vector<Proposal> candidates;
    for (int i = 0; i < grid.size(); ++i) {
        BBox b = apply_deltas(grid.anchors[static_cast<std::size_t>(i)], deltas[static_cast<std::size_t>(i)])
                     .clipped(static_cast<float>(image_width), static_cast<float>(image_height));
        if (b.w < config.min_size || b.h < config.min_size) continue;
        candidates.push_back({b, objectness[static_cast<std::size_t>(i)], i});
    }
    std::sort(candidates.begin(), candidates.end(), [](const Proposal& a, const Proposal& b) {
        if (a.objectness != b.objectness) return a.objectness > b.objectness;
        return a.anchor_index < b.anchor_index;
    });
    if (static_cast<int>(candidates.size()) > config.pre_nms_top) candidates.resize(static_cast<std::size_t>(config.pre_nms_top));
    std::vector<BBox> boxes;
    std::vector<float> scores;
    for (const auto& p : candidates) {
        boxes.push_back(p.box);
        scores.push_back(p.objectness);
    }
    std::vector<Proposal> out;
    for (int k : nms_indices(boxes, scores, config.nms_iou)) {
        if (static_cast<int>(out.size()) >= config.post_nms_top) break;
        out.push_back(candidates[static_cast<std::size_t>(k)]);
    }
    return out;
}

std::vector<float> rpn_objectness(const TensorF& logits, int batch_index)
{
    if (logits.rank() != 4 || logits.dim(1) % 2 != 0) throw ShapeError("rpn_objectness: bad logits " + shape_str(logits.shape()));
    const int a = logits.dim(1) / 2, h = logits.dim(2), w = logits.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const float* base = logits.data().data() + static_cast<std::size_t>(batch_index) * logits.dim(1) * plane;
    std::vector<float> out(plane * a);
    for (std::size_t p = 0; p < plane; ++p) {
        for (int k = 0; k < a; ++k) {
            const double bg = base[(2 * k) * plane + p], obj = base[(2 * k + 1) * plane + p];
            out[p * a + k] = static_cast<float>(1.0 / (1.0 + std::exp(bg - obj)));
        }
    }
    return out;
}

std::vector<Deltas> rpn_deltas(const TensorF& deltas, int batch_index)
{
    if (deltas.rank() != 4 || deltas.dim(1) % 4 != 0) throw ShapeError("rpn_deltas: bad deltas " + shape_str(deltas.shape()));
    const int a = deltas.dim(1) / 4, h = deltas.dim(2), w = deltas.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const float* base = deltas.data().data() + static_cast<std::size_t>(batch_index) * deltas.dim(1) * plane;
    std::vector<Deltas> out(plane * a);
    for (std::size_t p = 0; p < plane; ++p) {
        for (int k = 0; k < a; ++k) {
            for (int j = 0; j < 4; ++j) out[p * a + k][static_cast<std::size_t>(j)] = base[(4 * k + j) * plane + p];
        }
    }
    return out;
}

TensorF roi_pool_boxes(const TensorF& feature, std::span<const BBox> boxes, int output_size, int stride)
{
    std::vector<ops::RoiBox> rois;
    rois.reserve(boxes.size());
    for (const auto& b : boxes) rois.push_back({b.x1(), b.y1(), b.x2(), b.y2()});
    return ops::roi_pool(feature, std::span<const ops::RoiBox>(rois), output_size, output_size, 1.0 / stride);
}

// ---------------------------------------------------------------------------

RpnTargets sample_rpn_targets(const RpnAnchorGrid& grid, std::span<const BBox> gt, const RpnSamplingConfig& config,
                              std::mt19937_64& rng)
{
    const std::size_t n = grid.anchors.size();
    std::vector<float> best(n, 0.0f);
    std::vector<int> match(n, -1);
    std::vector<float> gt_best(gt.size(), 0.0f);
    std::vector<float> ious(n * gt.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const float v = iou(grid.anchors[i], gt[g]);
            ious[i * gt.size() + g] = v;
            if (v > best[i] || match[i] < 0) {
                best[i] = v;
                match[i] = static_cast<int>(g);
            }
            gt_best[g] = std::max(gt_best[g], v);
        }
    }
    std::vector<int> label(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        if (best[i] < config.negative_iou) label[i] = 0;
        if (!gt.empty() && best[i] >= config.positive_iou) label[i] = 1;
    }
    // Anchors tied for the best overlap with some box are positive as well.
    for (std::size_t g = 0; g < gt.size(); ++g) {
        if (gt_best[g] <= 0) continue;
        for (std::size_t i = 0; i < n; ++i) {
            if (ious[i * gt.size() + g] == gt_best[g]) label[i] = 1;
        }
    }
    std::vector<int> pos, neg;
    for (std::size_t i = 0; i < n; ++i) {
        if (label[i] == 1) pos.push_back(static_cast<int>(i));
        if (label[i] == 0) neg.push_back(static_cast<int>(i));
    }
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    const std::size_t n_pos = std::min(pos.size(), static_cast<std::size_t>(config.batch * config.positive_fraction));
    const std::size_t n_neg = std::min(neg.size(), static_cast<std::size_t>(config.batch) - n_pos);
    RpnTargets t;
    for (std::size_t k = 0; k < n_pos; ++k) {
        const int i = pos[k];
        t.anchors.push_back(i);
        t.labels.push_back(1);
        t.regression.push_back(encode_deltas(grid.anchors[static_cast<std::size_t>(i)], gt[static_cast<std::size_t>(match[static_cast<std::size_t>(i)])]));
    }
    for (std::size_t k = 0; k < n_neg; ++k) {
        t.anchors.push_back(neg[k]);
        t.labels.push_back(0);
        t.regression.push_back({0, 0, 0, 0});
    }
    return t;
}

RoiTargets sample_roi_targets(std::span<const Proposal> proposals, std::span<const BBox> gt,
                              std::span<const int> classes, const RoiSamplingConfig& config, std::mt19937_64& rng)
{
    if (gt.size() != classes.size()) throw ArgumentError("sample_roi_targets: boxes and classes differ in length");
    std::vector<BBox> candidates;
    for (const auto& p : proposals) candidates.push_back(p.box);
    candidates.insert(candidates.end(), gt.begin(), gt.end());
    std::vector<int> fg, bg;
    std::vector<int> match(candidates.size(), -1);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        float best = 0;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const float v = iou(candidates[i], gt[g]);
            if (v > best) {
                best = v;
                match[i] = static_cast<int>(g);
            }
        }
        if (best >= config.foreground_iou) {
            fg.push_back(static_cast<int>(i));
        } else if (best >= config.background_low || gt.empty()) {
            bg.push_back(static_cast<int>(i));
        }
    }
    std::shuffle(fg.begin(), fg.end(), rng);
    std::shuffle(bg.begin(), bg.end(), rng);
    const std::size_t n_fg = std::min(fg.size(), static_cast<std::size_t>(config.batch * config.positive_fraction));
    const std::size_t n_bg = std::min(bg.size(), static_cast<std::size_t>(config.batch) - n_fg);
    RoiTargets t;
    for (std::size_t k = 0; k < n_fg; ++k) {
        const auto i = static_cast<std::size_t>(fg[k]);
        const auto g = static_cast<std::size_t>(match[i]);
        t.rois.push_back(candidates[i]);
        t.labels.push_back(classes[g] + 1);
        t.regression.push_back(encode_deltas(candidates[i], gt[g], kHeadDeltaWeights));
    }
    for (std::size_t k = 0; k < n_bg; ++k) {
        t.rois.push_back(candidates[static_cast<std::size_t>(bg[k])]);
        t.labels.push_back(0);
        t.regression.push_back({0, 0, 0, 0});
    }
    return t;
}

template <typename Scalar>
LossPair<Scalar> rpn_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& deltas, const RpnTargets& targets)
{
    if (logits.rank() != 4 || deltas.rank() != 4 || logits.dim(0) != 1 || deltas.dim(0) != 1 ||
        logits.dim(1) * 2 != deltas.dim(1) || logits.dim(2) != deltas.dim(2) || logits.dim(3) != deltas.dim(3)) {
        throw ShapeError("rpn_loss: logits " + shape_str(logits.shape()) + " and deltas " + shape_str(deltas.shape()) +
                         " disagree");
    }
    const int a = logits.dim(1) / 2;
    const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
    const double count = static_cast<double>(targets.anchors.size());
    auto gl = std::make_shared<std::vector<Scalar>>(logits.data().size(), Scalar(0));
    auto gd = std::make_shared<std::vector<Scalar>>(deltas.data().size(), Scalar(0));
    double ce = 0, loc = 0;
    const auto zl = logits.data();
    const auto zd = deltas.data();
    for (std::size_t s = 0; s < targets.anchors.size(); ++s) {
        const auto idx = static_cast<std::size_t>(targets.anchors[s]);
        const std::size_t p = idx / a;
        const std::size_t k = idx % a;
        if (p >= plane) throw ArgumentError("rpn_loss: anchor index outside the grid");
        const std::size_t ib = 2 * k * plane + p, io = (2 * k + 1) * plane + p;
        const double zb = zl[ib], zo = zl[io];
        const double m = std::max(zb, zo);
        const double lse = m + std::log(std::exp(zb - m) + std::exp(zo - m));
        const double po = std::exp(zo - lse);
        const bool positive = targets.labels[s] == 1;
        ce += lse - (positive ? zo : zb);
        (*gl)[io] += static_cast<Scalar>((po - (positive ? 1.0 : 0.0)) / count);
        (*gl)[ib] += static_cast<Scalar>(((1 - po) - (positive ? 0.0 : 1.0)) / count);
        if (!positive) continue;
        for (std::size_t j = 0; j < 4; ++j) {
            const std::size_t id = (4 * k + j) * plane + p;
            double g = 0;
            loc += smooth_l1(zd[id] - targets.regression[s][j], g);
            (*gd)[id] += static_cast<Scalar>(g / count);
        }
    }
    if (count > 0) {
        ce /= count;
        loc /= count;
    }
    return {fused_loss<Scalar>("rpn_objectness", ce, logits, gl), fused_loss<Scalar>("rpn_localization", loc, deltas, gd)};
}

template <typename Scalar>
LossPair<Scalar> detector_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& deltas, const RoiTargets& targets)
{
    const int n = static_cast<int>(targets.labels.size());
    if (logits.rank() != 2 || logits.dim(0) != n || deltas.rank() != 3 || deltas.dim(0) != n ||
        deltas.dim(1) + 1 != logits.dim(1) || deltas.dim(2) != 4) {
        throw ShapeError("detector_loss: logits " + shape_str(logits.shape()) + ", deltas " + shape_str(deltas.shape()) +
                         " for " + std::to_string(n) + " ROIs");
    }
    const int k = logits.dim(1);
    auto gl = std::make_shared<std::vector<Scalar>>(logits.data().size(), Scalar(0));
    auto gd = std::make_shared<std::vector<Scalar>>(deltas.data().size(), Scalar(0));
    double ce = 0, loc = 0;
    const auto zl = logits.data();
    const auto zd = deltas.data();
    for (int r = 0; r < n; ++r) {
        const int label = targets.labels[static_cast<std::size_t>(r)];
        if (label < 0 || label >= k) throw ArgumentError("detector_loss: label out of range");
        const Scalar* row = &zl[static_cast<std::size_t>(r) * k];
        double m = row[0];
        for (int c = 1; c < k; ++c) m = std::max<double>(m, row[c]);
        double z = 0;
        for (int c = 0; c < k; ++c) z += std::exp(row[c] - m);
        const double lse = m + std::log(z);
        ce += lse - row[label];
        for (int c = 0; c < k; ++c) {
            (*gl)[static_cast<std::size_t>(r) * k + c] =
                static_cast<Scalar>((std::exp(row[c] - lse) - (c == label ? 1.0 : 0.0)) / n);
        }
        if (label == 0) continue;
        for (int j = 0; j < 4; ++j) {
            const std::size_t id = (static_cast<std::size_t>(r) * (k - 1) + (label - 1)) * 4 + j;
            double g = 0;
            loc += smooth_l1(zd[id] - targets.regression[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)], g);
            (*gd)[id] = static_cast<Scalar>(g / n);
        }
    }
    if (n > 0) {
        ce /= n;
        loc /= n;
    }
    return {fused_loss<Scalar>("roi_classification", ce, logits, gl),
            fused_loss<Scalar>("roi_localization", loc, deltas, gd)};
}

template LossPair<float> rpn_loss(const TensorF&, const TensorF&, const RpnTargets&);
template LossPair<double> rpn_loss(const TensorD&, const TensorD&, const RpnTargets&);
template LossPair<float> detector_loss(const TensorF&, const TensorF&, const RoiTargets&);
template LossPair<double> detector_loss(const TensorD&, const TensorD&, const RoiTargets&);

template <typename Scalar>
Tensor<Scalar> RecognizerLosses<Scalar>::total() const
{
    return ops::add_scalars<Scalar>({rpn_objectness, rpn_localization, classification, localization});
}

template struct RecognizerLosses<float>;
template struct RecognizerLosses<double>;

// ---------------------------------------------------------------------------

void RecognizerConfig::validate() const
{
    truncated(backbone).validate();
    if (feature_channels < 1 || rpn_channels < 1 || fc_hidden < 1) throw ArgumentError("recognizer widths must be >= 1");
    if (num_classes < 1) throw ArgumentError("num_classes must be >= 1");
    if (pool_size < 1) throw ArgumentError("pool_size must be >= 1");
    if (anchors.stride != 16) throw ArgumentError("recognizer anchors must sit on the stride-16 grid");
    if (proposals.pre_nms_top < 1 || proposals.post_nms_top < 1) throw ArgumentError("proposal budgets must be >= 1");
    if (!(proposals.nms_iou >= 0 && proposals.nms_iou <= 1)) throw ArgumentError("proposal NMS IoU outside [0, 1]");
    if (rpn_sampling.batch < 1 || roi_sampling.batch < 1) throw ArgumentError("sampling batch sizes must be >= 1");
    if (!(rpn_sampling.positive_fraction > 0 && rpn_sampling.positive_fraction <= 1) ||
        !(roi_sampling.positive_fraction > 0 && roi_sampling.positive_fraction <= 1)) {
        throw ArgumentError("positive fractions must lie in (0, 1]");
    }
}

Recognizer::Recognizer(const RecognizerConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      backbone_(build_backbone(truncated(config.backbone), seed)),
      grid_(build_rpn_anchors(kPlateHeight / 16, kPlateWidth / 16, config.anchors)),
      init_rng_(seed ^ 0x5bd1e995ULL),
      projection_(LayerSpec::conv(config.feature_channels, 1, 1, 0, true), backbone_.channels_at(backbone_.stride16),
                  init_rng_),
      rpn_conv_(LayerSpec::conv(config.rpn_channels, 3, 1, 1, true), config.feature_channels, init_rng_),
      rpn_cls_(with_std(LayerSpec::conv(2 * grid_.per_cell, 1, 1, 0, true), 0.01), config.rpn_channels, init_rng_),
      rpn_reg_(with_std(LayerSpec::conv(4 * grid_.per_cell, 1, 1, 0, true), 0.01), config.rpn_channels, init_rng_),
      fc1_(LayerSpec::fully_connected(config.fc_hidden), config.feature_channels * config.pool_size * config.pool_size,
           init_rng_),
      fc2_(LayerSpec::fully_connected(config.fc_hidden), config.fc_hidden, init_rng_),
      cls_(with_std(LayerSpec::fully_connected(config.num_classes + 1), 0.01), config.fc_hidden, init_rng_),
      reg_(with_std(LayerSpec::fully_connected(4 * config.num_classes), 0.001), config.fc_hidden, init_rng_)
{
}

TensorF Recognizer::features(const TensorF& batch, bool training)
{
    if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) % 16 != 0 || batch.dim(3) % 16 != 0) {
        throw ShapeError("recognizer input must be N x 3 x H x W with H, W divisible by 16, got " +
                         shape_str(batch.shape()));
    }
    auto outs = backbone_.network.forward(batch, training, backbone_.stride16);
    return apply_layer(outs[static_cast<std::size_t>(backbone_.stride16)], projection_, training);
}

RpnOutput Recognizer::rpn_forward(const TensorF& features)
{
    if (features.rank() != 4 || features.dim(1) != config_.feature_channels) {
        throw ShapeError("rpn_forward: expected N x " + std::to_string(config_.feature_channels) + " x H x W, got " +
                         shape_str(features.shape()));
    }
    auto h = ops::relu(apply_layer(features, rpn_conv_));
    return {apply_layer(h, rpn_cls_), apply_layer(h, rpn_reg_)};
}

RoiHeadOutput Recognizer::classify_rois(const TensorF& pooled)
{
    auto h = ops::relu(apply_layer(pooled, fc1_));
    h = ops::relu(apply_layer(h, fc2_));
    RoiHeadOutput out;
    out.logits = apply_layer(h, cls_);
    out.scores = ops::softmax(out.logits);
    out.deltas = ops::reshape(apply_layer(h, reg_), {pooled.dim(0), config_.num_classes, 4});
    return out;
}

RecognizerLosses<float> Recognizer::losses(const TensorF& batch, std::span<const std::vector<BBox>> gt,
                                           std::span<const std::vector<int>> classes, std::mt19937_64& rng)
{
    const int n = batch.dim(0);
    if (static_cast<int>(gt.size()) != n || static_cast<int>(classes.size()) != n) {
        throw ArgumentError("recognizer losses: one gt list per image expected");
    }
    auto feats = features(batch, true);
    auto rpn = rpn_forward(feats);
    std::vector<TensorF> obj, rloc, cls, loc;
    for (int i = 0; i < n; ++i) {
        auto logits_i = ops::select_batch(rpn.logits, i);
        auto deltas_i = ops::select_batch(rpn.deltas, i);
        auto rt = sample_rpn_targets(grid_, gt[static_cast<std::size_t>(i)], config_.rpn_sampling, rng);
        auto rl = rpn_loss(logits_i, deltas_i, rt);
        obj.push_back(rl.classification);
        rloc.push_back(rl.localization);

        std::vector<Proposal> props;
        {
            NoGradGuard no_grad;
            props = propose(rpn_objectness(rpn.logits, i), rpn_deltas(rpn.deltas, i), grid_, config_.proposals,
                            batch.dim(3), batch.dim(2));
        }
        auto roi = sample_roi_targets(props, gt[static_cast<std::size_t>(i)], classes[static_cast<std::size_t>(i)],
                                      config_.roi_sampling, rng);
        if (roi.rois.empty()) continue;
        auto pooled = roi_pool_boxes(ops::select_batch(feats, i), roi.rois, config_.pool_size, 16);
        auto head = classify_rois(pooled);
        auto dl = detector_loss(head.logits, head.deltas, roi);
        cls.push_back(dl.classification);
        loc.push_back(dl.localization);
    }
    const double inv = 1.0 / n;
    auto mean = [&](const std::vector<TensorF>& v) {
        return v.empty() ? TensorF::scalar(0.0f) : ops::scale(ops::add_scalars(v), inv);
    };
    return {mean(obj), mean(rloc), mean(cls), mean(loc)};
}

Recognizer::NamedTensors Recognizer::named_tensors() const
{
    auto out = backbone_.network.named_tensors("backbone.");
    const std::pair<const char*, const Layer<float>*> heads[] = {
        {"proj.", &projection_}, {"rpn_conv.", &rpn_conv_}, {"rpn_cls.", &rpn_cls_}, {"rpn_reg.", &rpn_reg_},
        {"fc1.", &fc1_},         {"fc2.", &fc2_},           {"cls.", &cls_},         {"reg.", &reg_}};
    for (const auto& [prefix, layer] : heads) {
        for (auto& [name, t] : layer->named_tensors()) out.emplace_back(prefix + name, t);
    }
    return out;
}

Recognizer::NamedTensors Recognizer::named_parameters() const
{
    auto out = backbone_.network.named_parameters("backbone.");
    const std::pair<const char*, const Layer<float>*> heads[] = {
        {"proj.", &projection_}, {"rpn_conv.", &rpn_conv_}, {"rpn_cls.", &rpn_cls_}, {"rpn_reg.", &rpn_reg_},
        {"fc1.", &fc1_},         {"fc2.", &fc2_},           {"cls.", &cls_},         {"reg.", &reg_}};
    for (const auto& [prefix, layer] : heads) {
        for (auto& [name, t] : layer->named_parameters()) out.emplace_back(prefix + name, t);
    }
    return out;
}

std::vector<CharDetection> per_class_nms(std::span<const CharDetection> dets, float iou_threshold)
{
    std::vector<CharDetection> out;
    int max_class = -1;
    for (const auto& d : dets) max_class = std::max(max_class, d.class_id);
    for (int c = 0; c <= max_class; ++c) {
        std::vector<CharDetection> group;
        for (const auto& d : dets) {
            if (d.class_id == c) group.push_back(d);
        }
        std::stable_sort(group.begin(), group.end(),
                         [](const CharDetection& a, const CharDetection& b) { return a.score > b.score; });
        std::vector<BBox> boxes;
        std::vector<float> scores;
        for (const auto& d : group) {
            boxes.push_back(d.box);
            scores.push_back(d.score);
        }
        for (int k : nms_indices(boxes, scores, iou_threshold)) out.push_back(group[static_cast<std::size_t>(k)]);
    }
    std::stable_sort(out.begin(), out.end(), [](const CharDetection& a, const CharDetection& b) { return a.score > b.score; });
    return out;
}

std::vector<CharDetection> recognize_tensor(Recognizer& net, const TensorF& plate, float score_threshold,
                                            float nms_iou)
{
    NoGradGuard no_grad;
    const int height = plate.dim(2), width = plate.dim(3);
    auto feats = net.features(plate, false);
    auto rpn = net.rpn_forward(feats);
    auto props = propose(rpn_objectness(rpn.logits), rpn_deltas(rpn.deltas), net.anchors(), net.config().proposals,
                         width, height);
    if (props.empty()) return {};
    std::vector<BBox> rois;
    for (const auto& p : props) rois.push_back(p.box);
    auto head = net.classify_rois(roi_pool_boxes(feats, rois, net.config().pool_size, 16));
    const int c_count = net.config().num_classes;
    const auto scores = head.scores.data();
    const auto deltas = head.deltas.data();

    std::vector<std::vector<CharDetection>> per_class(static_cast<std::size_t>(c_count));
    for (std::size_t r = 0; r < rois.size(); ++r) {
        for (int c = 0; c < c_count; ++c) {
            const float s = scores[r * (c_count + 1) + c + 1];
            if (s < score_threshold) continue;
            const float* d = &deltas[(r * c_count + c) * 4];
            BBox b = apply_deltas(rois[r], {d[0], d[1], d[2], d[3]}, kHeadDeltaWeights)
                         .clipped(static_cast<float>(width), static_cast<float>(height));
            if (b.w < 1 || b.h < 1) continue;
            per_class[static_cast<std::size_t>(c)].push_back({b, c, s});
        }
    }
    std::vector<CharDetection> flat;
    for (auto& dets : per_class) flat.insert(flat.end(), dets.begin(), dets.end());
    auto out = per_class_nms(flat, nms_iou);
    if (out.size() > 100) out.resize(100);
    return out;
}

std::vector<CharDetection> recognize_characters(Recognizer& net, const Image& crop, float score_threshold,
                                                float nms_iou)
{
    auto out = recognize_tensor(net, resize_plate(crop), score_threshold, nms_iou);
    const float sx = static_cast<float>(crop.width) / kPlateWidth, sy = static_cast<float>(crop.height) / kPlateHeight;
    for (auto& d : out) d.box = {d.box.cx * sx, d.box.cy * sy, d.box.w * sx, d.box.h * sy};
    return out;
}

}  // namespace lpr
