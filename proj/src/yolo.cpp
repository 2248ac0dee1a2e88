#include "lpr/yolo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "lpr/error.hpp"

namespace lpr {

namespace {

template <typename T>
T sigmoid(T z)
{
    return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

// log(1 + exp(z)) without overflow.
template <typename T>
T softplus(T z)
{
    return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

int scale_of_stride(int stride)
{
    for (int s = 0; s < 3; ++s) {
        if (kYoloStrides[static_cast<std::size_t>(s)] == stride) return s;
    }
    throw ArgumentError("no YOLO head at stride " + std::to_string(stride));
}

}  // namespace

int head_channels(int boxes_per_cell, int num_classes)
{
    if (boxes_per_cell < 1 || num_classes < 1) throw ArgumentError("head_channels: B and C must be >= 1");
    return boxes_per_cell * (5 + num_classes);
}

int total_boxes(int input_size, int boxes_per_cell)
{
    if (input_size <= 0 || input_size % 32 != 0) {
        throw ArgumentError("total_boxes: input size " + std::to_string(input_size) + " is not divisible by 32");
    }
    if (boxes_per_cell < 1) throw ArgumentError("total_boxes: B must be >= 1");
    int cells = 0;
    for (int stride : kYoloStrides) cells += (input_size / stride) * (input_size / stride);
    return cells * boxes_per_cell;
}

std::vector<Detection> nms(std::span<const Detection> dets, float iou_threshold)
{
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const float sa = dets[a].score(), sb = dets[b].score();
        if (sa != sb) return sa > sb;
        return dets[a].index < dets[b].index;
    });
    std::vector<BBox> boxes;
    std::vector<float> scores;
    for (int i : order) {
        boxes.push_back(dets[i].box);
        scores.push_back(dets[i].score());
    }
    std::vector<Detection> kept;
    for (int k : nms_indices(boxes, scores, iou_threshold)) kept.push_back(dets[order[k]]);
    return kept;
}

// ---------------------------------------------------------------------------

BBox LetterboxTransform::map(const BBox& b) const
{
    return {static_cast<float>(map_x(b.cx)), static_cast<float>(map_y(b.cy)), static_cast<float>(b.w * scale_x),
            static_cast<float>(b.h * scale_y)};
}

BBox LetterboxTransform::unmap(const BBox& b) const
{
    return {static_cast<float>(unmap_x(b.cx)), static_cast<float>(unmap_y(b.cy)), static_cast<float>(b.w / scale_x),
            static_cast<float>(b.h / scale_y)};
}

LetterboxTransform letterbox_transform(int width, int height, int target)
{
    if (width <= 0 || height <= 0) throw ArgumentError("letterbox: zero-dimension image");
    if (target <= 0) throw ArgumentError("letterbox: target must be positive");
    const double s = std::min(static_cast<double>(target) / width, static_cast<double>(target) / height);
    const int new_w = std::clamp(static_cast<int>(std::lround(width * s)), 1, target);
    const int new_h = std::clamp(static_cast<int>(std::lround(height * s)), 1, target);
    LetterboxTransform t;
    t.source_width = width;
    t.source_height = height;
    t.target = target;
    t.scale_x = static_cast<double>(new_w) / width;
    t.scale_y = static_cast<double>(new_h) / height;
    t.pad_x = (target - new_w) / 2;
    t.pad_y = (target - new_h) / 2;
    return t;
}

Letterboxed letterbox(const Image& image, int target)
{
    if (image.empty()) throw ArgumentError("letterbox: zero-dimension image");
    Letterboxed out;
    out.transform = letterbox_transform(image.width, image.height, target);
    const auto& t = out.transform;
    const int new_w = static_cast<int>(std::lround(t.scale_x * image.width));
    const int new_h = static_cast<int>(std::lround(t.scale_y * image.height));
    TensorF inner = resample_window(image, 0, 0, image.width, image.height, new_w, new_h);
    out.tensor = TensorF::full({1, 3, target, target}, 0.5f);
    auto dst = out.tensor.data();
    auto src = inner.data();
    const int px = static_cast<int>(t.pad_x), py = static_cast<int>(t.pad_y);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < new_h; ++y) {
            const float* row = &src[(static_cast<std::size_t>(c) * new_h + y) * new_w];
            std::copy(row, row + new_w, &dst[(static_cast<std::size_t>(c) * target + y + py) * target + px]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

AnchorSet::AnchorSet(std::array<AnchorWH, 9> anchors) : anchors_(anchors)
{
    for (std::size_t i = 0; i < anchors_.size(); ++i) {
        if (!(anchors_[i].w > 0 && anchors_[i].h > 0)) throw ArgumentError("anchor sizes must be positive");
        if (i > 0 && anchors_[i].w * anchors_[i].h < anchors_[i - 1].w * anchors_[i - 1].h) {
            throw ArgumentError("anchors must be sorted by ascending area");
        }
    }
}

AnchorSet AnchorSet::fallback()
{
    return AnchorSet({{{36, 8}, {44, 10}, {52, 11}, {60, 13}, {68, 15}, {78, 17}, {88, 19}, {100, 22}, {116, 25}}});
}

int AnchorSet::first_index(int stride)
{
    switch (stride) {
    case 8: return 0;
    case 16: return 3;
    case 32: return 6;
    default: throw ArgumentError("no anchors for stride " + std::to_string(stride));
    }
}

float shape_iou(float w1, float h1, float w2, float h2)
{
    const double inter = static_cast<double>(std::min(w1, w2)) * std::min(h1, h2);
    const double uni = static_cast<double>(w1) * h1 + static_cast<double>(w2) * h2 - inter;
    return uni > 0 ? static_cast<float>(inter / uni) : 0.0f;
}

AnchorSet kmeans_anchors(std::span<const AnchorWH> sizes, std::uint64_t seed, int iterations)
{
    std::vector<AnchorWH> distinct;
    for (const auto& s : sizes) {
        if (!(s.w > 0 && s.h > 0)) continue;
        if (std::none_of(distinct.begin(), distinct.end(), [&](const AnchorWH& d) { return d.w == s.w && d.h == s.h; })) {
            distinct.push_back(s);
        }
    }
    if (distinct.size() < 9) return AnchorSet::fallback();

    std::mt19937_64 rng(seed);
    auto dist = [](const AnchorWH& a, const AnchorWH& b) { return 1.0 - shape_iou(a.w, a.h, b.w, b.h); };
    // k-means++ seeding under the IoU distance.
    std::vector<AnchorWH> centers{distinct[rng() % distinct.size()]};
    while (centers.size() < 9) {
        std::vector<double> d2(distinct.size());
        for (std::size_t i = 0; i < distinct.size(); ++i) {
            double best = std::numeric_limits<double>::max();
            for (const auto& c : centers) best = std::min(best, dist(distinct[i], c));
            d2[i] = best * best;
        }
        std::discrete_distribution<std::size_t> pick(d2.begin(), d2.end());
        centers.push_back(distinct[pick(rng)]);
    }
    std::vector<int> assign(sizes.size(), -1);
    for (int it = 0; it < iterations; ++it) {
        bool changed = false;
        std::vector<double> sw(9, 0), sh(9, 0);
        std::vector<int> n(9, 0);
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            int best = 0;
            for (int c = 1; c < 9; ++c) {
                if (dist(sizes[i], centers[c]) < dist(sizes[i], centers[best])) best = c;
            }
            changed = changed || assign[i] != best;
            assign[i] = best;
            sw[best] += sizes[i].w;
            sh[best] += sizes[i].h;
            ++n[best];
        }
        for (int c = 0; c < 9; ++c) {
            if (n[c] > 0) centers[c] = {static_cast<float>(sw[c] / n[c]), static_cast<float>(sh[c] / n[c])};
        }
        if (!changed) break;
    }
    std::sort(centers.begin(), centers.end(), [](const AnchorWH& a, const AnchorWH& b) { return a.w * a.h < b.w * b.h; });
    std::array<AnchorWH, 9> out;
    std::copy(centers.begin(), centers.end(), out.begin());
    return AnchorSet(out);
}

// ---------------------------------------------------------------------------

std::vector<Detection> decode_yolo(const TensorF& raw, const AnchorSet& anchors, int stride, int num_classes,
                                   int batch_index, int index_offset)
{
    const int first = AnchorSet::first_index(stride);
    const int fields = 5 + num_classes;
    if (raw.rank() != 4 || raw.dim(1) != head_channels(3, num_classes)) {
        throw ShapeError("decode_yolo: expected N x " + std::to_string(head_channels(3, num_classes)) +
                         " x H x W, got " + shape_str(raw.shape()));
    }
    if (batch_index < 0 || batch_index >= raw.dim(0)) throw ArgumentError("decode_yolo: batch index out of range");
    const int gh = raw.dim(2), gw = raw.dim(3);
    const std::size_t plane = static_cast<std::size_t>(gh) * gw;
    const float* base = raw.data().data() + static_cast<std::size_t>(batch_index) * raw.dim(1) * plane;
    std::vector<Detection> out;
    out.reserve(plane * 3);
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            const std::size_t cell = static_cast<std::size_t>(gy) * gw + gx;
            for (int b = 0; b < 3; ++b) {
                auto field = [&](int f) { return base[static_cast<std::size_t>(b * fields + f) * plane + cell]; };
                const AnchorWH& a = anchors[first + b];
                Detection d;
                d.box.cx = (sigmoid(field(0)) + gx) * stride;
                d.box.cy = (sigmoid(field(1)) + gy) * stride;
                d.box.w = a.w * std::exp(field(2));
                d.box.h = a.h * std::exp(field(3));
                d.objectness = sigmoid(field(4));
                d.class_id = 0;
                d.class_score = sigmoid(field(5));
                for (int c = 1; c < num_classes; ++c) {
                    const float p = sigmoid(field(5 + c));
                    if (p > d.class_score) {
                        d.class_score = p;
                        d.class_id = c;
                    }
                }
                d.index = index_offset + static_cast<int>(cell * 3 + b);
                out.push_back(d);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

int ScaleTargets::positives() const
{
    return static_cast<int>(std::count(state.begin(), state.end(), CellState::positive));
}

int YoloTargets::positives() const
{
    int n = 0;
    for (const auto& s : scales) n += s.positives();
    return n;
}

YoloTargets assign_targets(std::span<const BBox> gt, std::span<const int> classes, const AnchorSet& anchors,
                           int input_size, float ignore_iou)
{
    if (gt.size() != classes.size()) throw ArgumentError("assign_targets: boxes and classes differ in length");
    if (input_size <= 0 || input_size % 32 != 0) throw ArgumentError("assign_targets: input size not divisible by 32");
    YoloTargets t;
    for (int s = 0; s < 3; ++s) {
        auto& st = t.scales[static_cast<std::size_t>(s)];
        st.stride = kYoloStrides[static_cast<std::size_t>(s)];
        st.grid_h = st.grid_w = input_size / st.stride;
        const std::size_t slots = static_cast<std::size_t>(st.grid_h) * st.grid_w * 3;
        st.state.assign(slots, CellState::negative);
        st.box.assign(slots, {0, 0, 0, 0});
        st.class_id.assign(slots, 0);
    }
    constexpr float kTol = 1e-3f;
    for (std::size_t g = 0; g < gt.size(); ++g) {
        const BBox& b = gt[g];
        if (!(b.w > 0 && b.h > 0) || b.x1() < -kTol || b.y1() < -kTol || b.x2() > input_size + kTol ||
            b.y2() > input_size + kTol) {
            throw ArgumentError("assign_targets: box outside the image");
        }
        int best = 0;
        float best_iou = -1;
        std::array<float, 9> ious{};
        for (int a = 0; a < 9; ++a) {
            ious[static_cast<std::size_t>(a)] = shape_iou(b.w, b.h, anchors[a].w, anchors[a].h);
            if (ious[static_cast<std::size_t>(a)] > best_iou) {
                best_iou = ious[static_cast<std::size_t>(a)];
                best = a;
            }
        }
        for (int a = 0; a < 9; ++a) {
            const int stride = a < 3 ? 8 : a < 6 ? 16 : 32;
            auto& st = t.scales[static_cast<std::size_t>(scale_of_stride(stride))];
            const int col = std::clamp(static_cast<int>(std::floor(b.cx / stride)), 0, st.grid_w - 1);
            const int row = std::clamp(static_cast<int>(std::floor(b.cy / stride)), 0, st.grid_h - 1);
            const std::size_t slot = st.slot(row, col, a - AnchorSet::first_index(stride));
            if (a == best) {
                if (st.state[slot] == CellState::positive) continue;
                st.state[slot] = CellState::positive;
                st.box[slot] = {b.cx / stride - col, b.cy / stride - row, std::log(b.w / anchors[a].w),
                                std::log(b.h / anchors[a].h)};
                st.class_id[slot] = classes[g];
            } else if (ious[static_cast<std::size_t>(a)] > ignore_iou && st.state[slot] == CellState::negative) {
                st.state[slot] = CellState::ignore;
            }
        }
    }
    return t;
}

template <typename Scalar>
YoloLossResult<Scalar> yolo_loss(const std::vector<Tensor<Scalar>>& raw, std::span<const YoloTargets> targets,
                                 const YoloLossConfig& config)
{
    const int C = config.num_classes;
    const int fields = 5 + C;
    if (raw.size() != 3) throw ShapeError("yolo_loss: expected three head outputs");
    const int batch = raw[0].dim(0);
    if (static_cast<int>(targets.size()) != batch) throw ShapeError("yolo_loss: batch size and targets disagree");
    for (int s = 0; s < 3; ++s) {
        const auto& r = raw[static_cast<std::size_t>(s)];
        for (const auto& t : targets) {
            const auto& st = t.scales[static_cast<std::size_t>(s)];
            if (r.rank() != 4 || r.dim(0) != batch || r.dim(1) != head_channels(3, C) || r.dim(2) != st.grid_h ||
                r.dim(3) != st.grid_w) {
                throw ShapeError("yolo_loss: head " + shape_str(r.shape()) + " does not match " +
                                 std::to_string(st.grid_h) + "x" + std::to_string(st.grid_w) + " targets");
            }
        }
    }

    const double inv_n = 1.0 / batch;
    const double lc = config.lambda_coord;
    YoloLossResult<Scalar> result;
    // d(loss)/d(raw) per scale; filled together with the forward value.
    auto grads = std::make_shared<std::vector<std::vector<Scalar>>>(3);
    double coord = 0, obj = 0, noobj = 0, cls = 0;
    for (int s = 0; s < 3; ++s) {
        const auto& r = raw[static_cast<std::size_t>(s)];
        auto& g = (*grads)[static_cast<std::size_t>(s)];
        g.assign(r.data().size(), Scalar(0));
        const std::size_t plane = static_cast<std::size_t>(r.dim(2)) * r.dim(3);
        const std::size_t per_image = static_cast<std::size_t>(r.dim(1)) * plane;
        for (int n = 0; n < batch; ++n) {
            const auto& st = targets[static_cast<std::size_t>(n)].scales[static_cast<std::size_t>(s)];
            const Scalar* x = r.data().data() + n * per_image;
            Scalar* gx = g.data() + n * per_image;
            for (std::size_t cell = 0; cell < plane; ++cell) {
                for (int b = 0; b < 3; ++b) {
                    const std::size_t slot = cell * 3 + b;
                    auto at = [&](int f) { return static_cast<std::size_t>(b * fields + f) * plane + cell; };
                    const double zo = x[at(4)];
                    const CellState state = st.state[slot];
                    if (state == CellState::negative) {
                        noobj += softplus(zo);
                        gx[at(4)] = static_cast<Scalar>(sigmoid(zo) * inv_n);
                        continue;
                    }
                    if (state == CellState::ignore) continue;
                    const auto& tb = st.box[slot];
                    for (int f = 0; f < 2; ++f) {
                        const double p = sigmoid(static_cast<double>(x[at(f)]));
                        const double d = p - tb[static_cast<std::size_t>(f)];
                        coord += lc * d * d;
                        gx[at(f)] = static_cast<Scalar>(2 * lc * d * p * (1 - p) * inv_n);
                    }
                    for (int f = 2; f < 4; ++f) {
                        const double d = x[at(f)] - tb[static_cast<std::size_t>(f)];
                        coord += lc * d * d;
                        gx[at(f)] = static_cast<Scalar>(2 * lc * d * inv_n);
                    }
                    obj += softplus(zo) - zo;
                    gx[at(4)] = static_cast<Scalar>((sigmoid(zo) - 1) * inv_n);
                    for (int c = 0; c < C; ++c) {
                        const double z = x[at(5 + c)];
                        const double y = st.class_id[slot] == c ? 1.0 : 0.0;
                        cls += softplus(z) - y * z;
                        gx[at(5 + c)] = static_cast<Scalar>((sigmoid(z) - y) * inv_n);
                    }
                }
            }
        }
    }
    result.coord = coord * inv_n;
    result.objectness = obj * inv_n;
    result.no_object = noobj * inv_n;
    result.classification = cls * inv_n;
    const double total = result.coord + result.objectness + result.no_object + result.classification;

    std::vector<std::shared_ptr<detail::TensorImpl<Scalar>>> impls;
    for (const auto& r : raw) impls.push_back(r.impl());
    result.total = make_op_result<Scalar>(
        "yolo_loss", {}, {static_cast<Scalar>(total)}, raw, [impls, grads](const detail::TensorImpl<Scalar>& out) {
            const Scalar up = out.grad[0];
            for (std::size_t s = 0; s < impls.size(); ++s) {
                auto sink = impls[s]->grad_sink();
                const auto& g = (*grads)[s];
                for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += up * g[i];
            }
        });
    return result;
}

template YoloLossResult<float> yolo_loss(const std::vector<TensorF>&, std::span<const YoloTargets>,
                                         const YoloLossConfig&);
template YoloLossResult<double> yolo_loss(const std::vector<TensorD>&, std::span<const YoloTargets>,
                                          const YoloLossConfig&);

// ---------------------------------------------------------------------------

void YoloConfig::validate() const
{
    backbone.validate();
    if (!is_darknet(backbone.family)) throw ArgumentError("detector backbone must be a darknet family");
    if (backbone.include_classifier_head) throw ArgumentError("detector backbone must not carry a classifier head");
    if (backbone.output_stride != 32) throw ArgumentError("detector backbone needs the stride-32 stage");
    if (num_classes < 1) throw ArgumentError("num_classes must be >= 1");
    if (input_size <= 0 || input_size % 32 != 0) throw ArgumentError("input_size must be a positive multiple of 32");
    if (neck_convs != 1 && neck_convs != 3 && neck_convs != 5) throw ArgumentError("neck_convs must be 1, 3 or 5");
    if (!(head_init_std > 0)) throw ArgumentError("head_init_std must be positive");
}

YoloDetector::YoloDetector(const YoloConfig& config, const AnchorSet& anchors, std::uint64_t seed)
    : config_(config), anchors_(anchors), backbone_((config.validate(), build_backbone(config.backbone, seed)))
{
    auto& net = backbone_.network;
    const double w = config_.backbone.width_multiplier;
    const int out = head_channels(3, config_.num_classes);
    const auto leaky = ActivationKind::leaky_relu;

    auto neck_block = [&](int in, int filters) {
        int prev = in;
        for (int i = 0; i < config_.neck_convs; ++i) {
            const bool pointwise = i % 2 == 0;
            prev = net.add_conv_bn(scaled_channels(pointwise ? filters : 2 * filters, w), pointwise ? 1 : 3, 1, leaky,
                                   {prev});
        }
        return prev;
    };
    auto head = [&](int in, int filters, const std::string& tag) {
        net.add_conv_bn(scaled_channels(2 * filters, w), 3, 1, leaky, {in});
        LayerSpec spec = LayerSpec::conv(out, 1, 1, 0, true);
        spec.init_std = config_.head_init_std;
        const int node = net.add(spec, {}, tag);
        // Objectness starts near a 1% prior so early training is not swamped by negatives.
        auto bias = net.layer(node).bias().data();
        for (int b = 0; b < 3; ++b) bias[static_cast<std::size_t>(b * (5 + config_.num_classes) + 4)] = -4.6f;
        return node;
    };

    const int x32 = neck_block(backbone_.stride32, 512);
    heads_[0] = head(x32, 512, "head32");
    net.add_conv_bn(scaled_channels(256, w), 1, 1, leaky, {x32});
    const int up16 = net.add(LayerSpec::upsample());
    const int cat16 = net.add(LayerSpec::concat(), {up16, backbone_.stride16});
    const int x16 = neck_block(cat16, 256);
    heads_[1] = head(x16, 256, "head16");
    net.add_conv_bn(scaled_channels(128, w), 1, 1, leaky, {x16});
    const int up8 = net.add(LayerSpec::upsample());
    const int cat8 = net.add(LayerSpec::concat(), {up8, backbone_.stride8});
    const int x8 = neck_block(cat8, 128);
    heads_[2] = head(x8, 128, "head8");

    for (int h : heads_) {
        if (net.output_channels(h) != head_channels(3, config_.num_classes)) {
            throw std::logic_error("detection head channel count disagrees with B x (5 + C)");
        }
    }
}

std::vector<TensorF> YoloDetector::forward(const TensorF& batch, bool training)
{
    if (batch.rank() != 4 || batch.dim(1) != 3) throw ShapeError("detector input must be N x 3 x H x W");
    if (batch.dim(2) % 32 != 0 || batch.dim(3) % 32 != 0) {
        throw ArgumentError("detector input " + shape_str(batch.shape()) + " is not divisible by 32");
    }
    auto outs = backbone_.network.forward(batch, training);
    std::vector<TensorF> raw;
    for (int s = 0; s < 3; ++s) {
        TensorF r = outs[static_cast<std::size_t>(heads_[static_cast<std::size_t>(s)])];
        const int stride = kYoloStrides[static_cast<std::size_t>(s)];
        if (r.dim(1) != head_channels(3, config_.num_classes) || r.dim(2) * stride != batch.dim(2) ||
            r.dim(3) * stride != batch.dim(3)) {
            throw std::logic_error("detection head " + shape_str(r.shape()) + " has the wrong geometry");
        }
        raw.push_back(std::move(r));
    }
    return raw;
}

std::vector<Detection> YoloDetector::decode(const std::vector<TensorF>& raw, int batch_index) const
{
    std::vector<Detection> all;
    int offset = 0;
    for (int s = 0; s < 3; ++s) {
        auto d = decode_yolo(raw[static_cast<std::size_t>(s)], anchors_, kYoloStrides[static_cast<std::size_t>(s)],
                             config_.num_classes, batch_index, offset);
        offset += static_cast<int>(d.size());
        all.insert(all.end(), d.begin(), d.end());
    }
    return all;
}

std::vector<Detection> detect_plates(YoloDetector& net, const Image& image, const DetectOptions& options)
{
    if (!(options.conf_threshold >= 0 && options.conf_threshold <= 1)) {
        throw ArgumentError("confidence threshold outside [0, 1]");
    }
    NoGradGuard no_grad;
    Letterboxed lb = letterbox(image, net.config().input_size);
    auto raw = net.forward(lb.tensor, false);
    auto all = net.decode(raw);
    std::vector<Detection> candidates;
    for (const auto& d : all) {
        if (d.score() >= options.conf_threshold) candidates.push_back(d);
    }
    auto kept = nms(candidates, options.nms_iou);
    for (auto& d : kept) {
        d.box = lb.transform.unmap(d.box).clipped(static_cast<float>(image.width), static_cast<float>(image.height));
    }
    return kept;
}

}  // namespace lpr
