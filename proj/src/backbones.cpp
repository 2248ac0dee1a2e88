#include "lpr/backbones.hpp"

#include <algorithm>
#include <cmath>

#include "lpr/error.hpp"

namespace lpr {

namespace {

struct FamilyName {
    BackboneFamily family;
    const char* name;
};

constexpr FamilyName kFamilies[] = {
    {BackboneFamily::darknet53, "darknet53"},       {BackboneFamily::resnet18, "resnet18"},
    {BackboneFamily::resnet34, "resnet34"},         {BackboneFamily::resnet50, "resnet50"},
    {BackboneFamily::resnet101, "resnet101"},       {BackboneFamily::resnet152, "resnet152"},
    {BackboneFamily::tiny_darknet, "tiny_darknet"}, {BackboneFamily::tiny_resnet, "tiny_resnet"},
};

void build_darknet(Backbone& bb)
{
    auto& net = bb.network;
    const double w = bb.spec.width_multiplier;
    const auto repeats = stage_repeats(bb.spec.family);
    const int stages = bb.spec.output_stride == 16 ? 4 : 5;
    net.add_conv_bn(scaled_channels(32, w), 3, 1, ActivationKind::leaky_relu, {kNetworkInput});
    int stride = 1;
    for (int s = 0; s < stages; ++s) {
        const int filters = 64 << s;
        int prev = net.add_conv_bn(scaled_channels(filters, w), 3, 2, ActivationKind::leaky_relu);
        stride *= 2;
        for (int r = 0; r < repeats[static_cast<std::size_t>(s)]; ++r) {
            net.add_conv_bn(scaled_channels(filters / 2, w), 1, 1, ActivationKind::leaky_relu, {prev});
            int b = net.add_conv_bn(scaled_channels(filters, w), 3, 1, ActivationKind::leaky_relu);
            prev = net.add(LayerSpec::residual(), {prev, b});
        }
        bb.stage_outputs.push_back(prev);
        bb.stage_strides.push_back(stride);
    }
}

void build_resnet(Backbone& bb)
{
    auto& net = bb.network;
    const double w = bb.spec.width_multiplier;
    const auto repeats = stage_repeats(bb.spec.family);
    const bool bottleneck = uses_bottleneck(bb.spec.family);
    const int expansion = bottleneck ? 4 : 1;
    const int stages = bb.spec.output_stride == 16 ? 3 : 4;

    net.add(LayerSpec::conv(scaled_channels(64, w), 7, 2, 3), {kNetworkInput});
    net.add(LayerSpec::batchnorm());
    net.add(LayerSpec::act(ActivationKind::relu));
    int prev = net.add(LayerSpec::maxpool(3, 2, 1));
    int stride = 4;
    for (int s = 0; s < stages; ++s) {
        const int width = scaled_channels(64 << s, w);
        const int out = scaled_channels((64 << s) * expansion, w);
        for (int r = 0; r < repeats[static_cast<std::size_t>(s)]; ++r) {
            const int block_stride = (r == 0 && s > 0) ? 2 : 1;
            const int block_in = prev;
            int body;
            if (bottleneck) {
                net.add_conv_bn(width, 1, 1, ActivationKind::relu, {block_in});
                net.add_conv_bn(width, 3, block_stride, ActivationKind::relu);
                net.add(LayerSpec::conv(out, 1, 1, 0));
                body = net.add(LayerSpec::batchnorm());
            } else {
                net.add_conv_bn(width, 3, block_stride, ActivationKind::relu, {block_in});
                net.add(LayerSpec::conv(out, 3, 1, 1));
                body = net.add(LayerSpec::batchnorm());
            }
            int shortcut = block_in;
            if (block_stride != 1 || net.output_channels(block_in) != out) {
                net.add(LayerSpec::conv(out, 1, block_stride, 0), {block_in});
                shortcut = net.add(LayerSpec::batchnorm());
            }
            net.add(LayerSpec::residual(), {shortcut, body});
            prev = net.add(LayerSpec::act(ActivationKind::relu));
        }
        if (s > 0) stride *= 2;
        bb.stage_outputs.push_back(prev);
        bb.stage_strides.push_back(stride);
    }
}

}  // namespace

std::string to_string(BackboneFamily family)
{
    for (const auto& f : kFamilies) {
        if (f.family == family) return f.name;
    }
    return "unknown";
}

BackboneFamily parse_backbone_family(std::string_view name)
{
    for (const auto& f : kFamilies) {
        if (name == f.name) return f.family;
    }
    throw ArgumentError("unknown backbone family '" + std::string(name) + "'");
}

void BackboneSpec::validate() const
{
    if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
        throw ArgumentError("width_multiplier must lie in (0, 1]");
    }
    if (include_classifier_head && num_classes < 1) throw ArgumentError("num_classes must be >= 1");
    if (output_stride != 16 && output_stride != 32) throw ArgumentError("output_stride must be 16 or 32");
    if (include_classifier_head && output_stride != 32) {
        throw ArgumentError("classifier head requires the full stride-32 backbone");
    }
}

int scaled_channels(int base, double width_multiplier)
{
    return std::max(1, static_cast<int>(std::lround(base * width_multiplier)));
}

std::vector<int> stage_repeats(BackboneFamily family)
{
    switch (family) {
    case BackboneFamily::darknet53: return {1, 2, 8, 8, 4};
    case BackboneFamily::tiny_darknet: return {1, 1, 1, 1, 1};
    case BackboneFamily::resnet18: return {2, 2, 2, 2};
    case BackboneFamily::resnet34: return {3, 4, 6, 3};
    case BackboneFamily::resnet50: return {3, 4, 6, 3};
    case BackboneFamily::resnet101: return {3, 4, 23, 3};
    case BackboneFamily::resnet152: return {3, 8, 36, 3};
    case BackboneFamily::tiny_resnet: return {1, 1, 1, 1};
    }
    throw ArgumentError("unknown backbone family");
}

bool is_darknet(BackboneFamily family)
{
    return family == BackboneFamily::darknet53 || family == BackboneFamily::tiny_darknet;
}

bool uses_bottleneck(BackboneFamily family)
{
    return family == BackboneFamily::resnet50 || family == BackboneFamily::resnet101 ||
           family == BackboneFamily::resnet152;
}

Backbone build_backbone(const BackboneSpec& spec, std::uint64_t seed)
{
    spec.validate();
    Backbone bb{spec, Network<float>(3, seed), {}, {}, -1, -1, -1, -1};
    if (is_darknet(spec.family)) {
        build_darknet(bb);
    } else {
        build_resnet(bb);
    }
    for (std::size_t i = 0; i < bb.stage_outputs.size(); ++i) {
        if (bb.stage_strides[i] == 8) bb.stride8 = bb.stage_outputs[i];
        if (bb.stage_strides[i] == 16) bb.stride16 = bb.stage_outputs[i];
        if (bb.stage_strides[i] == 32) bb.stride32 = bb.stage_outputs[i];
    }
    if (spec.include_classifier_head) {
        bb.network.add(LayerSpec::global_avgpool(), {bb.stage_outputs.back()});
        bb.network.add(LayerSpec::fully_connected(spec.num_classes));
        bb.classifier_output = bb.network.add(LayerSpec::softmax());
    }
    return bb;
}

FeaturePyramid forward_pyramid(Backbone& backbone, const TensorF& image, bool training)
{
    if (image.rank() != 4) throw ShapeError("forward_pyramid: image must be N x C x H x W");
    const int h = image.dim(2), w = image.dim(3);
    if (h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0) {
        throw ArgumentError("forward_pyramid: input " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not divisible by 32");
    }
    const int last = std::max({backbone.stride8, backbone.stride16, backbone.stride32});
    auto outs = backbone.network.forward(image, training, last);
    FeaturePyramid fp;
    fp.stride8 = outs.at(static_cast<std::size_t>(backbone.stride8));
    fp.stride16 = outs.at(static_cast<std::size_t>(backbone.stride16));
    if (backbone.stride32 >= 0) fp.stride32 = outs.at(static_cast<std::size_t>(backbone.stride32));
    return fp;
}

ChannelProjection::ChannelProjection(int in_channels, int out_channels, std::mt19937_64& rng)
    : conv_(LayerSpec::conv(out_channels, 1, 1, 0, true), in_channels, rng)
{
}

ChannelProjection ChannelProjection::identity(int channels)
{
    std::mt19937_64 rng(0);
    Layer<float> conv(LayerSpec::conv(channels, 1, 1, 0, true), channels, rng);
    auto w = conv.weight().data();
    std::fill(w.begin(), w.end(), 0.0f);
    for (int c = 0; c < channels; ++c) w[static_cast<std::size_t>(c) * channels + c] = 1.0f;
    return ChannelProjection(std::move(conv));
}

TensorF project_channels(const TensorF& feature, ChannelProjection& projection)
{
    return projection(feature);
}

}  // namespace lpr
