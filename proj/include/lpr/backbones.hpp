#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lpr/network.hpp"

namespace lpr {

enum class BackboneFamily {
    darknet53,
    resnet18,
    resnet34,
    resnet50,
    resnet101,
    resnet152,
    tiny_darknet,
    tiny_resnet,
};

std::string to_string(BackboneFamily family);
/// Throws ArgumentError for unknown names.
BackboneFamily parse_backbone_family(std::string_view name);

struct BackboneSpec {
    BackboneFamily family = BackboneFamily::tiny_darknet;
    double width_multiplier = 1.0;
    bool include_classifier_head = false;
    int num_classes = 1000;
    /// 32 builds every stage; 16 stops after the stride-16 stage.
    int output_stride = 32;

    void validate() const;
};

/// Channel count after width scaling, never below 1.
int scaled_channels(int base, double width_multiplier);

/// Residual blocks per stage: five stages for Darknet, four for ResNet.
std::vector<int> stage_repeats(BackboneFamily family);

bool is_darknet(BackboneFamily family);
bool uses_bottleneck(BackboneFamily family);

struct Backbone {
    BackboneSpec spec;
    Network<float> network;
    /// Last node of each stage and its stride relative to the input.
    std::vector<int> stage_outputs;
    std::vector<int> stage_strides;
    int stride8 = -1;
    int stride16 = -1;
    int stride32 = -1;
    int classifier_output = -1;

    int channels_at(int node) const { return network.output_channels(node); }
};

Backbone build_backbone(const BackboneSpec& spec, std::uint64_t seed);

/// Feature maps at input / 8, / 16 and / 32. stride32 is undefined for
/// backbones truncated at stride 16.
struct FeaturePyramid {
    TensorF stride8;
    TensorF stride16;
    TensorF stride32;
};

/// image must have H and W divisible by 32.
FeaturePyramid forward_pyramid(Backbone& backbone, const TensorF& image, bool training = false);

/// Learned 1x1 convolution (with bias) changing the channel count of a feature map.
class ChannelProjection {
public:
    ChannelProjection(int in_channels, int out_channels, std::mt19937_64& rng);
    /// Identity weights, zero bias.
    static ChannelProjection identity(int channels);

    TensorF operator()(const TensorF& feature) { return apply_layer(feature, conv_); }
    Layer<float>& layer() { return conv_; }
    int out_channels() const { return conv_.out_channels(); }

private:
    explicit ChannelProjection(Layer<float> conv) : conv_(std::move(conv)) {}
    Layer<float> conv_;
};

TensorF project_channels(const TensorF& feature, ChannelProjection& projection);

}  // namespace lpr
