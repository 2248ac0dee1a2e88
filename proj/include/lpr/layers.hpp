#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lpr/tensor.hpp"

namespace lpr {

enum class LayerKind {
    conv2d,
    batchnorm,
    activation,
    maxpool,
    globalavgpool,
    upsample2x,
    residual_add,
    fully_connected,
    softmax,
    concat,
};

enum class ActivationKind { linear, leaky_relu, relu, sigmoid };

/// Negative slope of every leaky-relu in the project.
inline constexpr double kLeakySlope = 0.1;

std::string to_string(LayerKind kind);

/// One row of a network description: a layer kind and its hyperparameters.
struct LayerSpec {
    LayerKind kind = LayerKind::conv2d;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    int out_channels = 0;  // conv2d / fully_connected
    ActivationKind activation = ActivationKind::linear;
    bool bias = false;       // conv2d; fully_connected always has one
    double init_std = 0.0;   // 0 selects He-normal

    /// Throws ArgumentError when hyperparameters are out of range.
    void validate() const;

    /// Padding defaults to kernel / 2 ("same" for odd kernels at stride 1).
    static LayerSpec conv(int out_channels, int kernel, int stride = 1, int padding = -1, bool bias = false);
    static LayerSpec batchnorm();
    static LayerSpec act(ActivationKind kind);
    static LayerSpec maxpool(int kernel, int stride, int padding = 0);
    static LayerSpec global_avgpool();
    static LayerSpec upsample();
    static LayerSpec residual();
    static LayerSpec fully_connected(int out_features);
    static LayerSpec softmax();
    static LayerSpec concat();
};

/// A LayerSpec bound to its parameters and buffers.
template <typename Scalar>
class Layer {
public:
    Layer(const LayerSpec& spec, int in_channels, std::mt19937_64& rng);

    const LayerSpec& spec() const noexcept { return spec_; }
    int in_channels() const noexcept { return in_channels_; }
    int out_channels() const noexcept { return out_channels_; }

    Tensor<Scalar> forward(std::span<const Tensor<Scalar>> inputs, bool training);

    /// Parameters and buffers under stable local names ("weight", "running_mean", ...).
    std::vector<std::pair<std::string, Tensor<Scalar>>> named_tensors() const;
    /// Trainable tensors only.
    std::vector<std::pair<std::string, Tensor<Scalar>>> named_parameters() const;

    Tensor<Scalar>& weight() { return weight_; }
    Tensor<Scalar>& bias() { return bias_; }
    Tensor<Scalar>& gamma() { return gamma_; }
    Tensor<Scalar>& beta() { return beta_; }
    Tensor<Scalar>& running_mean() { return running_mean_; }
    Tensor<Scalar>& running_var() { return running_var_; }

private:
    LayerSpec spec_;
    int in_channels_;
    int out_channels_;
    Tensor<Scalar> weight_, bias_, gamma_, beta_, running_mean_, running_var_;
};

/// Runs a single-input layer.
template <typename Scalar>
Tensor<Scalar> apply_layer(const Tensor<Scalar>& input, Layer<Scalar>& layer, bool training = false);

/// Runs a layer over several inputs (residual_add, concat).
template <typename Scalar>
Tensor<Scalar> apply_layer(std::span<const Tensor<Scalar>> inputs, Layer<Scalar>& layer,
                           bool training = false);

}  // namespace lpr
