#include "lpr/layers.hpp"

#include <cmath>

#include "lpr/error.hpp"
#include "lpr/ops.hpp"

namespace lpr {

std::string to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::activation: return "activation";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::globalavgpool: return "globalavgpool";
    case LayerKind::upsample2x: return "upsample2x";
    case LayerKind::residual_add: return "residual_add";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::softmax: return "softmax";
    case LayerKind::concat: return "concat";
    }
    return "unknown";
}

void LayerSpec::validate() const
{
    if (kernel < 1 || stride < 1 || padding < 0) {
        throw ArgumentError(to_string(kind) + ": kernel and stride must be >= 1 and padding >= 0");
    }
    if ((kind == LayerKind::conv2d || kind == LayerKind::fully_connected) && out_channels < 1) {
        throw ArgumentError(to_string(kind) + ": out_channels must be >= 1");
    }
    if (init_std < 0) throw ArgumentError(to_string(kind) + ": init_std must be >= 0");
}

LayerSpec LayerSpec::conv(int out_channels, int kernel, int stride, int padding, bool bias)
{
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding < 0 ? kernel / 2 : padding;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::batchnorm()
{
    LayerSpec s;
    s.kind = LayerKind::batchnorm;
    return s;
}

LayerSpec LayerSpec::act(ActivationKind kind)
{
    LayerSpec s;
    s.kind = LayerKind::activation;
    s.activation = kind;
    return s;
}

LayerSpec LayerSpec::maxpool(int kernel, int stride, int padding)
{
    LayerSpec s;
    s.kind = LayerKind::maxpool;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::global_avgpool()
{
    LayerSpec s;
    s.kind = LayerKind::globalavgpool;
    return s;
}

LayerSpec LayerSpec::upsample()
{
    LayerSpec s;
    s.kind = LayerKind::upsample2x;
    return s;
}

LayerSpec LayerSpec::residual()
{
    LayerSpec s;
    s.kind = LayerKind::residual_add;
    return s;
}

LayerSpec LayerSpec::fully_connected(int out_features)
{
    LayerSpec s;
    s.kind = LayerKind::fully_connected;
    s.out_channels = out_features;
    s.bias = true;
    return s;
}

LayerSpec LayerSpec::softmax()
{
    LayerSpec s;
    s.kind = LayerKind::softmax;
    return s;
}

LayerSpec LayerSpec::concat()
{
    LayerSpec s;
    s.kind = LayerKind::concat;
    return s;
}

template <typename Scalar>
Layer<Scalar>::Layer(const LayerSpec& spec, int in_channels, std::mt19937_64& rng)
    : spec_(spec), in_channels_(in_channels), out_channels_(in_channels)
{
    spec_.validate();
    if (in_channels < 1) throw ArgumentError(to_string(spec.kind) + ": in_channels must be >= 1");
    switch (spec_.kind) {
    case LayerKind::conv2d: {
        out_channels_ = spec_.out_channels;
        const int fan_in = in_channels * spec_.kernel * spec_.kernel;
        const double stddev = spec_.init_std > 0 ? spec_.init_std : std::sqrt(2.0 / fan_in);
        weight_ = Tensor<Scalar>::randn({out_channels_, in_channels, spec_.kernel, spec_.kernel}, rng,
                                        static_cast<Scalar>(stddev), true);
        if (spec_.bias) bias_ = Tensor<Scalar>::zeros({out_channels_}, true);
        break;
    }
    case LayerKind::fully_connected: {
        out_channels_ = spec_.out_channels;
        const double stddev = spec_.init_std > 0 ? spec_.init_std : std::sqrt(2.0 / in_channels);
        weight_ = Tensor<Scalar>::randn({out_channels_, in_channels}, rng, static_cast<Scalar>(stddev), true);
        bias_ = Tensor<Scalar>::zeros({out_channels_}, true);
        break;
    }
    case LayerKind::batchnorm:
        gamma_ = Tensor<Scalar>::full({in_channels}, Scalar(1), true);
        beta_ = Tensor<Scalar>::zeros({in_channels}, true);
        running_mean_ = Tensor<Scalar>::zeros({in_channels});
        running_var_ = Tensor<Scalar>::full({in_channels}, Scalar(1));
        break;
    default: break;
    }
}

template <typename Scalar>
Tensor<Scalar> Layer<Scalar>::forward(std::span<const Tensor<Scalar>> inputs, bool training)
{
    const bool multi = spec_.kind == LayerKind::residual_add || spec_.kind == LayerKind::concat;
    if (inputs.empty() || (!multi && inputs.size() != 1)) {
        throw ShapeError(to_string(spec_.kind) + ": wrong number of inputs (" + std::to_string(inputs.size()) + ")");
    }
    const Tensor<Scalar>& x = inputs[0];
    switch (spec_.kind) {
    case LayerKind::conv2d:
        if (x.rank() != 4 || x.dim(1) != in_channels_) {
            throw ShapeError("conv2d: input " + shape_str(x.shape()) + " does not have " +
                             std::to_string(in_channels_) + " channels (weight " + shape_str(weight_.shape()) + ")");
        }
        return ops::conv2d(x, weight_, bias_, spec_.stride, spec_.padding);
    case LayerKind::batchnorm:
        return ops::batch_norm(x, gamma_, beta_, running_mean_, running_var_, training);
    case LayerKind::activation:
        switch (spec_.activation) {
        case ActivationKind::leaky_relu: return ops::leaky_relu(x, kLeakySlope);
        case ActivationKind::relu: return ops::relu(x);
        case ActivationKind::sigmoid: return ops::sigmoid(x);
        case ActivationKind::linear: return x;
        }
        return x;
    case LayerKind::maxpool: return ops::max_pool2d(x, spec_.kernel, spec_.stride, spec_.padding);
    case LayerKind::globalavgpool: return ops::global_avg_pool(x);
    case LayerKind::upsample2x: return ops::upsample2x(x);
    case LayerKind::residual_add:
        if (inputs.size() != 2) throw ShapeError("residual_add: needs exactly two inputs");
        return ops::add(inputs[0], inputs[1]);
    case LayerKind::fully_connected: return ops::linear(x, weight_, bias_);
    case LayerKind::softmax: return ops::softmax(x);
    case LayerKind::concat:
        return ops::concat_channels(std::vector<Tensor<Scalar>>(inputs.begin(), inputs.end()));
    }
    throw ArgumentError("unknown layer kind");
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>>> Layer<Scalar>::named_tensors() const
{
    auto out = named_parameters();
    if (running_mean_.defined()) out.emplace_back("running_mean", running_mean_);
    if (running_var_.defined()) out.emplace_back("running_var", running_var_);
    return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>>> Layer<Scalar>::named_parameters() const
{
    std::vector<std::pair<std::string, Tensor<Scalar>>> out;
    if (weight_.defined()) out.emplace_back("weight", weight_);
    if (bias_.defined()) out.emplace_back("bias", bias_);
    if (gamma_.defined()) out.emplace_back("gamma", gamma_);
    if (beta_.defined()) out.emplace_back("beta", beta_);
    return out;
}

template <typename Scalar>
Tensor<Scalar> apply_layer(const Tensor<Scalar>& input, Layer<Scalar>& layer, bool training)
{
    return layer.forward(std::span<const Tensor<Scalar>>(&input, 1), training);
}

template <typename Scalar>
Tensor<Scalar> apply_layer(std::span<const Tensor<Scalar>> inputs, Layer<Scalar>& layer, bool training)
{
    return layer.forward(inputs, training);
}

template class Layer<float>;
template class Layer<double>;
template Tensor<float> apply_layer<float>(const Tensor<float>&, Layer<float>&, bool);
template Tensor<double> apply_layer<double>(const Tensor<double>&, Layer<double>&, bool);
template Tensor<float> apply_layer<float>(std::span<const Tensor<float>>, Layer<float>&, bool);
template Tensor<double> apply_layer<double>(std::span<const Tensor<double>>, Layer<double>&, bool);

}  // namespace lpr
