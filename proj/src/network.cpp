#include "lpr/network.hpp"

#include <algorithm>

#include "lpr/error.hpp"

namespace lpr {

template <typename Scalar>
Network<Scalar>::Network(int input_channels, std::uint64_t seed) : input_channels_(input_channels), rng_(seed)
{
    if (input_channels < 1) throw ArgumentError("network input_channels must be >= 1");
}

template <typename Scalar>
int Network<Scalar>::output_channels(int node) const
{
    if (node == kNetworkInput) return input_channels_;
    return nodes_.at(static_cast<std::size_t>(node)).layer.out_channels();
}

template <typename Scalar>
int Network<Scalar>::add(const LayerSpec& spec, std::vector<int> inputs, std::string tag)
{
    const int self = size();
    if (inputs.empty()) inputs.push_back(self - 1);
    for (int in : inputs) {
        if (in < kNetworkInput || in >= self) {
            throw ArgumentError("node " + std::to_string(self) + " references invalid input " + std::to_string(in));
        }
    }
    int in_channels = 0;
    if (spec.kind == LayerKind::concat) {
        for (int in : inputs) in_channels += output_channels(in);
    } else {
        in_channels = output_channels(inputs.front());
        if (spec.kind == LayerKind::residual_add) {
            if (inputs.size() != 2 || output_channels(inputs[1]) != in_channels) {
                throw ShapeError("residual_add at node " + std::to_string(self) + " joins mismatched channel counts");
            }
        }
    }
    if (!tag.empty() && has_tag(tag)) throw ArgumentError("duplicate node tag " + tag);
    nodes_.push_back(Node{Layer<Scalar>(spec, in_channels, rng_), std::move(inputs), std::move(tag)});
    return self;
}

template <typename Scalar>
int Network<Scalar>::add_conv_bn(int out_channels, int kernel, int stride, ActivationKind act, std::vector<int> inputs)
{
    add(LayerSpec::conv(out_channels, kernel, stride), std::move(inputs));
    add(LayerSpec::batchnorm());
    return add(LayerSpec::act(act));
}

template <typename Scalar>
int Network<Scalar>::find(const std::string& tag) const
{
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].tag == tag) return static_cast<int>(i);
    }
    throw ArgumentError("no network node tagged " + tag);
}

template <typename Scalar>
bool Network<Scalar>::has_tag(const std::string& tag) const
{
    return std::any_of(nodes_.begin(), nodes_.end(), [&](const Node& n) { return n.tag == tag; });
}

template <typename Scalar>
std::vector<Tensor<Scalar>> Network<Scalar>::forward(const Tensor<Scalar>& input, bool training, int last)
{
    if (input.rank() != 4 || input.dim(1) != input_channels_) {
        throw ShapeError("network expects N x " + std::to_string(input_channels_) + " x H x W input, got " +
                         shape_str(input.shape()));
    }
    const int end = last < 0 ? size() : std::min(last + 1, size());
    std::vector<Tensor<Scalar>> outs;
    outs.reserve(static_cast<std::size_t>(end));
    std::vector<Tensor<Scalar>> args;
    for (int i = 0; i < end; ++i) {
        auto& node = nodes_[static_cast<std::size_t>(i)];
        args.clear();
        for (int in : node.inputs) args.push_back(in == kNetworkInput ? input : outs[static_cast<std::size_t>(in)]);
        outs.push_back(node.layer.forward(args, training));
    }
    return outs;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>>> Network<Scalar>::named_tensors(const std::string& prefix) const
{
    std::vector<std::pair<std::string, Tensor<Scalar>>> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        for (auto& [name, t] : nodes_[i].layer.named_tensors()) {
            out.emplace_back(prefix + std::to_string(i) + "." + name, t);
        }
    }
    return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>>> Network<Scalar>::named_parameters(const std::string& prefix) const
{
    std::vector<std::pair<std::string, Tensor<Scalar>>> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        for (auto& [name, t] : nodes_[i].layer.named_parameters()) {
            out.emplace_back(prefix + std::to_string(i) + "." + name, t);
        }
    }
    return out;
}

template <typename Scalar>
std::int64_t Network<Scalar>::parameter_count() const
{
    std::int64_t n = 0;
    for (const auto& [name, t] : named_parameters("")) n += t.numel();
    return n;
}

template <typename Scalar>
int Network<Scalar>::count(LayerKind kind) const
{
    return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(),
                                          [&](const Node& n) { return n.layer.spec().kind == kind; }));
}

template class Network<float>;
template class Network<double>;

}  // namespace lpr
