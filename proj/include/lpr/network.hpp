#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lpr/layers.hpp"

namespace lpr {

/// Marker for "the network input" in a node's input list.
inline constexpr int kNetworkInput = -1;

/// A feed-forward DAG of layers evaluated in insertion order, in the spirit of
/// a Darknet cfg: each node names the earlier nodes it consumes.
template <typename Scalar>
class Network {
public:
    Network(int input_channels, std::uint64_t seed);

    /// Appends a node. `inputs` holds absolute node indices or kNetworkInput;
    /// empty means "the previous node". Returns the new node's index.
    int add(const LayerSpec& spec, std::vector<int> inputs = {}, std::string tag = {});

    /// Convenience: conv (no bias) -> batchnorm -> activation. Returns the activation node.
    int add_conv_bn(int out_channels, int kernel, int stride, ActivationKind act, std::vector<int> inputs = {});

    int size() const noexcept { return static_cast<int>(nodes_.size()); }
    int input_channels() const noexcept { return input_channels_; }
    int output_channels(int node) const;
    const LayerSpec& spec(int node) const { return nodes_.at(static_cast<std::size_t>(node)).layer.spec(); }
    Layer<Scalar>& layer(int node) { return nodes_.at(static_cast<std::size_t>(node)).layer; }
    const std::vector<int>& inputs_of(int node) const { return nodes_.at(static_cast<std::size_t>(node)).inputs; }

    /// Index of the node carrying `tag`; throws ArgumentError when absent.
    int find(const std::string& tag) const;
    bool has_tag(const std::string& tag) const;

    /// Outputs of nodes 0..last (inclusive; -1 = all).
    std::vector<Tensor<Scalar>> forward(const Tensor<Scalar>& input, bool training, int last = -1);

    std::vector<std::pair<std::string, Tensor<Scalar>>> named_tensors(const std::string& prefix) const;
    std::vector<std::pair<std::string, Tensor<Scalar>>> named_parameters(const std::string& prefix) const;
    std::int64_t parameter_count() const;
    int count(LayerKind kind) const;

private:
    struct Node {
        Layer<Scalar> layer;
        std::vector<int> inputs;
        std::string tag;
    };

    int input_channels_;
    std::mt19937_64 rng_;
    std::vector<Node> nodes_;
};

}  // namespace lpr
