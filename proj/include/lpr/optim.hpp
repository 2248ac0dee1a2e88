#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lpr/tensor.hpp"

namespace lpr {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double momentum = 0.0;  // sgd
    double beta1 = 0.9;     // adam
    double beta2 = 0.999;   // adam
    double eps = 1e-8;
    double weight_decay = 0.0;  // L2, applied to rank >= 2 tensors only

    void validate() const;
};

/// First-order optimizer over a fixed named parameter set. After each step the
/// gradients are zeroed. State is exposed as named tensors for checkpointing.
class Optimizer {
public:
    using NamedTensors = std::vector<std::pair<std::string, TensorF>>;

    Optimizer(OptimizerConfig config, NamedTensors params);

    /// Applies one update with the given learning rate (defaults to config's).
    void step(double learning_rate = -1.0);
    void zero_grad();

    const OptimizerConfig& config() const noexcept { return config_; }
    std::int64_t steps() const noexcept { return steps_; }
    const NamedTensors& params() const noexcept { return params_; }

    /// Moment buffers as "m.<param>" / "v.<param>" entries.
    NamedTensors state_tensors() const;
    /// Restores buffers produced by state_tensors() and the step counter.
    void load_state(const NamedTensors& state, std::int64_t steps);

private:
    OptimizerConfig config_;
    NamedTensors params_;
    std::vector<std::vector<float>> first_;
    std::vector<std::vector<float>> second_;
    std::int64_t steps_ = 0;
};

}  // namespace lpr
