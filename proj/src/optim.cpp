#include "lpr/optim.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lpr/error.hpp"

namespace lpr {

void OptimizerConfig::validate() const
{
    if (!(learning_rate > 0)) throw ArgumentError("learning rate must be > 0");
    auto in_unit = [](double v) { return v >= 0 && v < 1; };
    if (!in_unit(momentum) || !in_unit(beta1) || !in_unit(beta2)) {
        throw ArgumentError("momentum and betas must lie in [0, 1)");
    }
    if (weight_decay < 0) throw ArgumentError("weight decay must be >= 0");
    if (!(eps > 0)) throw ArgumentError("eps must be > 0");
}

Optimizer::Optimizer(OptimizerConfig config, NamedTensors params) : config_(config), params_(std::move(params))
{
    config_.validate();
    for (const auto& [name, t] : params_) {
        first_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0f);
        second_.emplace_back(config_.kind == OptimizerKind::adam ? static_cast<std::size_t>(t.numel()) : 0, 0.0f);
    }
}

void Optimizer::step(double learning_rate)
{
    const double lr = learning_rate > 0 ? learning_rate : config_.learning_rate;
    for (auto& [name, t] : params_) {
        if (!t.has_grad()) throw GraphError("parameter " + name + " has no gradient");
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        TensorF& t = params_[p].second;
        auto w = t.data();
        auto g = t.grad();
        const bool decay = config_.weight_decay > 0 && t.rank() >= 2;
        auto& m = first_[p];
        if (config_.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                float gi = g[i] + (decay ? static_cast<float>(config_.weight_decay) * w[i] : 0.0f);
                m[i] = static_cast<float>(config_.momentum) * m[i] + gi;
                w[i] -= static_cast<float>(lr) * m[i];
            }
        } else {
            auto& v = second_[p];
            const float b1 = static_cast<float>(config_.beta1);
            const float b2 = static_cast<float>(config_.beta2);
            const float step_size = static_cast<float>(lr / bc1);
            const float inv_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
            const float eps = static_cast<float>(config_.eps);
            for (std::size_t i = 0; i < w.size(); ++i) {
                float gi = g[i] + (decay ? static_cast<float>(config_.weight_decay) * w[i] : 0.0f);
                m[i] = b1 * m[i] + (1.0f - b1) * gi;
                v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
                w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_bc2 + eps);
            }
        }
    }
    zero_grad();
}

void Optimizer::zero_grad()
{
    for (auto& [name, t] : params_) t.zero_grad();
}

Optimizer::NamedTensors Optimizer::state_tensors() const
{
    NamedTensors out;
    for (std::size_t p = 0; p < params_.size(); ++p) {
        const auto& shape = params_[p].second.shape();
        out.emplace_back("m." + params_[p].first, TensorF::from_data(shape, first_[p]));
        if (config_.kind == OptimizerKind::adam) {
            out.emplace_back("v." + params_[p].first, TensorF::from_data(shape, second_[p]));
        }
    }
    return out;
}

void Optimizer::load_state(const NamedTensors& state, std::int64_t steps)
{
    std::map<std::string, const TensorF*> by_name;
    for (const auto& [name, t] : state) by_name[name] = &t;
    auto restore = [&](const std::string& key, std::vector<float>& dst) {
        auto it = by_name.find(key);
        if (it == by_name.end()) throw DataError("optimizer state missing " + key);
        if (static_cast<std::size_t>(it->second->numel()) != dst.size()) {
            throw DataError("optimizer state " + key + " has wrong size");
        }
        std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
    };
    for (std::size_t p = 0; p < params_.size(); ++p) {
        restore("m." + params_[p].first, first_[p]);
        if (config_.kind == OptimizerKind::adam) restore("v." + params_[p].first, second_[p]);
    }
    steps_ = steps;
}

}  // namespace lpr
