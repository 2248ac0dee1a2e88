#pragma once

// Dense row-major tensors with a dynamic reverse-mode autograd tape.
//
// A Tensor is a cheap handle; copies share storage. Use clone() for a deep copy.
// Image data uses N x C x H x W layout throughout.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace lpr {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename Scalar>
class Tensor;

namespace detail {

template <typename Scalar>
struct TensorImpl;

template <typename Scalar>
struct GradNode {
    // Reads out.grad and accumulates into the captured inputs.
    using BackwardFn = std::function<void(const TensorImpl<Scalar>& out)>;

    std::string op;
    std::vector<std::shared_ptr<TensorImpl<Scalar>>> inputs;
    BackwardFn backward;
    bool consumed = false;
};

template <typename Scalar>
struct TensorImpl {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    std::shared_ptr<GradNode<Scalar>> node;

    /// Gradient buffer to accumulate into, or an empty span when this tensor
    /// does not take part in differentiation.
    std::span<Scalar> grad_sink()
    {
        if (!requires_grad) return {};
        if (grad.size() != data.size()) grad.assign(data.size(), Scalar(0));
        return grad;
    }
};

}  // namespace detail

/// True unless a NoGradGuard is alive on the calling thread.
bool grad_enabled() noexcept;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() noexcept;
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename Scalar>
class Tensor {
public:
    using value_type = Scalar;
    using Impl = detail::TensorImpl<Scalar>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
    static Tensor scalar(Scalar value, bool requires_grad = false);
    static Tensor randn(Shape shape, std::mt19937_64& rng, Scalar stddev = Scalar(1),
                        bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(impl_); }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    /// Size of dimension i; negative i counts from the back.
    int dim(int i) const;
    std::int64_t numel() const;

    std::span<Scalar> data();
    std::span<const Scalar> data() const;
    std::span<Scalar> grad();
    std::span<const Scalar> grad() const;
    bool has_grad() const;
    Scalar item() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    void zero_grad();
    bool is_leaf() const;

    /// Same values, no history, fresh storage.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    /// Reverse-mode sweep from this scalar. Consumes the graph.
    void backward() const;

    const std::shared_ptr<Impl>& impl() const noexcept { return impl_; }
    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

private:
    std::shared_ptr<Impl> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Builds the output of a differentiable op. The node is only recorded when
/// grad mode is on and at least one input requires a gradient.
template <typename Scalar>
Tensor<Scalar> make_op_result(std::string op, Shape shape, std::vector<Scalar> data,
                              const std::vector<Tensor<Scalar>>& inputs,
                              typename detail::GradNode<Scalar>::BackwardFn backward);

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t)
{
    std::vector<To> out(t.data().begin(), t.data().end());
    return Tensor<To>::from_data(t.shape(), std::move(out), t.requires_grad());
}

}  // namespace lpr
