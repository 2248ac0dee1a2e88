#include "lpr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "lpr/error.hpp"

namespace lpr {

namespace {
thread_local bool t_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& shape)
{
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad)
{
    auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<Scalar>(static_cast<std::size_t>(n), value),
                     requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_data(Shape shape, std::vector<Scalar> data, bool requires_grad)
{
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad)
{
    return from_data({}, {value}, requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::randn(Shape shape, std::mt19937_64& rng, Scalar stddev,
                                     bool requires_grad)
{
    auto n = static_cast<std::size_t>(shape_numel(shape));
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    std::vector<Scalar> data(n);
    for (auto& v : data) v = static_cast<Scalar>(dist(rng));
    return from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename Scalar>
const Shape& Tensor<Scalar>::shape() const
{
    if (!impl_) throw GraphError("use of undefined tensor");
    return impl_->shape;
}

template <typename Scalar>
int Tensor<Scalar>::dim(int i) const
{
    const auto& s = shape();
    int r = static_cast<int>(s.size());
    int idx = i < 0 ? r + i : i;
    if (idx < 0 || idx >= r) {
        throw ShapeError("dimension " + std::to_string(i) + " out of range for " + shape_str(s));
    }
    return s[static_cast<std::size_t>(idx)];
}

template <typename Scalar>
std::int64_t Tensor<Scalar>::numel() const
{
    return static_cast<std::int64_t>(impl_ ? impl_->data.size() : 0);
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::data()
{
    if (!impl_) throw GraphError("use of undefined tensor");
    return impl_->data;
}

template <typename Scalar>
std::span<const Scalar> Tensor<Scalar>::data() const
{
    if (!impl_) throw GraphError("use of undefined tensor");
    return impl_->data;
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::grad()
{
    if (!impl_) throw GraphError("use of undefined tensor");
    return impl_->grad;
}

template <typename Scalar>
std::span<const Scalar> Tensor<Scalar>::grad() const
{
    if (!impl_) throw GraphError("use of undefined tensor");
    return impl_->grad;
}

template <typename Scalar>
bool Tensor<Scalar>::has_grad() const
{
    return impl_ && impl_->grad.size() == impl_->data.size() && !impl_->data.empty();
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const
{
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

template <typename Scalar>
bool Tensor<Scalar>::requires_grad() const
{
    return impl_ && impl_->requires_grad;
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool flag)
{
    if (!impl_) throw GraphError("use of undefined tensor");
    if (impl_->node && !flag) throw GraphError("cannot clear requires_grad on a non-leaf tensor");
    impl_->requires_grad = flag;
    return *this;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad()
{
    if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), Scalar(0));
}

template <typename Scalar>
bool Tensor<Scalar>::is_leaf() const
{
    return impl_ && !impl_->node;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const
{
    return from_data(shape(), impl_->data, false);
}

template <typename Scalar>
void Tensor<Scalar>::backward() const
{
    if (!impl_) throw GraphError("backward on undefined tensor");
    if (impl_->data.size() != 1) {
        throw GraphError("backward requires a scalar loss, got shape " + shape_str(impl_->shape));
    }
    if (!impl_->node) {
        throw GraphError("backward on a tensor without recorded history");
    }
    if (impl_->node->consumed) {
        throw GraphError("backward called twice on the same graph");
    }

    // Iterative post-order DFS gives a topological order of the impls.
    // Owning pointers: clearing a node's inputs below may drop the last
    // reference to an intermediate that is still queued.
    std::vector<std::shared_ptr<Impl>> order;
    std::unordered_set<Impl*> visited;
    std::vector<std::pair<std::shared_ptr<Impl>, std::size_t>> stack;
    stack.emplace_back(impl_, 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (cur->node && next < cur->node->inputs.size()) {
            std::shared_ptr<Impl> child = cur->node->inputs[next++];
            if (child->node && !child->node->consumed && visited.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
            continue;
        }
        order.push_back(cur);
        stack.pop_back();
    }

    impl_->grad.assign(1, Scalar(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Impl* t = it->get();
        auto& node = *t->node;
        if (t->grad.size() == t->data.size() && node.backward) node.backward(*t);
        node.consumed = true;
        node.backward = nullptr;
        node.inputs.clear();
    }
}

template <typename Scalar>
Tensor<Scalar> make_op_result(std::string op, Shape shape, std::vector<Scalar> data,
                              const std::vector<Tensor<Scalar>>& inputs,
                              typename detail::GradNode<Scalar>::BackwardFn backward)
{
#ifndef NDEBUG
    bool inputs_finite = true;
    for (const auto& in : inputs) {
        for (Scalar v : in.data()) inputs_finite = inputs_finite && std::isfinite(v);
    }
    if (inputs_finite) {
        for (Scalar v : data) {
            if (!std::isfinite(v)) throw NumericError("non-finite output from op " + op);
        }
    }
#endif
    Tensor<Scalar> out = Tensor<Scalar>::from_data(std::move(shape), std::move(data), false);
    if (!grad_enabled()) return out;
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor<Scalar>& t) { return t.requires_grad(); });
    if (!any) return out;
    auto node = std::make_shared<detail::GradNode<Scalar>>();
    node->op = std::move(op);
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
    out.impl()->requires_grad = true;
    return out;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_op_result<float>(std::string, Shape, std::vector<float>,
                                             const std::vector<Tensor<float>>&,
                                             detail::GradNode<float>::BackwardFn);
template Tensor<double> make_op_result<double>(std::string, Shape, std::vector<double>,
                                               const std::vector<Tensor<double>>&,
                                               detail::GradNode<double>::BackwardFn);

}  // namespace lpr
