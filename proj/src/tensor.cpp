#include "peftbench/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace peftbench {

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
{
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return Tensor({1}, {value}, requires_grad);
}

namespace {
TensorImpl& checked(const std::shared_ptr<TensorImpl>& impl)
{
    if (!impl) throw Error("tensor: use of undefined tensor");
    return *impl;
}
}  // namespace

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const
{
    const auto& s = shape();
    if (axis >= s.size()) throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).values.size(); }

std::span<const double> Tensor::values() const { return checked(impl_).values; }

std::span<double> Tensor::mutable_values() { return checked(impl_).values; }

double Tensor::item() const
{
    if (numel() != 1) throw ShapeError("tensor: item() on non-scalar " + shape_str(shape()));
    return impl_->values[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool on)
{
    auto& impl = checked(impl_);
    impl.requires_grad = on;
    if (!on) impl.grad.reset();
}

bool Tensor::has_grad() const { return checked(impl_).grad.has_value(); }

std::span<const double> Tensor::grad() const
{
    auto& impl = checked(impl_);
    if (!impl.grad) throw Error("tensor: grad is absent");
    return *impl.grad;
}

std::span<double> Tensor::mutable_grad()
{
    auto& impl = checked(impl_);
    if (!impl.grad) impl.grad.emplace(impl.values.size(), 0.0);
    return *impl.grad;
}

void Tensor::set_grad(std::vector<double> g)
{
    auto& impl = checked(impl_);
    if (g.size() != impl.values.size()) throw ShapeError("tensor: grad size mismatch");
    impl.grad = std::move(g);
}

void Tensor::zero_grad()
{
    auto& impl = checked(impl_);
    if (impl.grad) std::fill(impl.grad->begin(), impl.grad->end(), 0.0);
}

void Tensor::drop_grad() { checked(impl_).grad.reset(); }

const std::shared_ptr<GraphNode>& Tensor::node() const { return checked(impl_).node; }

Tensor Tensor::detach() const
{
    const auto& impl = checked(impl_);
    return Tensor(impl.shape, impl.values, false);
}

Tensor Tensor::clone() const
{
    const auto& impl = checked(impl_);
    return Tensor(impl.shape, impl.values, impl.requires_grad);
}

void accumulate_grad(const Tensor& t, std::span<const double> g)
{
    auto* impl = t.impl();
    if (!impl->requires_grad) return;
    if (!impl->grad) {
        impl->grad.emplace(g.begin(), g.end());
        return;
    }
    auto& dst = *impl->grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn backward)
{
    Tensor out(std::move(shape), std::move(values));
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
        out.set_requires_grad(true);
        auto node = std::make_shared<GraphNode>();
        node->op = op;
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
        out.impl()->node = std::move(node);
    }
    return out;
}

void backward(const Tensor& root)
{
    if (root.numel() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order of tensors.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root.impl(), 0);
    seen.insert(root.impl());
    while (!stack.empty()) {
        auto& [impl, next] = stack.back();
        if (impl->node && next < impl->node->inputs.size()) {
            auto* child = impl->node->inputs[next++].impl();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(impl);
        stack.pop_back();
    }

    root.impl()->grad = std::vector<double>{1.0};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* impl = *it;
        if (!impl->node || !impl->grad) continue;
        impl->node->backward(impl->values, *impl->grad);
    }
}

void zero_grads(std::span<Tensor> params)
{
    for (auto& p : params) p.zero_grad();
}

}  // namespace peftbench
