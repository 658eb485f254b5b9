#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peftbench/error.hpp"

namespace peftbench {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct GraphNode;

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::optional<std::vector<double>> grad;
    bool requires_grad = false;
    std::shared_ptr<GraphNode> node;  // null for leaves
};

// Reference-counted handle to a dense row-major array of doubles. Copies of a
// Tensor alias the same storage; use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> values() const;
    std::span<double> mutable_values();
    double item() const;
    double at(std::size_t flat) const { return values()[flat]; }

    bool requires_grad() const;
    void set_requires_grad(bool on);

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();  // allocates a zero buffer if absent
    void set_grad(std::vector<double> g);
    void zero_grad();
    void drop_grad();

    const std::shared_ptr<GraphNode>& node() const;
    bool is_leaf() const { return node() == nullptr; }

    // Same values, fresh leaf without graph or grad.
    Tensor detach() const;
    // Deep copy of values and flags (grad dropped, graph dropped).
    Tensor clone() const;

    bool same(const Tensor& other) const { return impl_ == other.impl_; }
    TensorImpl* impl() const { return impl_.get(); }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Accumulates into the gradient buffer of `t`, allocating it on first use.
// No-op when `t` does not require grad.
void accumulate_grad(const Tensor& t, std::span<const double> g);

using BackwardFn = std::function<void(std::span<const double> out_values, std::span<const double> out_grad)>;

struct GraphNode {
    std::string op;
    std::vector<Tensor> inputs;
    BackwardFn backward;
};

// Builds an op result. The node is attached only when an input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn backward);

// Reverse-mode sweep from a scalar root.
void backward(const Tensor& root);

void zero_grads(std::span<Tensor> params);

}  // namespace peftbench
