#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "peftbench/tensor.hpp"

// Differentiable primitives. Every function validates shapes, computes the
// forward value and records a graph node when any input requires grad.
namespace peftbench::ops {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// a: [..., M, K]; b: [K, N] or [..., K, N] with the same leading dims as a.
Tensor matmul(const Tensor& a, const Tensor& b);
// x: [..., in], w: [out, in], bias: [out] or undefined. Computes x·wᵀ + bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

struct ConvGeom {
    std::size_t stride = 1;
    std::size_t padding = 0;
};
// x: [N, C, H, W], w: [O, C, KH, KW], bias: [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom geom);
// [N, C, H, W] -> [N, C, 2H, 2W]
Tensor upsample_nearest2x(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact (erf) form
Tensor softmax(const Tensor& x);  // over the last axis

inline constexpr double kNormEps = 1e-5;

// Normalizes over the last axis; gamma, beta: [D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kNormEps);
// x: [N, C, H, W]; gamma, beta: [C].
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t groups,
                  double eps = kNormEps);

// x: [N, C] or [N, C, H, W]. Training mode normalizes with batch statistics
// and folds them into the running buffers as r <- momentum*r + (1-momentum)*batch
// (unbiased variance). Eval mode normalizes with the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum = 0.9, double eps = kNormEps);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_axes(const Tensor& x, std::span<const std::size_t> axes, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::span<const std::size_t> perm);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end);
Tensor concat(std::span<const Tensor> xs, std::size_t axis);

// y = gamma[c] * x + beta[c] with c indexing `axis`.
Tensor scale_shift(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t axis);

// logits: [B, C]; mean-reduced over the batch.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace peftbench::ops

namespace peftbench {

using AttrValue = std::variant<std::int64_t, double, std::vector<std::int64_t>>;
using AttrMap = std::map<std::string, AttrValue>;

// String-keyed entry point over the primitive set, e.g.
// apply_primitive("conv2d", {x, w}, {{"stride", 2}, {"padding", 1}}).
Tensor apply_primitive(std::string_view kind, std::vector<Tensor> inputs, const AttrMap& attrs = {});

// Identifiers accepted by apply_primitive.
std::span<const std::string_view> primitive_names();

}  // namespace peftbench
