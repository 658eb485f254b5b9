#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peftbench/bench.hpp"
#include "peftbench/gradcheck.hpp"
#include "peftbench/ops.hpp"
#include "peftbench/peft.hpp"

namespace peftbench::testing {

Tensor random_tensor(const Shape& shape, RngStream& rng, double sd = 1.0, bool requires_grad = false);

// Scalar loss sum(w ⊙ t) with fixed pseudo-random weights, so every output
// entry feeds the gradient with a distinct coefficient.
Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 77);

struct GradCase {
    std::string label;  // "<primitive>/<input>"
    ScalarFn f;
    Tensor x;
};

// One case per (primitive, differentiable input) over primitive_names().
std::vector<GradCase> primitive_grad_cases(std::uint64_t seed);

// Small architectures for fast property tests.
CnnConfig tiny_cnn();
VitConfig tiny_vit();
DenoiserConfig tiny_denoiser();
ArchConfig tiny_arch_for(Method m);

// Batch of random inputs shaped for the model, with labels or
// timesteps/conditions as appropriate.
struct ModelBatch {
    Tensor x;
    std::vector<int> labels;
    std::vector<int> timesteps;
    std::vector<int> conditions;
    Tensor target;  // denoiser regression target
};

ModelBatch random_batch(const ModelGraph& model, std::size_t n, RngStream rng);

ForwardOptions batch_options(const ModelBatch& b, bool training, bool grad = true);

// Task loss for one batch: cross-entropy for classifiers, mse for the denoiser.
Tensor batch_loss(AdaptedModel& adapted, const ModelBatch& b, bool training);

// Perturbs every trainable parameter, base and injected, with small random
// noise so no gradient vanishes structurally (zero-initialized LoRA B and
// adapter up-projections would otherwise hide their partners' gradients).
void randomize_trainable(AdaptedModel& adapted, RngStream rng, double sd = 0.3);

// Relative finite-difference error for the named parameter of an adapted model.
double adapted_param_gradcheck(AdaptedModel& adapted, const std::string& param, const ModelBatch& b,
                               std::size_t max_entries = 24);

// First trainable parameter that is not part of the classification head.
std::string probe_param(AdaptedModel& adapted);

// Brute-force O(n^2) dominance filter.
std::vector<std::size_t> brute_force_front(const std::vector<ResultRow>& rows);

}  // namespace peftbench::testing
