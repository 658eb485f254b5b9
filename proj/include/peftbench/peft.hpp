#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peftbench/linalg.hpp"
#include "peftbench/models.hpp"
#include "peftbench/serialize.hpp"

namespace peftbench {

enum class Method {
    FullFt,
    LinearProbe,
    Bias,
    BatchNorm,
    LayerNorm,
    Attention,
    BitFit,
    BiasNorm,
    BiasNormAttention,
    Tsa,
    Ssf,
    AdaptFormer,
    Lora,
    SvDiff,
};

std::string_view method_name(Method m);
Method parse_method(std::string_view s);
std::span<const Method> all_methods();

// Additive methods inject new parameters; selective ones unfreeze a subset.
bool is_additive(Method m);
bool method_supports(Method m, Arch a);

struct PeftSpec {
    Method method = Method::FullFt;
    std::size_t rank = 4;     // lora
    double alpha = 0.0;       // lora; 0 means alpha = rank
    std::size_t bottleneck = 4;  // adaptformer
    double scale = 0.1;          // adaptformer
    std::size_t kernel = 1;      // tsa, odd
    std::string filter = "all";  // svdiff: all | conv | dense | attention | site-name prefix
    std::uint64_t init_seed = 0;  // random adapter factors (LoRA A, AdaptFormer down-projection)

    double lora_scale() const { return (alpha > 0.0 ? alpha : static_cast<double>(rank)) / static_cast<double>(rank); }
};

void validate_peft_spec(const PeftSpec& spec);
Json peft_spec_to_json(const PeftSpec& spec);
PeftSpec peft_spec_from_json(const Json& j);

struct TrainabilityMask {
    std::set<std::string> trainable_names;
    bool head_trainable = false;

    bool contains(const std::string& name) const { return trainable_names.count(name) != 0; }
};

using ParamSelector = std::function<bool(const ParamRecord&, const LayerSpec&)>;

// Names matched by `selector` plus the head. Throws ConfigError naming
// `what` when the selector matches nothing.
TrainabilityMask select_trainable(const ModelGraph& model, const ParamSelector& selector, std::string_view what);

// Frozen SVD factors of one weight, stored as constants for the forward pass.
struct SvdFactors {
    Shape weight_shape;
    Tensor u;      // [m, k]
    Tensor sigma;  // [k]
    Tensor vt;     // [k, n]
};

struct AdaptedModel {
    ModelGraph base;
    std::vector<ParamRecord> injected;
    TrainabilityMask mask;
    PeftSpec spec;
    std::map<std::string, SvdFactors> svd;  // keyed by site
    bool merged = false;

    ParamRecord& injected_param(const std::string& name);
    bool has_injected(const std::string& name) const;

    // Masked base parameters followed by injected ones.
    std::vector<ParamRecord*> trainable_params();

    // Deep copy with independent tensors.
    AdaptedModel clone() const;
};

AdaptedModel make_strategy(const ModelGraph& model, const PeftSpec& spec);

AdaptedModel inject_lora(const ModelGraph& model, std::size_t rank, double alpha, std::uint64_t seed = 0);
AdaptedModel inject_ssf(const ModelGraph& model);
AdaptedModel inject_adaptformer(const ModelGraph& model, std::size_t bottleneck, double scale, std::uint64_t seed = 0);
AdaptedModel inject_tsa(const ModelGraph& model, std::size_t kernel = 1);
AdaptedModel apply_svdiff(const ModelGraph& model, const std::string& filter = "all");

// Forward through the adapted model; any hooks in `opts` are replaced.
Tensor adapted_forward(AdaptedModel& adapted, const Tensor& batch, ForwardOptions opts);

// Plain model with W = W0 + (alpha/r)·B·A on every targeted projection.
ModelGraph merge_lora(const AdaptedModel& adapted);
// Folds the adapters into `adapted.base` and drops them; a second call throws.
void merge_lora_inplace(AdaptedModel& adapted);

// Effective SV-Diff weight U·diag(relu(sigma + delta))·Vᵀ reshaped to the
// original weight shape.
Tensor svdiff_weight(const SvdFactors& f, const Tensor& delta);

struct TrainableCount {
    std::size_t trainable = 0;
    std::size_t total = 0;  // base parameter count (the full-ft equivalent)
    double ratio = 0.0;
};

TrainableCount trainable_count(const AdaptedModel& adapted);

}  // namespace peftbench
