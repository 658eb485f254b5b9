#include "peftbench/peft.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace peftbench {

namespace {

constexpr std::pair<Method, std::string_view> kMethods[] = {
    {Method::FullFt, "full-ft"},
    {Method::LinearProbe, "linear-probe"},
    {Method::Bias, "bias"},
    {Method::BatchNorm, "batchnorm"},
    {Method::LayerNorm, "layernorm"},
    {Method::Attention, "attention"},
    {Method::BitFit, "bitfit"},
    {Method::BiasNorm, "bias-norm"},
    {Method::BiasNormAttention, "bias-norm-attention"},
    {Method::Tsa, "tsa"},
    {Method::Ssf, "ssf"},
    {Method::AdaptFormer, "adaptformer"},
    {Method::Lora, "lora"},
    {Method::SvDiff, "svdiff"},
};

constexpr Method kMethodList[] = {
    Method::FullFt,   Method::LinearProbe,       Method::Bias, Method::BatchNorm,   Method::LayerNorm,
    Method::Attention, Method::BitFit,           Method::BiasNorm, Method::BiasNormAttention, Method::Tsa,
    Method::Ssf,      Method::AdaptFormer,       Method::Lora, Method::SvDiff,
};

bool is_norm_kind(LayerKind k)
{
    return k == LayerKind::BatchNorm || k == LayerKind::LayerNorm || k == LayerKind::GroupNorm;
}

bool is_bias_role(Role r) { return r == Role::Bias || r == Role::NormShift; }

}  // namespace

std::string_view method_name(Method m)
{
    for (auto& [method, name] : kMethods)
        if (method == m) return name;
    return "?";
}

Method parse_method(std::string_view s)
{
    for (auto& [method, name] : kMethods)
        if (name == s) return method;
    throw ConfigError("unknown PEFT method '" + std::string(s) + "'");
}

std::span<const Method> all_methods() { return kMethodList; }

bool is_additive(Method m)
{
    switch (m) {
    case Method::Tsa:
    case Method::Ssf:
    case Method::AdaptFormer:
    case Method::Lora:
    case Method::SvDiff:
        return true;
    default:
        return false;
    }
}

bool method_supports(Method m, Arch a)
{
    const bool cnn = a == Arch::MiniCnn, vit = a == Arch::MiniVit, den = a == Arch::MiniDenoiser;
    switch (m) {
    case Method::FullFt:
    case Method::Ssf:
        return true;
    case Method::LinearProbe: return cnn || vit;
    case Method::Bias: return cnn || den;
    case Method::BatchNorm:
    case Method::Tsa:
        return cnn;
    case Method::LayerNorm:
    case Method::Attention:
    case Method::AdaptFormer:
    case Method::Lora:
        return vit || den;
    case Method::BitFit: return vit;
    case Method::BiasNorm:
    case Method::BiasNormAttention:
    case Method::SvDiff:
        return den;
    }
    return false;
}

void validate_peft_spec(const PeftSpec& spec)
{
    switch (spec.method) {
    case Method::Lora:
        if (spec.rank < 1) throw ConfigError("lora: rank must be >= 1");
        if (!(spec.alpha >= 0.0) || !std::isfinite(spec.alpha)) throw ConfigError("lora: alpha must be positive");
        break;
    case Method::AdaptFormer:
        if (spec.bottleneck < 1) throw ConfigError("adaptformer: bottleneck must be >= 1");
        if (!std::isfinite(spec.scale) || spec.scale < 0.0) throw ConfigError("adaptformer: scale must be >= 0");
        break;
    case Method::Tsa:
        if (spec.kernel < 1 || spec.kernel % 2 == 0) throw ConfigError("tsa: kernel must be a positive odd size");
        break;
    case Method::SvDiff:
        if (spec.filter.empty()) throw ConfigError("svdiff: empty layer filter");
        break;
    default:
        break;
    }
}

Json peft_spec_to_json(const PeftSpec& spec)
{
    Json j{{"method", std::string(method_name(spec.method))}};
    switch (spec.method) {
    case Method::Lora:
        j["rank"] = spec.rank;
        j["alpha"] = spec.alpha > 0.0 ? spec.alpha : static_cast<double>(spec.rank);
        break;
    case Method::AdaptFormer:
        j["bottleneck"] = spec.bottleneck;
        j["scale"] = spec.scale;
        break;
    case Method::Tsa: j["kernel"] = spec.kernel; break;
    case Method::SvDiff: j["filter"] = spec.filter; break;
    default: break;
    }
    if (spec.init_seed != 0) j["init_seed"] = spec.init_seed;
    return j;
}

PeftSpec peft_spec_from_json(const Json& j)
{
    PeftSpec s;
    s.method = parse_method(json_require<std::string>(j, "method"));
    s.rank = json_get(j, "rank", s.rank);
    s.alpha = json_get(j, "alpha", s.alpha);
    s.bottleneck = json_get(j, "bottleneck", s.bottleneck);
    s.scale = json_get(j, "scale", s.scale);
    s.kernel = json_get(j, "kernel", s.kernel);
    s.filter = json_get(j, "filter", s.filter);
    s.init_seed = json_get(j, "init_seed", s.init_seed);
    validate_peft_spec(s);
    return s;
}

TrainabilityMask select_trainable(const ModelGraph& model, const ParamSelector& selector, std::string_view what)
{
    TrainabilityMask mask;
    std::size_t matched = 0;
    for (const auto& p : model.params) {
        if (p.role == Role::Head) continue;
        if (selector(p, model.layer(p.layer))) {
            mask.trainable_names.insert(p.name);
            ++matched;
        }
    }
    if (matched == 0) {
        throw ConfigError(std::string(what) + ": selector matches no parameters of " +
                          std::string(arch_name(model.arch)));
    }
    for (const auto& p : model.params) {
        if (p.role == Role::Head) {
            mask.trainable_names.insert(p.name);
            mask.head_trainable = true;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// AdaptedModel

ParamRecord& AdaptedModel::injected_param(const std::string& name)
{
    for (auto& p : injected)
        if (p.name == name) return p;
    throw ConfigError("adapted model: no injected parameter '" + name + "'");
}

bool AdaptedModel::has_injected(const std::string& name) const
{
    return std::any_of(injected.begin(), injected.end(), [&](const ParamRecord& p) { return p.name == name; });
}

std::vector<ParamRecord*> AdaptedModel::trainable_params()
{
    std::vector<ParamRecord*> out;
    for (auto& p : base.params)
        if (mask.contains(p.name)) out.push_back(&p);
    for (auto& p : injected) out.push_back(&p);
    return out;
}

AdaptedModel AdaptedModel::clone() const
{
    AdaptedModel a;
    a.base = base.clone();
    a.injected = injected;
    for (auto& p : a.injected) p.tensor = p.tensor.clone();
    a.mask = mask;
    a.spec = spec;
    a.svd = svd;
    a.merged = merged;
    return a;
}

namespace {

// Copies `model` and sets trainability flags from `mask`.
AdaptedModel adapt(const ModelGraph& model, TrainabilityMask mask, const PeftSpec& spec)
{
    AdaptedModel a;
    a.base = model.clone();
    a.mask = std::move(mask);
    a.spec = spec;
    for (auto& p : a.base.params) {
        p.trainable = a.mask.contains(p.name);
        p.tensor.set_requires_grad(p.trainable);
    }
    return a;
}

TrainabilityMask head_only(const ModelGraph& model)
{
    TrainabilityMask mask;
    for (const auto& p : model.params) {
        if (p.role == Role::Head) {
            mask.trainable_names.insert(p.name);
            mask.head_trainable = true;
        }
    }
    return mask;
}

void inject(AdaptedModel& a, std::string name, std::string layer, Tensor t)
{
    if (a.base.has_param(name) || a.has_injected(name)) throw ConfigError("adapter name clash: '" + name + "'");
    t.set_requires_grad(true);
    a.injected.push_back(ParamRecord{std::move(name), Role::Adapter, std::move(layer), std::move(t), true});
}

// Owning layer of a hook site: the site itself or its enclosing container.
std::string owner_of(const ModelGraph& m, const std::string& site)
{
    if (m.find_layer(site)) return site;
    auto dot = site.rfind('.');
    return dot == std::string::npos ? site : site.substr(0, dot);
}

void require_arch(Method m, Arch a)
{
    if (!method_supports(m, a)) {
        throw IncompatibleError(std::string(method_name(m)) + " is not applicable to " + std::string(arch_name(a)));
    }
}

bool is_lora_target(const HookSite& s)
{
    if (s.kind != SiteKind::Dense || s.owner_kind != LayerKind::MultiHeadAttention) return false;
    auto tail = s.name.substr(s.name.rfind('.') + 1);
    return tail == "q" || tail == "v";
}

bool svdiff_match(const HookSite& s, const std::string& filter)
{
    if (s.kind != SiteKind::Dense && s.kind != SiteKind::Conv) return false;
    if (filter == "all") return true;
    if (filter == "conv") return s.kind == SiteKind::Conv;
    if (filter == "dense") return s.kind == SiteKind::Dense;
    if (filter == "attention") return s.owner_kind == LayerKind::MultiHeadAttention;
    return s.name.rfind(filter, 0) == 0;
}

}  // namespace

AdaptedModel inject_lora(const ModelGraph& model, std::size_t rank, double alpha, std::uint64_t seed)
{
    PeftSpec spec;
    spec.method = Method::Lora;
    spec.rank = rank;
    spec.alpha = alpha;
    spec.init_seed = seed;
    validate_peft_spec(spec);
    require_arch(spec.method, model.arch);
    AdaptedModel a = adapt(model, head_only(model), spec);
    RngStream rng(seed, 0x10a);
    std::uint64_t k = 0;
    for (const auto& s : hook_sites(model)) {
        if (!is_lora_target(s)) continue;
        std::size_t d = s.width, in = s.in_features;
        if (rank > std::min(d, in)) {
            throw ConfigError("lora: rank " + std::to_string(rank) + " exceeds min(d, k) = " +
                              std::to_string(std::min(d, in)) + " at " + s.name);
        }
        auto stream = rng.split(k++);
        std::string owner = owner_of(model, s.name);
        inject(a, s.name + ".lora_A", owner,
               Tensor({rank, in}, stream.normals(rank * in, 1.0 / std::sqrt(static_cast<double>(in)))));
        inject(a, s.name + ".lora_B", owner, Tensor::zeros({d, rank}));
    }
    if (a.injected.empty()) throw ConfigError("lora: model has no attention projections");
    return a;
}

AdaptedModel inject_ssf(const ModelGraph& model)
{
    PeftSpec spec;
    spec.method = Method::Ssf;
    AdaptedModel a = adapt(model, head_only(model), spec);
    for (const auto& s : hook_sites(model)) {
        std::string owner = owner_of(model, s.name);
        inject(a, s.name + ".ssf_scale", owner, Tensor::full({s.width}, 1.0));
        inject(a, s.name + ".ssf_shift", owner, Tensor::zeros({s.width}));
    }
    return a;
}

AdaptedModel inject_adaptformer(const ModelGraph& model, std::size_t bottleneck, double scale, std::uint64_t seed)
{
    PeftSpec spec;
    spec.method = Method::AdaptFormer;
    spec.bottleneck = bottleneck;
    spec.scale = scale;
    spec.init_seed = seed;
    validate_peft_spec(spec);
    AdaptedModel a = adapt(model, head_only(model), spec);
    RngStream rng(seed, 0xada);
    std::uint64_t k = 0;
    for (const auto& l : model.layers) {
        if (l.kind != LayerKind::MlpBlock) continue;
        std::size_t d = l.dims[0];
        auto stream = rng.split(k++);
        std::string p = l.name + ".adaptformer";
        inject(a, p + ".down.weight", l.name,
               Tensor({bottleneck, d}, stream.normals(bottleneck * d, 1.0 / std::sqrt(static_cast<double>(d)))));
        inject(a, p + ".down.bias", l.name, Tensor::zeros({bottleneck}));
        inject(a, p + ".up.weight", l.name, Tensor::zeros({d, bottleneck}));
        inject(a, p + ".up.bias", l.name, Tensor::zeros({d}));
    }
    if (a.injected.empty()) {
        throw IncompatibleError("adaptformer: " + std::string(arch_name(model.arch)) + " has no MLP blocks");
    }
    return a;
}

AdaptedModel inject_tsa(const ModelGraph& model, std::size_t kernel)
{
    PeftSpec spec;
    spec.method = Method::Tsa;
    spec.kernel = kernel;
    validate_peft_spec(spec);
    AdaptedModel a = adapt(model, head_only(model), spec);
    for (const auto& s : hook_sites(model)) {
        if (s.kind != SiteKind::Conv || s.parent.empty()) continue;
        const auto* parent = model.find_layer(s.parent);
        if (!parent || parent->kind != LayerKind::ResidualBlock) continue;
        inject(a, s.name + ".tsa.weight", s.name, Tensor::zeros({s.width, s.in_features, kernel, kernel}));
    }
    if (a.injected.empty()) {
        throw IncompatibleError("tsa: " + std::string(arch_name(model.arch)) + " has no convolutional residual blocks");
    }
    return a;
}

AdaptedModel apply_svdiff(const ModelGraph& model, const std::string& filter)
{
    PeftSpec spec;
    spec.method = Method::SvDiff;
    spec.filter = filter;
    validate_peft_spec(spec);
    AdaptedModel a = adapt(model, head_only(model), spec);
    for (const auto& s : hook_sites(model)) {
        if (!svdiff_match(s, filter)) continue;
        const Tensor& w = model.param(s.weight).tensor;
        std::size_t m = w.dim(0), n = w.numel() / m;
        Svd svd = svd_small(Matrix(m, n, std::vector<double>(w.values().begin(), w.values().end())));
        std::size_t k = svd.sigma.size();
        SvdFactors f;
        f.weight_shape = w.shape();
        f.u = svd.u.to_tensor();
        f.sigma = Tensor({k}, svd.sigma);
        f.vt = svd.v.transposed().to_tensor();
        a.svd.emplace(s.name, std::move(f));
        inject(a, s.name + ".svdiff_delta", owner_of(model, s.name), Tensor::zeros({k}));
    }
    if (a.svd.empty()) throw ConfigError("svdiff: filter '" + filter + "' matches no layers");
    return a;
}

AdaptedModel make_strategy(const ModelGraph& model, const PeftSpec& spec)
{
    validate_peft_spec(spec);
    require_arch(spec.method, model.arch);
    const std::string what(method_name(spec.method));
    auto selective = [&](const ParamSelector& sel) { return adapt(model, select_trainable(model, sel, what), spec); };
    switch (spec.method) {
    case Method::FullFt: {
        TrainabilityMask mask = head_only(model);
        for (const auto& p : model.params) mask.trainable_names.insert(p.name);
        return adapt(model, std::move(mask), spec);
    }
    case Method::LinearProbe: {
        TrainabilityMask mask = head_only(model);
        if (mask.trainable_names.empty()) throw IncompatibleError("linear-probe: model has no head");
        return adapt(model, std::move(mask), spec);
    }
    case Method::Bias:
    case Method::BitFit:
        return selective([](const ParamRecord& p, const LayerSpec&) { return is_bias_role(p.role); });
    case Method::BatchNorm:
        return selective([](const ParamRecord&, const LayerSpec& l) { return l.kind == LayerKind::BatchNorm; });
    case Method::LayerNorm:
        return selective([](const ParamRecord&, const LayerSpec& l) {
            return l.kind == LayerKind::LayerNorm || l.kind == LayerKind::GroupNorm;
        });
    case Method::Attention:
        return selective(
            [](const ParamRecord&, const LayerSpec& l) { return l.kind == LayerKind::MultiHeadAttention; });
    case Method::BiasNorm:
        return selective([](const ParamRecord& p, const LayerSpec& l) {
            return is_bias_role(p.role) || is_norm_kind(l.kind);
        });
    case Method::BiasNormAttention:
        return selective([](const ParamRecord& p, const LayerSpec& l) {
            return is_bias_role(p.role) || is_norm_kind(l.kind) || l.kind == LayerKind::MultiHeadAttention;
        });
    case Method::Tsa: return inject_tsa(model, spec.kernel);
    case Method::Ssf: return inject_ssf(model);
    case Method::AdaptFormer: return inject_adaptformer(model, spec.bottleneck, spec.scale, spec.init_seed);
    case Method::Lora: return inject_lora(model, spec.rank, spec.alpha, spec.init_seed);
    case Method::SvDiff: return apply_svdiff(model, spec.filter);
    }
    throw ConfigError("unhandled method " + what);
}

// ---------------------------------------------------------------------------
// Forward with adapters

Tensor svdiff_weight(const SvdFactors& f, const Tensor& delta)
{
    Tensor s = ops::relu(ops::add(f.sigma, delta));
    return ops::reshape(ops::matmul(ops::mul(f.u, s), f.vt), f.weight_shape);
}

namespace {

class AdapterHooks : public ForwardHooks {
public:
    explicit AdapterHooks(AdaptedModel& a) : a_(a)
    {
        for (auto& p : a.injected) params_.emplace(p.name, p.tensor);
    }

    Tensor weight(const ForwardContext& ctx, const std::string& site, const Tensor& w) override
    {
        if (a_.spec.method != Method::SvDiff) return w;
        auto it = a_.svd.find(site);
        if (it == a_.svd.end()) return w;
        return svdiff_weight(it->second, get(ctx, site + ".svdiff_delta"));
    }

    Tensor after_dense(const ForwardContext& ctx, const std::string& site, const Tensor& input, Tensor out) override
    {
        if (a_.spec.method == Method::Lora && !a_.merged) {
            Tensor A = find(ctx, site + ".lora_A");
            if (!A.defined()) return out;
            Tensor B = get(ctx, site + ".lora_B");
            Tensor delta = ops::linear(ops::linear(input, A, Tensor{}), B, Tensor{});
            return ops::add(out, ops::scale(delta, a_.spec.lora_scale()));
        }
        std::size_t axis = out.rank() - 1;
        return ssf(ctx, site, std::move(out), axis);
    }

    Tensor after_conv(const ForwardContext& ctx, const std::string& site, const Tensor& input, Tensor out,
                      ops::ConvGeom geom) override
    {
        if (a_.spec.method == Method::Tsa) {
            Tensor w = find(ctx, site + ".tsa.weight");
            if (!w.defined()) return out;
            ops::ConvGeom g{geom.stride, a_.spec.kernel / 2};
            return ops::add(out, ops::conv2d(input, w, Tensor{}, g));
        }
        return ssf(ctx, site, std::move(out), 1);
    }

    Tensor after_norm(const ForwardContext& ctx, const std::string& site, Tensor out, std::size_t channel_axis) override
    {
        return ssf(ctx, site, std::move(out), channel_axis);
    }

    Tensor after_attention(const ForwardContext& ctx, const std::string& site, Tensor out) override
    {
        std::size_t axis = out.rank() - 1;
        return ssf(ctx, site, std::move(out), axis);
    }

    Tensor mlp_block(const ForwardContext& ctx, const std::string& site, const Tensor& residual, const Tensor& normed,
                     Tensor mlp_out) override
    {
        if (a_.spec.method == Method::AdaptFormer) {
            std::string p = site + ".adaptformer";
            Tensor down = find(ctx, p + ".down.weight");
            if (down.defined()) {
                Tensor h = ops::relu(ops::linear(normed, down, get(ctx, p + ".down.bias")));
                Tensor branch = ops::linear(h, get(ctx, p + ".up.weight"), get(ctx, p + ".up.bias"));
                return ops::add(ops::add(mlp_out, ops::scale(branch, a_.spec.scale)), residual);
            }
        }
        return ForwardHooks::mlp_block(ctx, site, residual, normed, std::move(mlp_out));
    }

private:
    Tensor find(const ForwardContext& ctx, const std::string& name) const
    {
        auto it = params_.find(name);
        return it == params_.end() ? Tensor{} : ctx.use(it->second);
    }

    Tensor get(const ForwardContext& ctx, const std::string& name) const
    {
        Tensor t = find(ctx, name);
        if (!t.defined()) throw ConfigError("adapted model: missing injected parameter '" + name + "'");
        return t;
    }

    Tensor ssf(const ForwardContext& ctx, const std::string& site, Tensor out, std::size_t axis) const
    {
        if (a_.spec.method != Method::Ssf) return out;
        Tensor g = find(ctx, site + ".ssf_scale");
        if (!g.defined()) return out;
        return ops::scale_shift(out, g, get(ctx, site + ".ssf_shift"), axis);
    }

    AdaptedModel& a_;
    std::unordered_map<std::string, Tensor> params_;
};

}  // namespace

Tensor adapted_forward(AdaptedModel& adapted, const Tensor& batch, ForwardOptions opts)
{
    if (!is_additive(adapted.spec.method) || adapted.injected.empty()) {
        opts.hooks = nullptr;
        return model_forward(adapted.base, batch, opts);
    }
    AdapterHooks hooks(adapted);
    opts.hooks = &hooks;
    return model_forward(adapted.base, batch, opts);
}

// ---------------------------------------------------------------------------
// LoRA merge

namespace {

void fold_lora(ModelGraph& model, const AdaptedModel& adapted)
{
    double s = adapted.spec.lora_scale();
    for (const auto& s_site : hook_sites(model)) {
        if (!is_lora_target(s_site)) continue;
        const ParamRecord* A = nullptr;
        const ParamRecord* B = nullptr;
        for (const auto& p : adapted.injected) {
            if (p.name == s_site.name + ".lora_A") A = &p;
            if (p.name == s_site.name + ".lora_B") B = &p;
        }
        if (!A || !B) continue;
        Tensor& w = model.param(s_site.weight).tensor;
        std::size_t d = B->tensor.dim(0), r = B->tensor.dim(1), k = A->tensor.dim(1);
        auto wv = w.mutable_values();
        auto av = A->tensor.values();
        auto bv = B->tensor.values();
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < r; ++t) acc += bv[i * r + t] * av[t * k + j];
                wv[i * k + j] += s * acc;
            }
    }
}

}  // namespace

ModelGraph merge_lora(const AdaptedModel& adapted)
{
    if (adapted.spec.method != Method::Lora) {
        throw ConfigError("merge_lora: adapted model uses " + std::string(method_name(adapted.spec.method)) +
                          ", not lora");
    }
    if (adapted.merged) throw ConfigError("merge_lora: adapters already merged");
    ModelGraph m = adapted.base.clone();
    fold_lora(m, adapted);
    return m;
}

void merge_lora_inplace(AdaptedModel& adapted)
{
    if (adapted.spec.method != Method::Lora) {
        throw ConfigError("merge_lora: adapted model uses " + std::string(method_name(adapted.spec.method)) +
                          ", not lora");
    }
    if (adapted.merged) throw ConfigError("merge_lora: adapters already merged");
    fold_lora(adapted.base, adapted);
    adapted.injected.clear();
    adapted.merged = true;
}

TrainableCount trainable_count(const AdaptedModel& adapted)
{
    TrainableCount c;
    for (const auto& p : adapted.base.params) {
        c.total += p.tensor.numel();
        if (adapted.mask.contains(p.name)) c.trainable += p.tensor.numel();
    }
    for (const auto& p : adapted.injected) c.trainable += p.tensor.numel();
    c.ratio = c.total ? static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0.0;
    return c;
}

}  // namespace peftbench
