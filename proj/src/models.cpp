#include "peftbench/models.hpp"

#include <algorithm>
#include <cmath>

#include "peftbench/error.hpp"

namespace peftbench {

std::string_view arch_name(Arch a)
{
    switch (a) {
    case Arch::MiniCnn: return "mini-cnn";
    case Arch::MiniVit: return "mini-vit";
    case Arch::MiniDenoiser: return "mini-denoiser";
    }
    return "?";
}

Arch parse_arch(std::string_view s)
{
    if (s == "mini-cnn") return Arch::MiniCnn;
    if (s == "mini-vit") return Arch::MiniVit;
    if (s == "mini-denoiser") return Arch::MiniDenoiser;
    throw ConfigError("unknown arch '" + std::string(s) + "' (expected mini-cnn, mini-vit or mini-denoiser)");
}

namespace {
constexpr std::pair<Role, std::string_view> kRoles[] = {
    {Role::Bias, "bias"},       {Role::NormScale, "norm-scale"}, {Role::NormShift, "norm-shift"},
    {Role::Attention, "attention"}, {Role::Conv, "conv"},         {Role::Dense, "dense"},
    {Role::Adapter, "adapter"}, {Role::Head, "head"},             {Role::Embed, "embed"},
};
}  // namespace

std::string_view role_name(Role r)
{
    for (auto& [role, name] : kRoles)
        if (role == r) return name;
    return "?";
}

Role parse_role(std::string_view s)
{
    for (auto& [role, name] : kRoles)
        if (name == s) return role;
    throw ConfigError("unknown role '" + std::string(s) + "'");
}

std::string_view layer_kind_name(LayerKind k)
{
    switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::BatchNorm: return "batch-norm";
    case LayerKind::LayerNorm: return "layer-norm";
    case LayerKind::GroupNorm: return "group-norm";
    case LayerKind::MultiHeadAttention: return "multi-head-attention";
    case LayerKind::MlpBlock: return "mlp-block";
    case LayerKind::PatchEmbed: return "patch-embed";
    case LayerKind::ResidualBlock: return "residual-block";
    case LayerKind::Head: return "head";
    case LayerKind::Embedding: return "embedding";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// ModelGraph

ParamRecord& ModelGraph::param(const std::string& name)
{
    auto it = param_index_.find(name);
    if (it == param_index_.end()) throw ConfigError("model: no parameter '" + name + "'");
    return params[it->second];
}

const ParamRecord& ModelGraph::param(const std::string& name) const
{
    return const_cast<ModelGraph*>(this)->param(name);
}

bool ModelGraph::has_param(const std::string& name) const { return param_index_.count(name) != 0; }

Tensor& ModelGraph::buffer(const std::string& name)
{
    auto it = buffer_index_.find(name);
    if (it == buffer_index_.end()) throw ConfigError("model: no buffer '" + name + "'");
    return buffers[it->second].tensor;
}

const LayerSpec* ModelGraph::find_layer(const std::string& name) const
{
    auto it = layer_index_.find(name);
    return it == layer_index_.end() ? nullptr : &layers[it->second];
}

const LayerSpec& ModelGraph::layer(const std::string& name) const
{
    if (auto* l = find_layer(name)) return *l;
    throw ConfigError("model: no layer '" + name + "'");
}

void ModelGraph::add_layer(LayerSpec spec)
{
    if (layer_index_.count(spec.name)) throw ConfigError("model: duplicate layer '" + spec.name + "'");
    layer_index_[spec.name] = layers.size();
    layers.push_back(std::move(spec));
}

void ModelGraph::add_param(ParamRecord rec)
{
    if (param_index_.count(rec.name)) throw ConfigError("model: duplicate parameter '" + rec.name + "'");
    if (!layer_index_.count(rec.layer)) throw ConfigError("model: parameter '" + rec.name + "' has no layer '" + rec.layer + "'");
    param_index_[rec.name] = params.size();
    params.push_back(std::move(rec));
}

void ModelGraph::add_buffer(BufferRecord rec)
{
    if (buffer_index_.count(rec.name)) throw ConfigError("model: duplicate buffer '" + rec.name + "'");
    buffer_index_[rec.name] = buffers.size();
    buffers.push_back(std::move(rec));
}

void ModelGraph::reindex()
{
    param_index_.clear();
    buffer_index_.clear();
    layer_index_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) param_index_[params[i].name] = i;
    for (std::size_t i = 0; i < buffers.size(); ++i) buffer_index_[buffers[i].name] = i;
    for (std::size_t i = 0; i < layers.size(); ++i) layer_index_[layers[i].name] = i;
}

ModelGraph ModelGraph::clone() const
{
    ModelGraph m;
    m.arch = arch;
    m.config = config;
    m.layers = layers;
    m.params = params;
    for (auto& p : m.params) p.tensor = p.tensor.clone();
    m.buffers = buffers;
    for (auto& b : m.buffers) b.tensor = b.tensor.clone();
    m.reindex();
    return m;
}

std::size_t ModelGraph::num_classes() const
{
    if (auto* c = std::get_if<CnnConfig>(&config)) return c->classes;
    if (auto* v = std::get_if<VitConfig>(&config)) return v->classes;
    return 0;
}

std::size_t ModelGraph::total_params() const
{
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

// ---------------------------------------------------------------------------
// Builders

namespace {

class Builder {
public:
    Builder(ModelGraph& m, RngStream rng) : m_(m), rng_(rng) {}

    Tensor random(Shape shape, double stddev)
    {
        auto stream = rng_.split(counter_++);
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), stream.normals(n, stddev), true);
    }

    void param(const std::string& name, Role role, const std::string& layer, Tensor t)
    {
        t.set_requires_grad(true);
        m_.add_param(ParamRecord{name, role, layer, std::move(t), true});
    }

    void layer(LayerKind kind, const std::string& name, std::vector<std::size_t> dims, const std::string& parent = "")
    {
        m_.add_layer(LayerSpec{kind, name, std::move(dims), parent});
    }

    // Dense projection owned by `owner` (itself unless part of a container layer).
    void dense_params(const std::string& site, const std::string& owner, std::size_t in, std::size_t out, Role wrole)
    {
        param(site + ".weight", wrole, owner, random({out, in}, 1.0 / std::sqrt(static_cast<double>(in))));
        param(site + ".bias", Role::Bias, owner, Tensor::zeros({out}));
    }

    void dense(const std::string& name, std::size_t in, std::size_t out, const std::string& parent = "")
    {
        layer(LayerKind::Dense, name, {in, out}, parent);
        dense_params(name, name, in, out, Role::Dense);
    }

    void conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
              std::size_t pad, bool bias, const std::string& parent = "", double gain = 1.0)
    {
        layer(LayerKind::Conv2d, name, {in, out, k, stride, pad}, parent);
        double fan_in = static_cast<double>(in * k * k);
        param(name + ".weight", Role::Conv, name, random({out, in, k, k}, gain * std::sqrt(2.0 / fan_in)));
        if (bias) param(name + ".bias", Role::Bias, name, Tensor::zeros({out}));
    }

    void norm(LayerKind kind, const std::string& name, std::size_t channels, const std::string& parent = "",
              std::size_t groups = 0)
    {
        std::vector<std::size_t> dims{channels};
        if (kind == LayerKind::GroupNorm) dims.push_back(groups);
        layer(kind, name, dims, parent);
        param(name + ".weight", Role::NormScale, name, Tensor::full({channels}, 1.0));
        param(name + ".bias", Role::NormShift, name, Tensor::zeros({channels}));
        if (kind == LayerKind::BatchNorm) {
            m_.add_buffer(BufferRecord{name + ".running_mean", Tensor::zeros({channels})});
            m_.add_buffer(BufferRecord{name + ".running_var", Tensor::full({channels}, 1.0)});
        }
    }

    void attention(const std::string& name, std::size_t dim, std::size_t heads, const std::string& parent)
    {
        layer(LayerKind::MultiHeadAttention, name, {dim, heads}, parent);
        for (const char* proj : {"q", "k", "v", "out"}) dense_params(name + "." + proj, name, dim, dim, Role::Attention);
    }

    void mlp(const std::string& name, std::size_t dim, std::size_t hidden, const std::string& parent)
    {
        layer(LayerKind::MlpBlock, name, {dim, hidden}, parent);
        dense_params(name + ".fc1", name, dim, hidden, Role::Dense);
        dense_params(name + ".fc2", name, hidden, dim, Role::Dense);
    }

    // Pre-norm transformer block: norm1, attn, norm2, mlp.
    void transformer_block(const std::string& prefix, std::size_t dim, std::size_t heads, std::size_t hidden)
    {
        norm(LayerKind::LayerNorm, prefix + ".norm1", dim);
        attention(prefix + ".attn", dim, heads, "");
        norm(LayerKind::LayerNorm, prefix + ".norm2", dim);
        mlp(prefix + ".mlp", dim, hidden, "");
    }

    void head(std::size_t in, std::size_t classes)
    {
        layer(LayerKind::Head, "head", {in, classes});
        param("head.weight", Role::Head, "head", Tensor::zeros({classes, in}));
        param("head.bias", Role::Head, "head", Tensor::zeros({classes}));
    }

private:
    ModelGraph& m_;
    RngStream rng_;
    std::uint64_t counter_ = 0;
};

void require_positive(std::size_t v, const char* what)
{
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
}

}  // namespace

ModelGraph build_mini_cnn(const CnnConfig& cfg, RngStream rng)
{
    require_positive(cfg.in_channels, "mini-cnn in_channels");
    require_positive(cfg.width, "mini-cnn width");
    require_positive(cfg.blocks, "mini-cnn blocks");
    require_positive(cfg.stem_stride, "mini-cnn stem_stride");
    if (cfg.classes < 1) throw ConfigError("mini-cnn classes must be >= 1");
    if (cfg.image_size == 0 || cfg.image_size % cfg.stem_stride != 0) {
        throw ConfigError("mini-cnn: image size " + std::to_string(cfg.image_size) + " not divisible by total stride " +
                          std::to_string(cfg.stem_stride));
    }
    ModelGraph m;
    m.arch = Arch::MiniCnn;
    m.config = cfg;
    Builder b(m, rng);
    b.conv("stem.conv", cfg.in_channels, cfg.width, 3, cfg.stem_stride, 1, false);
    b.norm(LayerKind::BatchNorm, "stem.bn", cfg.width);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        std::string p = "blocks." + std::to_string(i);
        b.layer(LayerKind::ResidualBlock, p, {cfg.width, cfg.width});
        b.conv(p + ".conv1", cfg.width, cfg.width, 3, 1, 1, false, p);
        b.norm(LayerKind::BatchNorm, p + ".bn1", cfg.width, p);
        b.conv(p + ".conv2", cfg.width, cfg.width, 3, 1, 1, false, p);
        b.norm(LayerKind::BatchNorm, p + ".bn2", cfg.width, p);
    }
    b.head(cfg.width, cfg.classes);
    return m;
}

std::size_t vit_sequence_length(const VitConfig& cfg)
{
    std::size_t g = cfg.image_size / cfg.patch;
    return g * g + 1;
}

ModelGraph build_mini_vit(const VitConfig& cfg, RngStream rng)
{
    require_positive(cfg.in_channels, "mini-vit in_channels");
    require_positive(cfg.dim, "mini-vit dim");
    require_positive(cfg.heads, "mini-vit heads");
    require_positive(cfg.blocks, "mini-vit blocks");
    require_positive(cfg.patch, "mini-vit patch");
    require_positive(cfg.mlp_hidden, "mini-vit mlp_hidden");
    if (cfg.classes < 1) throw ConfigError("mini-vit classes must be >= 1");
    if (cfg.dim % cfg.heads != 0) {
        throw ConfigError("mini-vit: dim " + std::to_string(cfg.dim) + " not divisible by heads " + std::to_string(cfg.heads));
    }
    if (cfg.image_size == 0 || cfg.image_size % cfg.patch != 0) {
        throw ConfigError("mini-vit: image size " + std::to_string(cfg.image_size) + " not divisible by patch " +
                          std::to_string(cfg.patch));
    }
    ModelGraph m;
    m.arch = Arch::MiniVit;
    m.config = cfg;
    Builder b(m, rng);
    std::size_t patch_in = cfg.patch * cfg.patch * cfg.in_channels;
    std::size_t seq = vit_sequence_length(cfg);
    b.layer(LayerKind::PatchEmbed, "patch_embed", {patch_in, cfg.dim});
    b.param("patch_embed.weight", Role::Embed, "patch_embed",
            b.random({cfg.dim, patch_in}, 1.0 / std::sqrt(static_cast<double>(patch_in))));
    b.param("patch_embed.bias", Role::Bias, "patch_embed", Tensor::zeros({cfg.dim}));
    b.layer(LayerKind::Embedding, "cls_token", {1, cfg.dim});
    b.param("cls_token", Role::Embed, "cls_token", b.random({1, 1, cfg.dim}, 0.02));
    b.layer(LayerKind::Embedding, "pos_embed", {seq, cfg.dim});
    b.param("pos_embed", Role::Embed, "pos_embed", b.random({1, seq, cfg.dim}, 0.02));
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        b.transformer_block("blocks." + std::to_string(i), cfg.dim, cfg.heads, cfg.mlp_hidden);
    }
    b.norm(LayerKind::LayerNorm, "norm", cfg.dim);
    b.head(cfg.dim, cfg.classes);
    return m;
}

std::size_t denoiser_bottleneck_size(const DenoiserConfig& cfg)
{
    return cfg.image_size >> cfg.levels;
}

namespace {
std::size_t level_channels(const DenoiserConfig& cfg, std::size_t level) { return cfg.base_channels << level; }
std::size_t emb_dim(const DenoiserConfig& cfg) { return 4 * cfg.base_channels; }

void denoiser_res_block(Builder& b, const DenoiserConfig& cfg, const std::string& p, std::size_t ci, std::size_t co)
{
    b.layer(LayerKind::ResidualBlock, p, {ci, co});
    b.norm(LayerKind::GroupNorm, p + ".norm1", ci, p, cfg.groups);
    b.conv(p + ".conv1", ci, co, 3, 1, 1, true, p);
    b.dense(p + ".emb", emb_dim(cfg), co, p);
    b.norm(LayerKind::GroupNorm, p + ".norm2", co, p, cfg.groups);
    b.conv(p + ".conv2", co, co, 3, 1, 1, true, p, 0.5);
    if (ci != co) b.conv(p + ".skip", ci, co, 1, 1, 0, true, p);
}
}  // namespace

ModelGraph build_mini_denoiser(const DenoiserConfig& cfg, RngStream rng)
{
    require_positive(cfg.in_channels, "mini-denoiser in_channels");
    require_positive(cfg.base_channels, "mini-denoiser base_channels");
    require_positive(cfg.levels, "mini-denoiser levels");
    require_positive(cfg.cond_dim, "mini-denoiser cond_dim");
    require_positive(cfg.heads, "mini-denoiser heads");
    require_positive(cfg.groups, "mini-denoiser groups");
    if (cfg.time_dim < 2 || cfg.time_dim % 2 != 0) throw ConfigError("mini-denoiser time_dim must be even and >= 2");
    if (cfg.cond_vocab < 1) throw ConfigError("mini-denoiser cond_vocab must be >= 1");
    std::size_t div = std::size_t{1} << cfg.levels;
    if (cfg.image_size == 0 || cfg.image_size % div != 0) {
        throw ConfigError("mini-denoiser: image size " + std::to_string(cfg.image_size) + " not divisible by 2^" +
                          std::to_string(cfg.levels));
    }
    std::size_t c_mid = level_channels(cfg, cfg.levels - 1);
    for (std::size_t l = 0; l < cfg.levels; ++l) {
        std::size_t up_in = (l + 1 == cfg.levels ? c_mid : level_channels(cfg, l + 1)) + level_channels(cfg, l);
        if (level_channels(cfg, l) % cfg.groups != 0 || up_in % cfg.groups != 0) {
            throw ConfigError("mini-denoiser: channel counts not divisible by " + std::to_string(cfg.groups) + " groups");
        }
    }
    if (c_mid % cfg.heads != 0) throw ConfigError("mini-denoiser: bottleneck channels not divisible by heads");

    ModelGraph m;
    m.arch = Arch::MiniDenoiser;
    m.config = cfg;
    Builder b(m, rng);
    std::size_t E = emb_dim(cfg);
    b.dense("time.fc1", cfg.time_dim, E);
    b.dense("time.fc2", E, E);
    b.layer(LayerKind::Embedding, "cond_embed", {cfg.cond_vocab, cfg.cond_dim});
    m.add_buffer(BufferRecord{"cond_embed.table", b.random({cfg.cond_vocab, cfg.cond_dim}, 1.0).detach()});
    b.dense("cond_proj", cfg.cond_dim, E);
    b.conv("conv_in", cfg.in_channels, cfg.base_channels, 3, 1, 1, true);
    std::size_t ch = cfg.base_channels;
    for (std::size_t l = 0; l < cfg.levels; ++l) {
        std::string p = "down." + std::to_string(l);
        std::size_t co = level_channels(cfg, l);
        denoiser_res_block(b, cfg, p + ".res", ch, co);
        b.conv(p + ".down", co, co, 3, 2, 1, true);
        ch = co;
    }
    denoiser_res_block(b, cfg, "mid.res", c_mid, c_mid);
    b.transformer_block("mid", c_mid, cfg.heads, 2 * c_mid);
    ch = c_mid;
    for (std::size_t l = cfg.levels; l-- > 0;) {
        std::size_t co = level_channels(cfg, l);
        denoiser_res_block(b, cfg, "up." + std::to_string(l) + ".res", ch + co, co);
        ch = co;
    }
    b.norm(LayerKind::GroupNorm, "out_norm", ch, "", cfg.groups);
    b.conv("conv_out", ch, cfg.in_channels, 3, 1, 1, true, "", 0.1);
    return m;
}

ModelGraph build_model(const ArchConfig& cfg, RngStream rng)
{
    return std::visit(
        [&](const auto& c) -> ModelGraph {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, CnnConfig>) return build_mini_cnn(c, rng);
            else if constexpr (std::is_same_v<T, VitConfig>) return build_mini_vit(c, rng);
            else return build_mini_denoiser(c, rng);
        },
        cfg);
}

void reset_head(ModelGraph& model, std::size_t classes)
{
    if (model.arch == Arch::MiniDenoiser) throw ConfigError("reset_head: mini-denoiser has no classification head");
    if (classes < 1) throw ConfigError("reset_head: classes must be >= 1");
    auto& w = model.param("head.weight");
    std::size_t in = w.tensor.dim(1);
    w.tensor = Tensor::zeros({classes, in}, true);
    model.param("head.bias").tensor = Tensor::zeros({classes}, true);
    for (auto& l : model.layers)
        if (l.name == "head") l.dims = {in, classes};
    if (auto* c = std::get_if<CnnConfig>(&model.config)) c->classes = classes;
    if (auto* v = std::get_if<VitConfig>(&model.config)) v->classes = classes;
}

// ---------------------------------------------------------------------------
// Forward

Tensor ForwardHooks::mlp_block(const ForwardContext&, const std::string&, const Tensor& residual, const Tensor&,
                               Tensor mlp_out)
{
    return ops::add(mlp_out, residual);
}

namespace {

class Runner {
public:
    Runner(ModelGraph& m, const ForwardOptions& opts)
        : m_(m), ctx_{opts.training, opts.grad}, hooks_(opts.hooks ? opts.hooks : &identity_)
    {
    }

    Tensor p(const std::string& name) { return ctx_.use(m_.param(name).tensor); }

    Tensor dense(const std::string& site, const Tensor& x)
    {
        Tensor w = hooks_->weight(ctx_, site, p(site + ".weight"));
        Tensor y = ops::linear(x, w, p(site + ".bias"));
        return hooks_->after_dense(ctx_, site, x, y);
    }

    Tensor conv(const std::string& site, const Tensor& x)
    {
        const auto& spec = m_.layer(site);
        ops::ConvGeom geom{spec.dims[3], spec.dims[4]};
        Tensor w = hooks_->weight(ctx_, site, p(site + ".weight"));
        Tensor bias = m_.has_param(site + ".bias") ? p(site + ".bias") : Tensor{};
        Tensor y = ops::conv2d(x, w, bias, geom);
        return hooks_->after_conv(ctx_, site, x, y, geom);
    }

    Tensor layer_norm(const std::string& site, const Tensor& x)
    {
        Tensor y = ops::layer_norm(x, p(site + ".weight"), p(site + ".bias"));
        return hooks_->after_norm(ctx_, site, y, x.rank() - 1);
    }

    Tensor group_norm(const std::string& site, const Tensor& x)
    {
        const auto& spec = m_.layer(site);
        Tensor y = ops::group_norm(x, p(site + ".weight"), p(site + ".bias"), spec.dims[1]);
        return hooks_->after_norm(ctx_, site, y, 1);
    }

    Tensor batch_norm(const std::string& site, const Tensor& x)
    {
        Tensor y = ops::batch_norm(x, p(site + ".weight"), p(site + ".bias"), m_.buffer(site + ".running_mean"),
                                   m_.buffer(site + ".running_var"), ctx_.training);
        return hooks_->after_norm(ctx_, site, y, 1);
    }

    // x: [B, N, D]
    Tensor attention(const std::string& site, const Tensor& x, std::size_t heads)
    {
        std::size_t B = x.dim(0), N = x.dim(1), D = x.dim(2), dh = D / heads;
        static constexpr std::size_t kSplit[] = {0, 2, 1, 3};
        auto split = [&](const Tensor& t) {
            return ops::reshape(ops::transpose(ops::reshape(t, {B, N, heads, dh}), kSplit), {B * heads, N, dh});
        };
        Tensor q = split(dense(site + ".q", x));
        Tensor k = split(dense(site + ".k", x));
        Tensor v = split(dense(site + ".v", x));
        static constexpr std::size_t kT[] = {0, 2, 1};
        Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k, kT)), 1.0 / std::sqrt(static_cast<double>(dh)));
        Tensor o = ops::matmul(ops::softmax(scores), v);
        o = ops::reshape(ops::transpose(ops::reshape(o, {B, heads, N, dh}), kSplit), {B, N, D});
        o = hooks_->after_attention(ctx_, site, o);
        return dense(site + ".out", o);
    }

    Tensor transformer_block(const std::string& prefix, const Tensor& x, std::size_t heads)
    {
        Tensor h = ops::add(x, attention(prefix + ".attn", layer_norm(prefix + ".norm1", x), heads));
        Tensor n = layer_norm(prefix + ".norm2", h);
        Tensor mlp = dense(prefix + ".mlp.fc2", ops::gelu(dense(prefix + ".mlp.fc1", n)));
        return hooks_->mlp_block(ctx_, prefix + ".mlp", h, n, mlp);
    }

    Tensor head(const Tensor& features) { return ops::linear(features, p("head.weight"), p("head.bias")); }

    ModelGraph& model() { return m_; }
    const ForwardContext& ctx() const { return ctx_; }

private:
    ModelGraph& m_;
    ForwardContext ctx_;
    ForwardHooks identity_;
    ForwardHooks* hooks_;
};

void check_image_batch(const Tensor& x, std::size_t channels, std::size_t size, std::string_view arch)
{
    if (x.rank() != 4 || x.dim(1) != channels || x.dim(2) != size || x.dim(3) != size) {
        throw ShapeError(std::string(arch) + ": expected batch [B," + std::to_string(channels) + "," +
                         std::to_string(size) + "," + std::to_string(size) + "], got " + shape_str(x.shape()));
    }
}

Tensor forward_cnn(Runner& r, const CnnConfig& cfg, const Tensor& x)
{
    check_image_batch(x, cfg.in_channels, cfg.image_size, "mini-cnn");
    Tensor h = ops::relu(r.batch_norm("stem.bn", r.conv("stem.conv", x)));
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        std::string p = "blocks." + std::to_string(i);
        Tensor y = ops::relu(r.batch_norm(p + ".bn1", r.conv(p + ".conv1", h)));
        y = r.batch_norm(p + ".bn2", r.conv(p + ".conv2", y));
        h = ops::relu(ops::add(y, h));
    }
    static constexpr std::size_t kSpatial[] = {2, 3};
    return r.head(ops::mean_axes(h, kSpatial));
}

Tensor forward_vit(Runner& r, const VitConfig& cfg, const Tensor& x)
{
    check_image_batch(x, cfg.in_channels, cfg.image_size, "mini-vit");
    std::size_t B = x.dim(0), C = cfg.in_channels, P = cfg.patch, G = cfg.image_size / P, D = cfg.dim;
    static constexpr std::size_t kPatchify[] = {0, 2, 4, 1, 3, 5};
    Tensor patches = ops::reshape(ops::transpose(ops::reshape(x, {B, C, G, P, G, P}), kPatchify), {B, G * G, C * P * P});
    Tensor tokens = r.dense("patch_embed", patches);
    Tensor cls = ops::add(Tensor::zeros({B, 1, D}), r.p("cls_token"));
    Tensor seq_parts[] = {cls, tokens};
    Tensor h = ops::add(ops::concat(seq_parts, 1), r.p("pos_embed"));
    for (std::size_t i = 0; i < cfg.blocks; ++i) h = r.transformer_block("blocks." + std::to_string(i), h, cfg.heads);
    h = r.layer_norm("norm", h);
    Tensor cls_out = ops::reshape(ops::slice(h, 1, 0, 1), {B, D});
    return r.head(cls_out);
}

Tensor sinusoidal(std::span<const int> t, std::size_t dim)
{
    std::size_t half = dim / 2;
    std::vector<double> v(t.size() * dim);
    for (std::size_t b = 0; b < t.size(); ++b)
        for (std::size_t i = 0; i < half; ++i) {
            double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            v[b * dim + i] = std::sin(t[b] * f);
            v[b * dim + half + i] = std::cos(t[b] * f);
        }
    return Tensor({t.size(), dim}, std::move(v));
}

Tensor res_block(Runner& r, const std::string& p, const Tensor& x, const Tensor& emb)
{
    auto& m = r.model();
    std::size_t B = x.dim(0);
    std::size_t co = m.layer(p).dims[1];
    Tensor h = r.conv(p + ".conv1", ops::gelu(r.group_norm(p + ".norm1", x)));
    h = ops::add(h, ops::reshape(r.dense(p + ".emb", emb), {B, co, 1, 1}));
    h = r.conv(p + ".conv2", ops::gelu(r.group_norm(p + ".norm2", h)));
    Tensor skip = m.find_layer(p + ".skip") ? r.conv(p + ".skip", x) : x;
    return ops::add(h, skip);
}

Tensor forward_denoiser(Runner& r, const DenoiserConfig& cfg, const Tensor& x, const ForwardOptions& opts)
{
    check_image_batch(x, cfg.in_channels, cfg.image_size, "mini-denoiser");
    std::size_t B = x.dim(0);
    if (opts.timesteps.size() != B || opts.conditions.size() != B) {
        throw ConfigError("mini-denoiser: forward needs one timestep and one condition id per batch item (batch " +
                          std::to_string(B) + ", got " + std::to_string(opts.timesteps.size()) + " timesteps, " +
                          std::to_string(opts.conditions.size()) + " conditions)");
    }
    std::vector<double> onehot(B * cfg.cond_vocab, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        int c = opts.conditions[b];
        if (c < 0 || static_cast<std::size_t>(c) >= cfg.cond_vocab) {
            throw DataError("mini-denoiser: condition id " + std::to_string(c) + " outside vocabulary of " +
                            std::to_string(cfg.cond_vocab));
        }
        onehot[b * cfg.cond_vocab + static_cast<std::size_t>(c)] = 1.0;
    }
    auto& m = r.model();
    Tensor temb = r.dense("time.fc2", ops::gelu(r.dense("time.fc1", sinusoidal(opts.timesteps, cfg.time_dim))));
    Tensor cond = ops::matmul(Tensor({B, cfg.cond_vocab}, std::move(onehot)), m.buffer("cond_embed.table").detach());
    Tensor emb = ops::gelu(ops::add(temb, r.dense("cond_proj", cond)));

    Tensor h = r.conv("conv_in", x);
    std::vector<Tensor> skips;
    for (std::size_t l = 0; l < cfg.levels; ++l) {
        std::string p = "down." + std::to_string(l);
        h = res_block(r, p + ".res", h, emb);
        skips.push_back(h);
        h = r.conv(p + ".down", h);
    }
    h = res_block(r, "mid.res", h, emb);
    {
        std::size_t C = h.dim(1), S = h.dim(2);
        static constexpr std::size_t kT[] = {0, 2, 1};
        Tensor tokens = ops::transpose(ops::reshape(h, {B, C, S * S}), kT);
        tokens = r.transformer_block("mid", tokens, cfg.heads);
        h = ops::reshape(ops::transpose(tokens, kT), {B, C, S, S});
    }
    for (std::size_t l = cfg.levels; l-- > 0;) {
        h = ops::upsample_nearest2x(h);
        Tensor parts[] = {h, skips[l]};
        h = res_block(r, "up." + std::to_string(l) + ".res", ops::concat(parts, 1), emb);
    }
    h = ops::gelu(r.group_norm("out_norm", h));
    return r.conv("conv_out", h);
}

}  // namespace

Tensor model_forward(ModelGraph& model, const Tensor& batch, const ForwardOptions& opts)
{
    Runner r(model, opts);
    return std::visit(
        [&](const auto& cfg) -> Tensor {
            using T = std::decay_t<decltype(cfg)>;
            if constexpr (std::is_same_v<T, CnnConfig>) return forward_cnn(r, cfg, batch);
            else if constexpr (std::is_same_v<T, VitConfig>) return forward_vit(r, cfg, batch);
            else return forward_denoiser(r, cfg, batch, opts);
        },
        model.config);
}

// ---------------------------------------------------------------------------
// Introspection

std::vector<HookSite> hook_sites(const ModelGraph& model)
{
    std::vector<HookSite> sites;
    auto dense_site = [&](const std::string& name, std::size_t in, std::size_t out, const LayerSpec& owner) {
        sites.push_back(HookSite{name, SiteKind::Dense, out, true, in, 1, 1, name + ".weight", owner.kind, owner.parent});
    };
    for (const auto& l : model.layers) {
        switch (l.kind) {
        case LayerKind::Dense:
        case LayerKind::PatchEmbed:
            dense_site(l.name, l.dims[0], l.dims[1], l);
            break;
        case LayerKind::Conv2d:
            sites.push_back(HookSite{l.name, SiteKind::Conv, l.dims[1], false, l.dims[0], l.dims[2], l.dims[3],
                                     l.name + ".weight", l.kind, l.parent});
            break;
        case LayerKind::BatchNorm:
        case LayerKind::GroupNorm:
            sites.push_back(HookSite{l.name, SiteKind::Norm, l.dims[0], false, 0, 1, 1, "", l.kind, l.parent});
            break;
        case LayerKind::LayerNorm:
            sites.push_back(HookSite{l.name, SiteKind::Norm, l.dims[0], true, 0, 1, 1, "", l.kind, l.parent});
            break;
        case LayerKind::MultiHeadAttention:
            for (const char* proj : {"q", "k", "v"}) dense_site(l.name + "." + proj, l.dims[0], l.dims[0], l);
            sites.push_back(HookSite{l.name, SiteKind::Attention, l.dims[0], true, 0, 1, 1, "", l.kind, l.parent});
            dense_site(l.name + ".out", l.dims[0], l.dims[0], l);
            break;
        case LayerKind::MlpBlock:
            dense_site(l.name + ".fc1", l.dims[0], l.dims[1], l);
            dense_site(l.name + ".fc2", l.dims[1], l.dims[0], l);
            break;
        case LayerKind::ResidualBlock:
        case LayerKind::Head:
        case LayerKind::Embedding:
            break;
        }
    }
    return sites;
}

ParamManifest param_manifest(const ModelGraph& model)
{
    ParamManifest m;
    for (const auto& p : model.params) {
        std::size_t n = p.tensor.numel();
        m.entries.push_back(ManifestEntry{p.name, p.role, p.layer, p.tensor.shape(), n, p.trainable});
        m.per_role[p.role] += n;
        m.total += n;
    }
    std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return m;
}

void zero_grads(std::span<ParamRecord> params)
{
    for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace peftbench
