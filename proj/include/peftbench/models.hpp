#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "peftbench/ops.hpp"
#include "peftbench/rng.hpp"
#include "peftbench/tensor.hpp"

namespace peftbench {

enum class Arch { MiniCnn, MiniVit, MiniDenoiser };

std::string_view arch_name(Arch a);
Arch parse_arch(std::string_view s);

enum class Role { Bias, NormScale, NormShift, Attention, Conv, Dense, Adapter, Head, Embed };

std::string_view role_name(Role r);
Role parse_role(std::string_view s);

enum class LayerKind {
    Dense,
    Conv2d,
    BatchNorm,
    LayerNorm,
    GroupNorm,
    MultiHeadAttention,
    MlpBlock,
    PatchEmbed,
    ResidualBlock,
    Head,
    Embedding,
};

std::string_view layer_kind_name(LayerKind k);

// dims by kind:
//   dense, patch-embed, head: {in, out}
//   conv2d: {in, out, kernel, stride, padding}
//   batch-norm, layer-norm: {channels}; group-norm: {channels, groups}
//   multi-head-attention: {dim, heads}; mlp-block: {dim, hidden}
//   residual-block: {in_channels, out_channels}; embedding: {rows, width}
struct LayerSpec {
    LayerKind kind;
    std::string name;
    std::vector<std::size_t> dims;
    std::string parent;  // enclosing container layer, empty at top level
};

struct ParamRecord {
    std::string name;
    Role role;
    std::string layer;  // owning LayerSpec name
    Tensor tensor;
    bool trainable = true;
};

// Non-trainable state: batch-norm running statistics, the frozen condition table.
struct BufferRecord {
    std::string name;
    Tensor tensor;
};

struct CnnConfig {
    std::size_t in_channels = 1;
    std::size_t width = 8;
    std::size_t blocks = 2;
    std::size_t classes = 3;
    std::size_t image_size = 16;
    std::size_t stem_stride = 2;
};

struct VitConfig {
    std::size_t in_channels = 1;
    std::size_t dim = 32;
    std::size_t heads = 4;
    std::size_t blocks = 2;
    std::size_t patch = 4;
    std::size_t classes = 3;
    std::size_t image_size = 16;
    std::size_t mlp_hidden = 64;
};

struct DenoiserConfig {
    std::size_t in_channels = 1;
    std::size_t base_channels = 8;
    std::size_t levels = 2;
    std::size_t cond_vocab = 4;
    std::size_t cond_dim = 8;
    std::size_t image_size = 16;
    std::size_t time_dim = 16;
    std::size_t groups = 2;
    std::size_t heads = 2;
};

using ArchConfig = std::variant<CnnConfig, VitConfig, DenoiserConfig>;

class ModelGraph {
public:
    Arch arch = Arch::MiniCnn;
    ArchConfig config;
    std::vector<LayerSpec> layers;
    std::vector<ParamRecord> params;
    std::vector<BufferRecord> buffers;

    ParamRecord& param(const std::string& name);
    const ParamRecord& param(const std::string& name) const;
    bool has_param(const std::string& name) const;
    Tensor& buffer(const std::string& name);
    const LayerSpec& layer(const std::string& name) const;
    const LayerSpec* find_layer(const std::string& name) const;

    void add_layer(LayerSpec spec);
    void add_param(ParamRecord rec);
    void add_buffer(BufferRecord rec);

    // Deep copy; tensors of the copy are independent.
    ModelGraph clone() const;

    std::size_t num_classes() const;  // 0 for the denoiser
    std::size_t total_params() const;

private:
    void reindex();
    std::unordered_map<std::string, std::size_t> param_index_;
    std::unordered_map<std::string, std::size_t> buffer_index_;
    std::unordered_map<std::string, std::size_t> layer_index_;
};

ModelGraph build_mini_cnn(const CnnConfig& cfg, RngStream rng);
ModelGraph build_mini_vit(const VitConfig& cfg, RngStream rng);
ModelGraph build_mini_denoiser(const DenoiserConfig& cfg, RngStream rng);
ModelGraph build_model(const ArchConfig& cfg, RngStream rng);

std::size_t vit_sequence_length(const VitConfig& cfg);
std::size_t denoiser_bottleneck_size(const DenoiserConfig& cfg);

// Replaces the classification head by a zero-initialized one with `classes` outputs.
void reset_head(ModelGraph& model, std::size_t classes);

// Per-call view handed to hooks: whether norms run in training mode and
// whether parameters participate in the gradient graph.
struct ForwardContext {
    bool training = false;
    bool grad = true;

    Tensor use(const Tensor& p) const { return grad ? p : p.detach(); }
};

// Interception points used by the PEFT adapters. Defaults are identities.
class ForwardHooks {
public:
    virtual ~ForwardHooks() = default;
    // Effective weight of a dense/conv site.
    virtual Tensor weight(const ForwardContext&, const std::string& site, const Tensor& w) { (void)site; return w; }
    virtual Tensor after_dense(const ForwardContext&, const std::string& site, const Tensor& input, Tensor out)
    {
        (void)site, (void)input;
        return out;
    }
    virtual Tensor after_conv(const ForwardContext&, const std::string& site, const Tensor& input, Tensor out,
                              ops::ConvGeom geom)
    {
        (void)site, (void)input, (void)geom;
        return out;
    }
    virtual Tensor after_norm(const ForwardContext&, const std::string& site, Tensor out, std::size_t channel_axis)
    {
        (void)site, (void)channel_axis;
        return out;
    }
    // Combined head outputs before the output projection; channels on the last axis.
    virtual Tensor after_attention(const ForwardContext&, const std::string& site, Tensor out)
    {
        (void)site;
        return out;
    }
    // Combines the MLP sub-block: `residual` enters the block, `normed` is its
    // layer-normed form and `mlp_out` the MLP output on `normed`.
    virtual Tensor mlp_block(const ForwardContext&, const std::string& site, const Tensor& residual,
                             const Tensor& normed, Tensor mlp_out);
};

struct ForwardOptions {
    bool training = false;
    bool grad = true;
    std::vector<int> timesteps;   // denoiser only
    std::vector<int> conditions;  // denoiser only
    ForwardHooks* hooks = nullptr;
};

// Logits [B, classes] for classifiers, predicted noise [B, C, S, S] for the denoiser.
Tensor model_forward(ModelGraph& model, const Tensor& batch, const ForwardOptions& opts);

enum class SiteKind { Dense, Conv, Norm, Attention };

// A hookable operation and what an adapter needs to size itself for it.
struct HookSite {
    std::string name;
    SiteKind kind;
    std::size_t width;       // output channels
    bool last_axis = true;   // channels on the last axis, else axis 1 (NCHW)
    std::size_t in_features = 0;  // dense/conv: input width
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::string weight;       // dense/conv weight param name
    LayerKind owner_kind;     // kind of the owning layer
    std::string parent;       // enclosing container of the owning layer
};

std::vector<HookSite> hook_sites(const ModelGraph& model);

struct ManifestEntry {
    std::string name;
    Role role;
    std::string layer;
    Shape shape;
    std::size_t count;
    bool trainable;
};

struct ParamManifest {
    std::vector<ManifestEntry> entries;  // sorted by name
    std::map<Role, std::size_t> per_role;
    std::size_t total = 0;
};

ParamManifest param_manifest(const ModelGraph& model);

void zero_grads(std::span<ParamRecord> params);

void save_checkpoint(const ModelGraph& model, const std::string& path);
ModelGraph load_checkpoint(const std::string& path);
std::string checkpoint_json(const ModelGraph& model);
ModelGraph checkpoint_from_json(const std::string& text);

}  // namespace peftbench
