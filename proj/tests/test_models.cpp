#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "peftbench/models.hpp"
#include "peftbench/ops.hpp"
#include "peftbench/serialize.hpp"
#include "support/support.hpp"

using namespace peftbench;

namespace {

// Hand-derived parameter counts, written independently of the builders.
std::size_t cnn_closed_form(const CnnConfig& c)
{
    const std::size_t w = c.width;
    std::size_t stem = c.in_channels * w * 9 + 2 * w;           // bias-free conv + BN
    std::size_t block = 2 * (w * w * 9) + 2 * (2 * w);           // two bias-free convs + two BNs
    std::size_t head = w * c.classes + c.classes;
    return stem + c.blocks * block + head;
}

std::size_t vit_closed_form(const VitConfig& c)
{
    const std::size_t d = c.dim, h = c.mlp_hidden;
    const std::size_t n = (c.image_size / c.patch) * (c.image_size / c.patch);
    std::size_t embed = c.in_channels * c.patch * c.patch * d + d;  // patch projection
    std::size_t tokens = d + (n + 1) * d;                           // class token + positions
    std::size_t block = 2 * (2 * d) + 4 * (d * d + d) + (d * h + h) + (h * d + d);
    std::size_t head = d * c.classes + c.classes;
    return embed + tokens + c.blocks * block + 2 * d + head;
}

// Dense biases and norm shifts outside the head.
std::size_t vit_bias_closed_form(const VitConfig& c)
{
    const std::size_t d = c.dim, h = c.mlp_hidden;
    return d + c.blocks * (4 * d + h + d + 2 * d) + d;
}

std::size_t count_role(const ModelGraph& m, std::initializer_list<Role> roles)
{
    std::size_t n = 0;
    for (const auto& p : m.params)
        if (std::find(roles.begin(), roles.end(), p.role) != roles.end()) n += p.tensor.numel();
    return n;
}

}  // namespace

TEST(MiniCnn, DefaultCountMatchesClosedForm)
{
    CnnConfig c;
    ModelGraph m = build_mini_cnn(c, RngStream(0));
    EXPECT_EQ(m.total_params(), cnn_closed_form(c));
    EXPECT_EQ(m.total_params(), 2483u);
}

TEST(MiniCnn, HasBatchNormPairsPerBlock)
{
    CnnConfig c;
    c.width = 8;
    c.blocks = 2;
    ModelGraph m = build_mini_cnn(c, RngStream(0));
    std::size_t pairs = 0;
    for (const auto& l : m.layers)
        if (l.kind == LayerKind::BatchNorm) {
            bool scale = false, shift = false;
            for (const auto& p : m.params)
                if (p.layer == l.name) (p.role == Role::NormScale ? scale : shift) = true;
            pairs += scale && shift;
        }
    EXPECT_GE(pairs, 4u);
}

TEST(MiniCnn, HeadDimensionality)
{
    CnnConfig a, b;
    a.classes = 2;
    b.classes = 3;
    auto na = build_mini_cnn(a, RngStream(0)).total_params();
    auto nb = build_mini_cnn(b, RngStream(0)).total_params();
    EXPECT_EQ(nb - na, a.width + 1);
}

TEST(MiniCnn, DivisibilityChecked)
{
    CnnConfig c;
    c.image_size = 15;
    EXPECT_THROW(build_mini_cnn(c, RngStream(0)), ConfigError);
}

TEST(MiniCnn, PerturbingConvWeightChangesLogits)
{
    ModelGraph m = build_mini_cnn(CnnConfig{}, RngStream(1));
    RngStream rng(2);
    for (auto& v : m.param("head.weight").tensor.mutable_values()) v = rng.normal();
    auto b = peftbench::testing::random_batch(m, 2, RngStream(3));
    ForwardOptions o;
    Tensor before = model_forward(m, b.x, o).clone();
    for (const auto& p : m.params) {
        if (p.role != Role::Conv) continue;
        ModelGraph probe = m.clone();
        probe.param(p.name).tensor.mutable_values()[0] += 0.5;
        Tensor after = model_forward(probe, b.x, o);
        double diff = 0;
        for (std::size_t i = 0; i < after.numel(); ++i) diff = std::max(diff, std::abs(after.at(i) - before.at(i)));
        EXPECT_GT(diff, 1e-9) << p.name;
    }
}

TEST(MiniVit, AttentionNamesPerBlock)
{
    ModelGraph m = build_mini_vit(VitConfig{}, RngStream(0));
    std::set<std::string> names;
    for (const auto& p : m.params)
        if (p.role == Role::Attention) names.insert(p.name);
    for (int b = 0; b < 2; ++b)
        for (const char* proj : {"q", "k", "v", "out"}) {
            std::string base = "blocks." + std::to_string(b) + ".attn." + proj + ".weight";
            EXPECT_TRUE(names.count(base)) << base;
        }
}

TEST(MiniVit, CountsMatchClosedForms)
{
    VitConfig c;
    ModelGraph m = build_mini_vit(c, RngStream(0));
    EXPECT_EQ(m.total_params(), vit_closed_form(c));
    EXPECT_EQ(vit_closed_form(c), 18371u);
    EXPECT_EQ(count_role(m, {Role::Bias, Role::NormShift}), vit_bias_closed_form(c));
}

TEST(MiniVit, SequenceLength)
{
    VitConfig c;
    c.image_size = 16;
    c.patch = 4;
    EXPECT_EQ(vit_sequence_length(c), 17u);
}

TEST(MiniVit, DivisibilityChecked)
{
    VitConfig c;
    c.heads = 3;
    EXPECT_THROW(build_mini_vit(c, RngStream(0)), ConfigError);
    VitConfig d;
    d.patch = 5;
    EXPECT_THROW(build_mini_vit(d, RngStream(0)), ConfigError);
}

TEST(MiniVit, ZeroHeadGivesUniformSoftmax)
{
    ModelGraph m = build_mini_vit(VitConfig{}, RngStream(0));
    Tensor probs = ops::softmax(model_forward(m, Tensor::zeros({1, 1, 16, 16}), ForwardOptions{}));
    for (double p : probs.values()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-12);
}

TEST(MiniVit, IdenticalImagesGiveIdenticalRows)
{
    ModelGraph m = build_mini_vit(VitConfig{}, RngStream(0));
    reset_head(m, 3);
    RngStream rng(5);
    for (auto& v : m.param("head.weight").tensor.mutable_values()) v = rng.normal();
    auto img = rng.normals(256);
    std::vector<double> two(img);
    two.insert(two.end(), img.begin(), img.end());
    Tensor out = model_forward(m, Tensor({2, 1, 16, 16}, two), ForwardOptions{});
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(out.at(j), out.at(3 + j));
}

TEST(MiniDenoiser, BottleneckAndOutputShape)
{
    DenoiserConfig c;
    c.levels = 2;
    c.image_size = 16;
    EXPECT_EQ(denoiser_bottleneck_size(c), 4u);
    ModelGraph m = build_mini_denoiser(c, RngStream(0));
    ForwardOptions o;
    o.timesteps = {3, 10};
    o.conditions = {0, 2};
    Tensor out = model_forward(m, Tensor::zeros({2, 1, 16, 16}), o);
    EXPECT_EQ(out.shape(), (Shape{2, 1, 16, 16}));
}

TEST(MiniDenoiser, ExactlyOneAttentionGroup)
{
    ModelGraph m = build_mini_denoiser(DenoiserConfig{}, RngStream(0));
    std::size_t n = 0;
    for (const auto& l : m.layers) n += l.kind == LayerKind::MultiHeadAttention;
    EXPECT_EQ(n, 1u);
}

TEST(MiniDenoiser, RequiresAuxInputs)
{
    ModelGraph m = build_mini_denoiser(DenoiserConfig{}, RngStream(0));
    EXPECT_THROW(model_forward(m, Tensor::zeros({1, 1, 16, 16}), ForwardOptions{}), ConfigError);
    ForwardOptions o;
    o.timesteps = {0};
    o.conditions = {9};
    EXPECT_THROW(model_forward(m, Tensor::zeros({1, 1, 16, 16}), o), DataError);
    DenoiserConfig bad;
    bad.image_size = 10;
    EXPECT_THROW(build_mini_denoiser(bad, RngStream(0)), ConfigError);
}

TEST(Forward, WrongInputShapeRejected)
{
    ModelGraph m = build_mini_vit(VitConfig{}, RngStream(0));
    EXPECT_THROW(model_forward(m, Tensor::zeros({1, 1, 8, 8}), ForwardOptions{}), ShapeError);
}

TEST(Manifest, DenseLayerCount)
{
    ModelGraph m;
    m.add_layer({LayerKind::Dense, "fc", {2, 3}, ""});
    m.add_param({"fc.weight", Role::Dense, "fc", Tensor::zeros({3, 2}), true});
    m.add_param({"fc.bias", Role::Bias, "fc", Tensor::zeros({3}), true});
    ParamManifest man = param_manifest(m);
    EXPECT_EQ(man.total, 9u);
    EXPECT_EQ(man.per_role[Role::Dense], 6u);
    EXPECT_EQ(man.per_role[Role::Bias], 3u);
}

TEST(Manifest, CompleteSortedAndUnique)
{
    for (const ArchConfig& cfg : {ArchConfig{CnnConfig{}}, ArchConfig{VitConfig{}}, ArchConfig{DenoiserConfig{}}}) {
        ModelGraph m = build_model(cfg, RngStream(0));
        ParamManifest man = param_manifest(m);
        std::size_t sum = 0;
        for (const auto& [role, n] : man.per_role) sum += n;
        EXPECT_EQ(sum, man.total);
        EXPECT_EQ(man.total, m.total_params());
        std::set<std::string> names;
        for (std::size_t i = 0; i < man.entries.size(); ++i) {
            names.insert(man.entries[i].name);
            if (i) EXPECT_LT(man.entries[i - 1].name, man.entries[i].name);
        }
        EXPECT_EQ(names.size(), m.params.size());
    }
}

TEST(Manifest, RolesConsistentWithLayerKinds)
{
    for (const ArchConfig& cfg : {ArchConfig{CnnConfig{}}, ArchConfig{VitConfig{}}, ArchConfig{DenoiserConfig{}}}) {
        ModelGraph m = build_model(cfg, RngStream(0));
        for (const auto& p : m.params) {
            const LayerSpec& l = m.layer(p.layer);
            bool norm = l.kind == LayerKind::BatchNorm || l.kind == LayerKind::LayerNorm || l.kind == LayerKind::GroupNorm;
            if (p.role == Role::NormScale || p.role == Role::NormShift) EXPECT_TRUE(norm) << p.name;
            if (norm) EXPECT_TRUE(p.role == Role::NormScale || p.role == Role::NormShift) << p.name;
            if (p.role == Role::Attention) EXPECT_EQ(l.kind, LayerKind::MultiHeadAttention) << p.name;
            if (p.role == Role::Conv) EXPECT_EQ(l.kind, LayerKind::Conv2d) << p.name;
            if (p.role == Role::Bias) EXPECT_EQ(p.tensor.rank(), 1u) << p.name;
        }
    }
}

TEST(Manifest, ParamsAndLayersAreUnique)
{
    ModelGraph m = build_mini_vit(VitConfig{}, RngStream(0));
    EXPECT_THROW(m.add_param({"head.bias", Role::Head, "head", Tensor::zeros({3}), true}), ConfigError);
    EXPECT_THROW(m.add_layer({LayerKind::Head, "head", {32, 3}, ""}), ConfigError);
    EXPECT_THROW(m.add_param({"x", Role::Dense, "nowhere", Tensor::zeros({1}), true}), ConfigError);
}

TEST(Model, CloneIsIndependent)
{
    ModelGraph a = build_mini_cnn(CnnConfig{}, RngStream(0));
    ModelGraph b = a.clone();
    b.param("stem.conv.weight").tensor.mutable_values()[0] += 1.0;
    EXPECT_NE(a.param("stem.conv.weight").tensor.at(0), b.param("stem.conv.weight").tensor.at(0));
}

TEST(Model, ResetHeadZeroInitsNewClasses)
{
    ModelGraph m = build_mini_vit(VitConfig{}, RngStream(0));
    reset_head(m, 5);
    EXPECT_EQ(m.num_classes(), 5u);
    EXPECT_EQ(m.param("head.weight").tensor.shape(), (Shape{5, 32}));
    for (double v : m.param("head.weight").tensor.values()) EXPECT_EQ(v, 0.0);
    ModelGraph d = build_mini_denoiser(DenoiserConfig{}, RngStream(0));
    EXPECT_THROW(reset_head(d, 3), ConfigError);
}

TEST(Model, HookSitesCoverAttentionProjections)
{
    ModelGraph m = build_mini_vit(VitConfig{}, RngStream(0));
    std::set<std::string> sites;
    for (const auto& s : hook_sites(m)) sites.insert(s.name);
    for (const char* p : {"q", "k", "v", "out"}) EXPECT_TRUE(sites.count(std::string("blocks.0.attn.") + p)) << p;
}

TEST(Checkpoint, RoundTripPreservesForward)
{
    for (const ArchConfig& cfg : {ArchConfig{CnnConfig{}}, ArchConfig{VitConfig{}}, ArchConfig{DenoiserConfig{}}}) {
        ModelGraph m = build_model(cfg, RngStream(7));
        ModelGraph r = checkpoint_from_json(checkpoint_json(m));
        ASSERT_EQ(r.params.size(), m.params.size());
        for (std::size_t i = 0; i < m.params.size(); ++i) {
            EXPECT_EQ(r.params[i].name, m.params[i].name);
            EXPECT_TRUE(std::equal(r.params[i].tensor.values().begin(), r.params[i].tensor.values().end(),
                                   m.params[i].tensor.values().begin()));
        }
        EXPECT_EQ(checkpoint_json(r), checkpoint_json(m));
    }
}

TEST(Checkpoint, FileRoundTripAndErrors)
{
    auto dir = std::filesystem::temp_directory_path() / "peftbench_ckpt_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "m.json").string();
    ModelGraph m = build_mini_cnn(CnnConfig{}, RngStream(1));
    save_checkpoint(m, path);
    ModelGraph r = load_checkpoint(path);
    EXPECT_EQ(checkpoint_json(r), checkpoint_json(m));
    EXPECT_THROW(load_checkpoint((dir / "missing.json").string()), IoError);
    EXPECT_THROW(checkpoint_from_json("{\"format\": \"other\"}"), ConfigError);
    EXPECT_THROW(checkpoint_from_json("not json"), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST(ArchConfig, JsonRoundTripAndUnknownArch)
{
    VitConfig v;
    v.dim = 16;
    ArchConfig back = arch_config_from_json(arch_config_to_json(v));
    EXPECT_EQ(std::get<VitConfig>(back).dim, 16u);
    EXPECT_THROW(arch_config_from_json(Json{{"arch", "resnet50"}}), ConfigError);
    EXPECT_THROW(arch_config_from_json(Json{{"arch", "mini-vit"}, {"dim", -3}}), ConfigError);
}
