#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "peftbench/bench.hpp"
#include "peftbench/peft.hpp"
#include "peftbench/trainer.hpp"
#include "support/support.hpp"

using namespace peftbench;
using namespace peftbench::testing;

namespace {

// Adds noise to every base parameter so that zero-initialized pieces such as
// the classification head do not make output comparisons vacuous.
ModelGraph perturbed(ModelGraph m, std::uint64_t seed)
{
    RngStream rng(seed, 0x9e);
    for (auto& p : m.params) {
        auto v = p.tensor.mutable_values();
        for (auto& x : v) x += rng.normal(0.0, 0.2);
    }
    return m;
}

ModelGraph tiny_model(Method m, std::uint64_t seed = 1)
{
    return perturbed(build_model(tiny_arch_for(m), RngStream(seed, 0)), seed);
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    EXPECT_EQ(a.shape(), b.shape());
    double d = 0.0;
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) d = std::max(d, std::abs(av[i] - bv[i]));
    return d;
}

Tensor base_forward(ModelGraph& m, const ModelBatch& b)
{
    return model_forward(m, b.x, batch_options(b, false, false));
}

Tensor adapted_eval(AdaptedModel& a, const ModelBatch& b)
{
    return adapted_forward(a, b.x, batch_options(b, false, false));
}

PeftSpec spec_of(Method m)
{
    PeftSpec s;
    s.method = m;
    s.rank = 2;
    s.bottleneck = 3;
    return s;
}

std::size_t head_count(const ModelGraph& m)
{
    std::size_t n = 0;
    for (const auto& p : m.params)
        if (p.role == Role::Head) n += p.tensor.numel();
    return n;
}

std::size_t injected_count(const AdaptedModel& a)
{
    std::size_t n = 0;
    for (const auto& p : a.injected) n += p.tensor.numel();
    return n;
}

// Random values for injected tensors only, leaving the base and head alone.
void fill_injected(AdaptedModel& a, RngStream rng)
{
    for (auto& p : a.injected) {
        auto v = p.tensor.mutable_values();
        for (auto& x : v) x = rng.normal(0.0, 0.5);
    }
}

std::set<std::string> names_with_roles(const ModelGraph& m, std::set<Role> roles)
{
    std::set<std::string> out;
    for (const auto& p : m.params)
        if (roles.count(p.role)) out.insert(p.name);
    return out;
}

}  // namespace

TEST(PeftSpec, NamesRoundTrip)
{
    for (Method m : all_methods()) EXPECT_EQ(parse_method(method_name(m)), m);
    EXPECT_EQ(all_methods().size(), 14u);
    EXPECT_THROW(parse_method("prompt-tuning"), ConfigError);
}

TEST(PeftSpec, JsonRoundTrip)
{
    PeftSpec s;
    s.method = Method::Lora;
    s.rank = 8;
    s.alpha = 16;
    Json j = peft_spec_to_json(s);
    EXPECT_EQ(j["method"], "lora");
    PeftSpec back = peft_spec_from_json(j);
    EXPECT_EQ(back.rank, 8u);
    EXPECT_DOUBLE_EQ(back.lora_scale(), 2.0);
}

TEST(PeftSpec, AlphaDefaultsToRank)
{
    PeftSpec s;
    s.method = Method::Lora;
    s.rank = 6;
    EXPECT_DOUBLE_EQ(s.lora_scale(), 1.0);
    EXPECT_EQ(peft_spec_to_json(s)["alpha"].get<double>(), 6.0);
}

TEST(PeftSpec, InvalidHyperparametersRejected)
{
    PeftSpec s;
    s.method = Method::Lora;
    s.rank = 0;
    EXPECT_THROW(validate_peft_spec(s), ConfigError);
    s = {};
    s.method = Method::AdaptFormer;
    s.bottleneck = 0;
    EXPECT_THROW(validate_peft_spec(s), ConfigError);
    s = {};
    s.method = Method::Tsa;
    s.kernel = 2;
    EXPECT_THROW(validate_peft_spec(s), ConfigError);
    s = {};
    s.method = Method::SvDiff;
    s.filter = "";
    EXPECT_THROW(validate_peft_spec(s), ConfigError);
}

// CNN and ViT columns of the method summary table, transcribed by hand.
TEST(Compatibility, MatchesMethodTable)
{
    struct Row {
        Method m;
        bool cnn, vit;
    };
    const Row table[] = {
        {Method::Tsa, true, false},       {Method::BatchNorm, true, false}, {Method::Bias, true, false},
        {Method::Ssf, true, true},        {Method::Attention, false, true}, {Method::LayerNorm, false, true},
        {Method::BitFit, false, true},    {Method::Lora, false, true},      {Method::AdaptFormer, false, true},
    };
    for (const auto& r : table) {
        SCOPED_TRACE(std::string(method_name(r.m)));
        EXPECT_EQ(method_supports(r.m, Arch::MiniCnn), r.cnn);
        EXPECT_EQ(method_supports(r.m, Arch::MiniVit), r.vit);
    }
    EXPECT_TRUE(method_supports(Method::SvDiff, Arch::MiniDenoiser));
}

TEST(Compatibility, CnnLoraRejected)
{
    ModelGraph cnn = build_mini_cnn(tiny_cnn(), RngStream(0, 0));
    PeftSpec s;
    s.method = Method::Lora;
    EXPECT_THROW(make_strategy(cnn, s), IncompatibleError);
}

TEST(Compatibility, DispatchTotality)
{
    const ArchConfig archs[] = {tiny_cnn(), tiny_vit(), tiny_denoiser()};
    for (Method m : all_methods()) {
        SCOPED_TRACE(std::string(method_name(m)));
        std::size_t built = 0;
        for (const auto& cfg : archs) {
            ModelGraph model = build_model(cfg, RngStream(0, 0));
            if (method_supports(m, model.arch)) {
                EXPECT_NO_THROW(make_strategy(model, spec_of(m)));
                ++built;
            } else {
                EXPECT_THROW(make_strategy(model, spec_of(m)), IncompatibleError);
            }
        }
        EXPECT_GE(built, 1u);
    }
}

TEST(Selective, FullFtTrainsEverything)
{
    ModelGraph vit = build_mini_vit(VitConfig{}, RngStream(0, 0));
    AdaptedModel a = make_strategy(vit, spec_of(Method::FullFt));
    EXPECT_EQ(a.mask.trainable_names.size(), vit.params.size());
    auto c = trainable_count(a);
    EXPECT_EQ(c.trainable, c.total);
    EXPECT_DOUBLE_EQ(c.ratio, 1.0);
}

TEST(Selective, LinearProbeTrainsHeadOnly)
{
    ModelGraph vit = build_mini_vit(VitConfig{}, RngStream(0, 0));
    AdaptedModel a = make_strategy(vit, spec_of(Method::LinearProbe));
    EXPECT_EQ(a.mask.trainable_names, (std::set<std::string>{"head.bias", "head.weight"}));
    EXPECT_EQ(trainable_count(a).trainable, 32u * 3 + 3);
}

TEST(Selective, BiasSelectsBiasRolesAndHead)
{
    ModelGraph vit = build_mini_vit(tiny_vit(), RngStream(0, 0));
    AdaptedModel a = make_strategy(vit, spec_of(Method::BitFit));
    auto expected = names_with_roles(vit, {Role::Bias, Role::NormShift, Role::Head});
    EXPECT_EQ(a.mask.trainable_names, expected);
    EXPECT_TRUE(a.mask.head_trainable);
    EXPECT_TRUE(a.injected.empty());
}

TEST(Selective, BiasNormAttentionIsUnionOnDenoiser)
{
    ModelGraph den = build_mini_denoiser(tiny_denoiser(), RngStream(0, 0));
    std::set<std::string> uni;
    for (Method m : {Method::Bias, Method::LayerNorm, Method::Attention}) {
        auto part = make_strategy(den, spec_of(m)).mask.trainable_names;
        uni.insert(part.begin(), part.end());
    }
    EXPECT_EQ(make_strategy(den, spec_of(Method::BiasNormAttention)).mask.trainable_names, uni);
}

TEST(Selective, EmptySelectionRejected)
{
    ModelGraph cnn = build_mini_cnn(tiny_cnn(), RngStream(0, 0));
    ParamSelector attention = [](const ParamRecord&, const LayerSpec& l) {
        return l.kind == LayerKind::MultiHeadAttention;
    };
    EXPECT_THROW(select_trainable(cnn, attention, "attention"), ConfigError);
}

TEST(Selective, MaskIsSubsetOfManifest)
{
    for (Method m : all_methods()) {
        ModelGraph model = build_model(tiny_arch_for(m), RngStream(0, 0));
        AdaptedModel a = make_strategy(model, spec_of(m));
        for (const auto& n : a.mask.trainable_names) EXPECT_TRUE(model.has_param(n)) << n;
        if (!is_additive(m)) EXPECT_TRUE(a.injected.empty()) << method_name(m);
    }
}

TEST(Additive, BaseFrozenExceptHead)
{
    for (Method m : all_methods()) {
        if (!is_additive(m)) continue;
        SCOPED_TRACE(std::string(method_name(m)));
        AdaptedModel a = make_strategy(build_model(tiny_arch_for(m), RngStream(0, 0)), spec_of(m));
        for (const auto& p : a.base.params) EXPECT_EQ(a.mask.contains(p.name), p.role == Role::Head) << p.name;
        for (const auto& p : a.injected) EXPECT_TRUE(p.trainable && p.tensor.requires_grad()) << p.name;
    }
}

TEST(Additive, CountIsInjectedPlusHead)
{
    for (Method m : all_methods()) {
        if (!is_additive(m)) continue;
        AdaptedModel a = make_strategy(build_model(tiny_arch_for(m), RngStream(0, 0)), spec_of(m));
        EXPECT_EQ(trainable_count(a).trainable, injected_count(a) + head_count(a.base)) << method_name(m);
        EXPECT_EQ(trainable_count(a).total, a.base.total_params());
    }
}

TEST(Additive, IdentityAtInit)
{
    for (Method m : {Method::Lora, Method::Ssf, Method::AdaptFormer, Method::Tsa, Method::SvDiff}) {
        SCOPED_TRACE(std::string(method_name(m)));
        ModelGraph model = tiny_model(m);
        ModelBatch b = random_batch(model, 3, RngStream(5, 1));
        Tensor ref = base_forward(model, b);
        AdaptedModel a = make_strategy(model, spec_of(m));
        Tensor out = adapted_eval(a, b);
        EXPECT_GT(max_abs_diff(ref, Tensor::zeros(ref.shape())), 1e-3);
        EXPECT_LE(max_abs_diff(out, ref), 1e-5);
    }
}

TEST(Additive, IdentityAtInitOnDefaultArchs)
{
    ModelGraph vit = perturbed(build_mini_vit(VitConfig{}, RngStream(2, 0)), 2);
    ModelGraph cnn = perturbed(build_mini_cnn(CnnConfig{}, RngStream(2, 0)), 2);
    ModelBatch bv = random_batch(vit, 2, RngStream(3, 0));
    ModelBatch bc = random_batch(cnn, 2, RngStream(3, 0));
    for (Method m : {Method::Lora, Method::Ssf, Method::AdaptFormer}) {
        AdaptedModel a = make_strategy(vit, spec_of(m));
        EXPECT_LE(max_abs_diff(adapted_eval(a, bv), base_forward(vit, bv)), 1e-5) << method_name(m);
    }
    for (Method m : {Method::Tsa, Method::Ssf}) {
        AdaptedModel a = make_strategy(cnn, spec_of(m));
        EXPECT_LE(max_abs_diff(adapted_eval(a, bc), base_forward(cnn, bc)), 1e-5) << method_name(m);
    }
}

TEST(Lora, DefaultVitCount)
{
    ModelGraph vit = build_mini_vit(VitConfig{}, RngStream(0, 0));
    AdaptedModel a = inject_lora(vit, 4, 4);
    EXPECT_EQ(injected_count(a), 2u * 2 * (32 * 4 + 4 * 32));
    for (const auto& p : a.injected) {
        if (p.name.ends_with(".lora_B")) {
            for (double v : p.tensor.values()) EXPECT_EQ(v, 0.0);
        }
    }
}

TEST(Lora, TargetsQueryAndValueOnly)
{
    AdaptedModel a = inject_lora(build_mini_vit(tiny_vit(), RngStream(0, 0)), 2, 2);
    for (const auto& p : a.injected) {
        auto site = p.name.substr(0, p.name.rfind('.'));
        auto tail = site.substr(site.rfind('.') + 1);
        EXPECT_TRUE(tail == "q" || tail == "v") << p.name;
    }
    EXPECT_EQ(a.injected.size(), 4u);
}

TEST(Lora, RankOutOfRange)
{
    ModelGraph vit = build_mini_vit(tiny_vit(), RngStream(0, 0));
    EXPECT_THROW(inject_lora(vit, 9, 9), ConfigError);
    EXPECT_NO_THROW(inject_lora(vit, 8, 8));
    EXPECT_THROW(inject_lora(vit, 0, 1), ConfigError);
}

TEST(Lora, MergeMatchesUnmerged)
{
    ModelGraph vit = tiny_model(Method::Lora, 4);
    AdaptedModel a = inject_lora(vit, 3, 5.0, 7);
    randomize_trainable(a, RngStream(8, 0), 0.5);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        ModelBatch b = random_batch(vit, 4, RngStream(seed, 9));
        ModelGraph merged = merge_lora(a);
        EXPECT_LE(max_abs_diff(base_forward(merged, b), adapted_eval(a, b)), 1e-10);
    }
}

TEST(Lora, MergeAtInitIsBitwiseBase)
{
    ModelGraph vit = tiny_model(Method::Lora);
    AdaptedModel a = inject_lora(vit, 2, 2);
    ModelGraph merged = merge_lora(a);
    for (const auto& p : vit.params) {
        auto x = p.tensor.values(), y = merged.param(p.name).tensor.values();
        EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << p.name;
    }
}

TEST(Lora, MergeTwiceAndWrongMethodRejected)
{
    ModelGraph vit = tiny_model(Method::Lora);
    AdaptedModel a = inject_lora(vit, 2, 2);
    merge_lora_inplace(a);
    EXPECT_TRUE(a.injected.empty());
    EXPECT_THROW(merge_lora_inplace(a), ConfigError);
    EXPECT_THROW(merge_lora(a), ConfigError);
    AdaptedModel s = inject_ssf(vit);
    EXPECT_THROW(merge_lora(s), ConfigError);
}

TEST(Lora, FitLowersLoss)
{
    ModelGraph vit = tiny_model(Method::Lora, 11);
    AdaptedModel a = inject_lora(vit, 2, 2, 3);
    ModelBatch b = random_batch(vit, 12, RngStream(12, 0));
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    Optimizer opt(cfg);
    double init = batch_loss(a, b, false).item();
    for (int step = 0; step < 50; ++step) {
        clear_grads(a);
        backward(batch_loss(a, b, true));
        optimizer_step(a, opt);
    }
    EXPECT_LT(batch_loss(a, b, false).item(), init);
}

TEST(Ssf, CountIsTwiceHookedWidths)
{
    ModelGraph vit = build_mini_vit(tiny_vit(), RngStream(0, 0));
    std::size_t expect = 0;
    for (const auto& s : hook_sites(vit)) expect += 2 * s.width;
    EXPECT_EQ(injected_count(inject_ssf(vit)), expect);
}

TEST(Ssf, ScaleOnFinalFeatureScalesLogits)
{
    ModelGraph vit = tiny_model(Method::Ssf, 3);
    ModelBatch b = random_batch(vit, 3, RngStream(4, 0));
    Tensor ref = base_forward(vit, b);
    AdaptedModel a = inject_ssf(vit);
    auto g = a.injected_param("norm.ssf_scale").tensor.mutable_values();
    std::fill(g.begin(), g.end(), 2.0);
    Tensor out = adapted_eval(a, b);
    // head(2f) = 2·(head(f) − bias) + bias
    auto bias = vit.param("head.bias").tensor.values();
    auto rv = ref.values();
    std::size_t classes = bias.size();
    std::vector<double> expect(rv.size());
    for (std::size_t i = 0; i < rv.size(); ++i) expect[i] = 2.0 * (rv[i] - bias[i % classes]) + bias[i % classes];
    EXPECT_LE(max_abs_diff(out, Tensor(ref.shape(), expect)), 1e-10);
}

TEST(AdaptFormer, DefaultVitCount)
{
    ModelGraph vit = build_mini_vit(VitConfig{}, RngStream(0, 0));
    AdaptedModel a = inject_adaptformer(vit, 4, 0.1);
    EXPECT_EQ(injected_count(a), 2u * (32 * 4 + 4 + 4 * 32 + 32));
}

TEST(AdaptFormer, ZeroScaleIgnoresBranch)
{
    ModelGraph vit = tiny_model(Method::AdaptFormer, 5);
    ModelBatch b = random_batch(vit, 3, RngStream(6, 0));
    AdaptedModel a = inject_adaptformer(vit, 3, 0.0, 1);
    fill_injected(a, RngStream(7, 0));
    EXPECT_LE(max_abs_diff(adapted_eval(a, b), base_forward(vit, b)), 1e-12);
    AdaptedModel on = inject_adaptformer(vit, 3, 0.5, 1);
    fill_injected(on, RngStream(7, 0));
    EXPECT_GT(max_abs_diff(adapted_eval(on, b), base_forward(vit, b)), 1e-3);
}

TEST(AdaptFormer, NoMlpBlocksRejected)
{
    ModelGraph cnn = build_mini_cnn(tiny_cnn(), RngStream(0, 0));
    EXPECT_THROW(inject_adaptformer(cnn, 4, 0.1), IncompatibleError);
}

TEST(Tsa, CountAndAdapterShapes)
{
    ModelGraph cnn = build_mini_cnn(CnnConfig{}, RngStream(0, 0));
    AdaptedModel a = inject_tsa(cnn);
    std::size_t expect = 0;
    std::size_t sites = 0;
    for (const auto& s : hook_sites(cnn)) {
        if (s.kind != SiteKind::Conv || s.parent.empty()) continue;
        expect += s.in_features * s.width;
        ++sites;
        const Tensor& w = a.injected_param(s.name + ".tsa.weight").tensor;
        EXPECT_EQ(w.shape(), (Shape{s.width, s.in_features, 1, 1}));
    }
    EXPECT_EQ(sites, 2u * 2);
    EXPECT_EQ(injected_count(a), expect);
}

TEST(Tsa, NonConvModelRejected)
{
    ModelGraph vit = build_mini_vit(tiny_vit(), RngStream(0, 0));
    EXPECT_THROW(inject_tsa(vit), IncompatibleError);
}

TEST(Tsa, AdapterAddsParallelOutput)
{
    ModelGraph cnn = tiny_model(Method::Tsa, 2);
    ModelBatch b = random_batch(cnn, 2, RngStream(1, 1));
    AdaptedModel a = inject_tsa(cnn);
    randomize_trainable(a, RngStream(3, 3));
    EXPECT_GT(max_abs_diff(adapted_eval(a, b), base_forward(cnn, b)), 1e-4);
}

TEST(SvDiff, ZeroDeltaReconstructsWeight)
{
    ModelGraph den = tiny_model(Method::SvDiff);
    AdaptedModel a = apply_svdiff(den);
    ASSERT_FALSE(a.svd.empty());
    for (const auto& h : hook_sites(den)) {
        auto it = a.svd.find(h.name);
        if (it == a.svd.end()) continue;
        Tensor w = svdiff_weight(it->second, Tensor::zeros(it->second.sigma.shape()));
        EXPECT_LE(max_abs_diff(w, den.param(h.weight).tensor), 1e-5) << h.name;
    }
}

TEST(SvDiff, NegativeTwoSigmaZeroesWeight)
{
    AdaptedModel a = apply_svdiff(tiny_model(Method::SvDiff));
    for (const auto& [site, f] : a.svd) {
        Tensor delta = ops::scale(f.sigma, -2.0);
        Tensor w = svdiff_weight(f, delta);
        for (double v : w.values()) EXPECT_EQ(v, 0.0) << site;
    }
}

TEST(SvDiff, OneDeltaPerSingularValue)
{
    ModelGraph den = build_mini_denoiser(tiny_denoiser(), RngStream(0, 0));
    AdaptedModel a = apply_svdiff(den);
    for (const auto& h : hook_sites(den)) {
        if (h.kind != SiteKind::Dense && h.kind != SiteKind::Conv) continue;
        const Tensor& w = den.param(h.weight).tensor;
        std::size_t m = w.dim(0), n = w.numel() / m;
        EXPECT_EQ(a.injected_param(h.name + ".svdiff_delta").tensor.numel(), std::min(m, n)) << h.name;
    }
}

TEST(SvDiff, FilterSelectsLayers)
{
    ModelGraph den = build_mini_denoiser(tiny_denoiser(), RngStream(0, 0));
    AdaptedModel conv = apply_svdiff(den, "conv");
    AdaptedModel attn = apply_svdiff(den, "attention");
    EXPECT_LT(attn.svd.size(), apply_svdiff(den).svd.size());
    for (const auto& h : hook_sites(den)) {
        if (conv.svd.count(h.name)) EXPECT_EQ(h.kind, SiteKind::Conv);
        if (attn.svd.count(h.name)) EXPECT_EQ(h.owner_kind, LayerKind::MultiHeadAttention);
    }
    EXPECT_THROW(apply_svdiff(den, "no-such-layer"), ConfigError);
}

// Every method, every step: parameters outside the mask keep their exact bits.
TEST(Invariants, FrozenImmutability)
{
    for (Method m : all_methods()) {
        SCOPED_TRACE(std::string(method_name(m)));
        ModelGraph model = tiny_model(m, 21);
        AdaptedModel a = make_strategy(model, spec_of(m));
        std::map<std::string, std::vector<double>> before;
        for (const auto& p : a.base.params) before[p.name].assign(p.tensor.values().begin(), p.tensor.values().end());
        TrainConfig cfg;
        cfg.learning_rate = 1e-2;
        cfg.weight_decay = 1e-3;
        Optimizer opt(cfg);
        for (int step = 0; step < 20; ++step) {
            ModelBatch b = random_batch(model, 3, RngStream(22, step));
            clear_grads(a);
            backward(batch_loss(a, b, true));
            optimizer_step(a, opt);
        }
        std::size_t moved = 0;
        for (const auto& p : a.base.params) {
            auto now = p.tensor.values();
            bool same = std::equal(now.begin(), now.end(), before[p.name].begin());
            if (a.mask.contains(p.name)) {
                moved += !same;
            } else {
                EXPECT_TRUE(same) << p.name;
            }
        }
        if (!is_additive(m)) EXPECT_GT(moved, 0u);
    }
}

TEST(Invariants, GradientsMatchFiniteDifferences)
{
    for (Method m : all_methods()) {
        SCOPED_TRACE(std::string(method_name(m)));
        ModelGraph model = tiny_model(m, 31);
        AdaptedModel a = make_strategy(model, spec_of(m));
        randomize_trainable(a, RngStream(32, 0));
        ModelBatch b = random_batch(model, 2, RngStream(33, 0));
        std::string probe = m == Method::LinearProbe ? "head.weight" : probe_param(a);
        EXPECT_LT(adapted_param_gradcheck(a, probe, b), 1e-4);
        if (is_additive(m)) EXPECT_LT(adapted_param_gradcheck(a, a.injected.back().name, b), 1e-4);
    }
}

TEST(Invariants, CloneIsIndependent)
{
    AdaptedModel a = inject_lora(tiny_model(Method::Lora), 2, 2);
    AdaptedModel c = a.clone();
    randomize_trainable(c, RngStream(1, 1));
    for (double v : a.injected_param(a.injected.back().name).tensor.values()) EXPECT_EQ(v, 0.0);
}

TEST(Checkpoint, AdaptedRoundTrip)
{
    for (Method m : {Method::Lora, Method::SvDiff, Method::BitFit}) {
        SCOPED_TRACE(std::string(method_name(m)));
        ModelGraph model = tiny_model(m, 41);
        AdaptedModel a = make_strategy(model, spec_of(m));
        randomize_trainable(a, RngStream(42, 0));
        ModelBatch b = random_batch(model, 2, RngStream(43, 0));
        AdaptedModel back = adapted_from_checkpoint_json(adapted_checkpoint_json(a));
        EXPECT_EQ(back.spec.method, m);
        EXPECT_EQ(max_abs_diff(adapted_eval(back, b), adapted_eval(a, b)), 0.0);
        EXPECT_EQ(trainable_count(back).trainable, trainable_count(a).trainable);
    }
}
