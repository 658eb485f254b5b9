#include "support.hpp"

#include <algorithm>
#include <cmath>

namespace peftbench::testing {

Tensor random_tensor(const Shape& shape, RngStream& rng, double sd, bool requires_grad)
{
    return Tensor(shape, rng.normals(shape_numel(shape), sd), requires_grad);
}

Tensor weighted_sum(const Tensor& t, std::uint64_t seed)
{
    RngStream rng(seed, 0x3e1);
    std::vector<double> w(t.numel());
    for (auto& v : w) v = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return ops::sum(ops::mul(t, Tensor(t.shape(), std::move(w))));
}

namespace {

// Values bounded away from 0 so relu's kink is never straddled by ±eps.
Tensor away_from_zero(const Shape& shape, RngStream& rng)
{
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.5);
    return Tensor(shape, std::move(v));
}

struct PrimSetup {
    std::vector<Tensor> inputs;
    AttrMap attrs;
    std::vector<std::size_t> diff;  // differentiable input positions
};

PrimSetup setup_for(std::string_view kind, RngStream& rng)
{
    auto r = [&](Shape s, double sd = 1.0) { return random_tensor(s, rng, sd); };
    if (kind == "add" || kind == "sub" || kind == "mul") return {{r({2, 3}), r({3})}, {}, {0, 1}};
    if (kind == "scale") return {{r({2, 3})}, {{"factor", 1.7}}, {0}};
    if (kind == "matmul") return {{r({2, 3, 4}), r({4, 2})}, {}, {0, 1}};
    if (kind == "linear") return {{r({2, 3}), r({4, 3}), r({4})}, {}, {0, 1, 2}};
    if (kind == "conv2d")
        return {{r({2, 2, 5, 5}), r({3, 2, 3, 3}, 0.5), r({3})}, {{"stride", 2}, {"padding", 1}}, {0, 1, 2}};
    if (kind == "upsample2x") return {{r({1, 2, 2, 3})}, {}, {0}};
    if (kind == "relu") return {{away_from_zero({2, 5}, rng)}, {}, {0}};
    if (kind == "gelu") return {{r({2, 5})}, {}, {0}};
    if (kind == "softmax") return {{r({3, 4})}, {}, {0}};
    if (kind == "layer_norm") return {{r({3, 6}), r({6}), r({6})}, {}, {0, 1, 2}};
    if (kind == "group_norm") return {{r({2, 4, 3, 3}), r({4}), r({4})}, {{"groups", 2}}, {0, 1, 2}};
    if (kind == "batch_norm")
        return {{r({4, 3, 2, 2}), r({3}), r({3}), Tensor::zeros({3}), Tensor::full({3}, 1.0)}, {{"training", 1}}, {0, 1, 2}};
    if (kind == "sum" || kind == "mean") return {{r({2, 3})}, {}, {0}};
    if (kind == "mean_axes")
        return {{r({2, 3, 4})}, {{"axes", std::vector<std::int64_t>{0, 2}}, {"keepdim", 1}}, {0}};
    if (kind == "reshape") return {{r({2, 6})}, {{"shape", std::vector<std::int64_t>{3, 4}}}, {0}};
    if (kind == "transpose") return {{r({2, 3, 4})}, {{"perm", std::vector<std::int64_t>{2, 0, 1}}}, {0}};
    if (kind == "slice") return {{r({3, 5})}, {{"axis", 1}, {"start", 1}, {"end", 4}}, {0}};
    if (kind == "concat") return {{r({2, 3}), r({2, 2})}, {{"axis", 1}}, {0, 1}};
    if (kind == "scale_shift") return {{r({2, 3, 2, 2}), r({3}), r({3})}, {{"axis", 1}}, {0, 1, 2}};
    if (kind == "cross_entropy") return {{r({4, 3})}, {{"targets", std::vector<std::int64_t>{0, 2, 1, 2}}}, {0}};
    if (kind == "mse") return {{r({2, 3}), r({2, 3})}, {}, {0, 1}};
    throw ConfigError("no gradient case for primitive '" + std::string(kind) + "'");
}

}  // namespace

std::vector<GradCase> primitive_grad_cases(std::uint64_t seed)
{
    std::vector<GradCase> cases;
    for (auto kind : primitive_names()) {
        RngStream rng(seed, std::hash<std::string_view>{}(kind));
        PrimSetup s = setup_for(kind, rng);
        for (std::size_t pos : s.diff) {
            std::string k(kind);
            ScalarFn f = [k, s, pos](const Tensor& x) {
                std::vector<Tensor> in;
                for (std::size_t i = 0; i < s.inputs.size(); ++i) in.push_back(i == pos ? x : s.inputs[i].clone());
                return weighted_sum(apply_primitive(k, in, s.attrs));
            };
            cases.push_back({k + "/" + std::to_string(pos), f, s.inputs[pos]});
        }
    }
    return cases;
}

CnnConfig tiny_cnn()
{
    CnnConfig c;
    c.width = 4;
    c.blocks = 1;
    c.image_size = 8;
    return c;
}

VitConfig tiny_vit()
{
    VitConfig c;
    c.dim = 8;
    c.heads = 2;
    c.blocks = 1;
    c.patch = 4;
    c.image_size = 8;
    c.mlp_hidden = 16;
    return c;
}

DenoiserConfig tiny_denoiser()
{
    DenoiserConfig c;
    c.base_channels = 4;
    c.levels = 1;
    c.image_size = 8;
    c.time_dim = 8;
    c.cond_dim = 4;
    c.heads = 1;
    return c;
}

ArchConfig tiny_arch_for(Method m)
{
    if (method_supports(m, Arch::MiniVit)) return tiny_vit();
    if (method_supports(m, Arch::MiniCnn)) return tiny_cnn();
    return tiny_denoiser();
}

ModelBatch random_batch(const ModelGraph& model, std::size_t n, RngStream rng)
{
    ModelBatch b;
    std::size_t c = 1, s = 8;
    std::visit(
        [&](const auto& cfg) {
            c = cfg.in_channels;
            s = cfg.image_size;
        },
        model.config);
    b.x = Tensor({n, c, s, s}, rng.normals(n * c * s * s));
    if (model.arch == Arch::MiniDenoiser) {
        const auto& d = std::get<DenoiserConfig>(model.config);
        for (std::size_t i = 0; i < n; ++i) {
            b.timesteps.push_back(static_cast<int>(rng.below(50)));
            b.conditions.push_back(static_cast<int>(rng.below(d.cond_vocab)));
        }
        b.target = Tensor({n, c, s, s}, rng.normals(n * c * s * s));
    } else {
        for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(rng.below(model.num_classes())));
    }
    return b;
}

ForwardOptions batch_options(const ModelBatch& b, bool training, bool grad)
{
    ForwardOptions o;
    o.training = training;
    o.grad = grad;
    o.timesteps = b.timesteps;
    o.conditions = b.conditions;
    return o;
}

Tensor batch_loss(AdaptedModel& adapted, const ModelBatch& b, bool training)
{
    Tensor out = adapted_forward(adapted, b.x, batch_options(b, training));
    if (adapted.base.arch == Arch::MiniDenoiser) return ops::mse(out, b.target);
    return ops::cross_entropy(out, b.labels);
}

void randomize_trainable(AdaptedModel& adapted, RngStream rng, double sd)
{
    std::uint64_t k = 0;
    for (ParamRecord* p : adapted.trainable_params()) {
        RngStream r = rng.split(k++);
        auto v = p->tensor.mutable_values();
        for (auto& x : v) x += r.normal(0.0, sd);
    }
}

double adapted_param_gradcheck(AdaptedModel& adapted, const std::string& param, const ModelBatch& b,
                               std::size_t max_entries)
{
    ParamRecord* rec = nullptr;
    for (ParamRecord* p : adapted.trainable_params())
        if (p->name == param) rec = p;
    if (!rec) throw ConfigError("gradcheck: '" + param + "' is not trainable");
    Tensor original = rec->tensor;
    ScalarFn f = [&](const Tensor& x) {
        rec->tensor = x;
        return batch_loss(adapted, b, false);
    };
    double err = finite_diff_check(f, original, 1e-5, max_entries);
    rec->tensor = original;
    return err;
}

std::string probe_param(AdaptedModel& adapted)
{
    for (ParamRecord* p : adapted.trainable_params())
        if (p->role != Role::Head) return p->name;
    throw ConfigError("no trainable non-head parameter");
}

std::vector<std::size_t> brute_force_front(const std::vector<ResultRow>& rows)
{
    auto better = [](const ResultRow& a, const ResultRow& b) {  // a dominates b
        double sa = a.direction == Direction::HigherBetter ? a.metric : -a.metric;
        double sb = b.direction == Direction::HigherBetter ? b.metric : -b.metric;
        bool ge = sa >= sb && a.trainable_params <= b.trainable_params;
        bool strict = sa > sb || a.trainable_params < b.trainable_params;
        return ge && strict;
    };
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < rows.size() && !dominated; ++j) dominated = j != i && better(rows[j], rows[i]);
        if (!dominated) out.push_back(i);
    }
    return out;
}

}  // namespace peftbench::testing
