#include "peftbench/gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace peftbench {

void validate_diffusion_config(const DiffusionConfig& cfg)
{
    if (cfg.timesteps < 2) throw ConfigError("diffusion: timesteps must be >= 2");
    if (!(cfg.beta_start > 0.0 && cfg.beta_start < cfg.beta_end && cfg.beta_end < 1.0)) {
        throw ConfigError("diffusion: need 0 < beta_start < beta_end < 1");
    }
    if (cfg.image_size < 1) throw ConfigError("diffusion: image_size must be >= 1");
    if (cfg.cond_vocab < 1) throw ConfigError("diffusion: cond_vocab must be >= 1");
}

Json diffusion_config_to_json(const DiffusionConfig& cfg)
{
    return {{"timesteps", cfg.timesteps},   {"beta_start", cfg.beta_start}, {"beta_end", cfg.beta_end},
            {"image_size", cfg.image_size}, {"cond_vocab", cfg.cond_vocab}};
}

DiffusionConfig diffusion_config_from_json(const Json& j)
{
    DiffusionConfig c;
    c.timesteps = json_get(j, "timesteps", c.timesteps);
    c.beta_start = json_get(j, "beta_start", c.beta_start);
    c.beta_end = json_get(j, "beta_end", c.beta_end);
    c.image_size = json_get(j, "image_size", c.image_size);
    c.cond_vocab = json_get(j, "cond_vocab", c.cond_vocab);
    validate_diffusion_config(c);
    return c;
}

DiffusionSchedule::DiffusionSchedule(const DiffusionConfig& cfg)
{
    validate_diffusion_config(cfg);
    const std::size_t T = cfg.timesteps;
    double abar = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
        double b = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * static_cast<double>(t) / static_cast<double>(T - 1);
        beta.push_back(b);
        alpha.push_back(1.0 - b);
        abar *= 1.0 - b;
        alpha_bar.push_back(abar);
    }
}

Tensor q_sample(const DiffusionSchedule& sched, const Tensor& x0, std::span<const int> t, const Tensor& eps)
{
    if (x0.shape() != eps.shape()) throw ShapeError("q_sample: x0 and eps shapes differ");
    std::size_t B = x0.dim(0);
    if (t.size() != B) throw ShapeError("q_sample: need one timestep per batch item");
    std::size_t per = x0.numel() / B;
    std::vector<double> out(x0.numel());
    auto xv = x0.values();
    auto ev = eps.values();
    for (std::size_t b = 0; b < B; ++b) {
        if (t[b] < 0 || static_cast<std::size_t>(t[b]) >= sched.alpha_bar.size()) {
            throw ConfigError("q_sample: timestep " + std::to_string(t[b]) + " out of range");
        }
        double ab = sched.alpha_bar[static_cast<std::size_t>(t[b])];
        double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = a * xv[i] + s * ev[i];
    }
    return Tensor(x0.shape(), std::move(out));
}

namespace {

void require_denoiser(const AdaptedModel& adapted)
{
    if (adapted.base.arch != Arch::MiniDenoiser) {
        throw IncompatibleError("diffusion needs mini-denoiser, got " + std::string(arch_name(adapted.base.arch)));
    }
}

}  // namespace

Tensor diffusion_loss(AdaptedModel& adapted, const Tensor& x0, std::span<const int> conditions,
                      const DiffusionSchedule& sched, RngStream& rng, bool training)
{
    require_denoiser(adapted);
    std::size_t B = x0.dim(0);
    ForwardOptions opts;
    opts.training = training;
    opts.grad = training;
    opts.conditions.assign(conditions.begin(), conditions.end());
    for (std::size_t b = 0; b < B; ++b) opts.timesteps.push_back(static_cast<int>(rng.below(sched.beta.size())));
    Tensor eps(x0.shape(), rng.normals(x0.numel()));
    Tensor xt = q_sample(sched, x0, opts.timesteps, eps);
    Tensor pred = adapted_forward(adapted, xt, opts);
    return total_loss(pred, eps);
}

double diffusion_eval_loss(AdaptedModel& adapted, const Dataset& ds, std::span<const std::size_t> indices,
                           const DiffusionConfig& cfg, std::uint64_t seed)
{
    if (indices.empty()) throw DataError("diffusion eval: empty split");
    DiffusionSchedule sched(cfg);
    RngStream rng(seed, 0xe7a1);
    double sum = 0.0;
    constexpr std::size_t kBatch = 64;
    for (std::size_t start = 0; start < indices.size(); start += kBatch) {
        auto chunk = indices.subspan(start, std::min(kBatch, indices.size() - start));
        auto conds = ds.labels_of(chunk);
        Tensor loss = diffusion_loss(adapted, ds.batch(chunk), conds, sched, rng, false);
        sum += loss.item() * static_cast<double>(chunk.size());
    }
    return sum / static_cast<double>(indices.size());
}

TrainReport diffusion_train(AdaptedModel& adapted, const Dataset& ds, const DiffusionConfig& dcfg,
                            const TrainConfig& tcfg)
{
    require_denoiser(adapted);
    validate_diffusion_config(dcfg);
    const auto* cfg = std::get_if<DenoiserConfig>(&adapted.base.config);
    if (ds.item_shape != Shape{cfg->in_channels, cfg->image_size, cfg->image_size}) {
        throw ShapeError("diffusion_train: dataset items " + shape_str(ds.item_shape) + " do not match the denoiser");
    }
    if (ds.num_classes > cfg->cond_vocab || ds.num_classes > dcfg.cond_vocab) {
        throw DataError("diffusion_train: dataset has " + std::to_string(ds.num_classes) +
                        " condition ids, vocabulary holds " + std::to_string(std::min(cfg->cond_vocab, dcfg.cond_vocab)));
    }
    if (ds.train.empty() || ds.val.empty() || ds.test.empty()) throw DataError("diffusion_train: empty split");
    DiffusionSchedule sched(dcfg);

    LoopTask task;
    task.train_size = ds.train.size();
    task.batch_loss = [&](AdaptedModel& a, std::span<const std::size_t> pos, RngStream& rng) {
        std::vector<std::size_t> idx;
        for (auto p : pos) idx.push_back(ds.train[p]);
        auto conds = ds.labels_of(idx);
        return diffusion_loss(a, ds.batch(idx), conds, sched, rng, true);
    };
    task.val_metric = [&](AdaptedModel& a) { return -diffusion_eval_loss(a, ds, ds.val, dcfg, tcfg.seed); };
    task.test_metric = [&](AdaptedModel& a) { return -diffusion_eval_loss(a, ds, ds.test, dcfg, tcfg.seed); };
    return run_training(adapted, task, tcfg);
}

std::span<const double> ImageBatch::item(std::size_t i) const
{
    if (i >= n) throw DataError("image batch: index out of range");
    return std::span<const double>(values).subspan(i * item_size(), item_size());
}

ImageBatch diffusion_sample(AdaptedModel& adapted, std::span<const int> conditions, std::size_t n,
                            const DiffusionConfig& cfg, RngStream rng, std::size_t batch_size)
{
    require_denoiser(adapted);
    DiffusionSchedule sched(cfg);
    const auto& dc = std::get<DenoiserConfig>(adapted.base.config);
    ImageBatch out;
    out.n = n;
    out.channels = dc.in_channels;
    out.size = dc.image_size;
    if (n == 0) return out;
    if (conditions.empty()) throw ConfigError("diffusion_sample: no condition ids given");
    if (batch_size < 1) throw ConfigError("diffusion_sample: batch_size must be >= 1");
    out.values.reserve(n * out.item_size());
    const std::size_t T = sched.beta.size();
    for (std::size_t start = 0, chunk_id = 0; start < n; start += batch_size, ++chunk_id) {
        std::size_t B = std::min(batch_size, n - start);
        RngStream r = rng.split(chunk_id);
        Shape shape{B, out.channels, out.size, out.size};
        std::size_t per = out.item_size();
        std::vector<double> x = r.normals(B * per);
        ForwardOptions opts;
        opts.training = false;
        opts.grad = false;
        for (std::size_t b = 0; b < B; ++b) opts.conditions.push_back(conditions[(start + b) % conditions.size()]);
        for (std::size_t t = T; t-- > 0;) {
            opts.timesteps.assign(B, static_cast<int>(t));
            Tensor eps = adapted_forward(adapted, Tensor(shape, x), opts);
            auto ev = eps.values();
            double a = sched.alpha[t], ab = sched.alpha_bar[t], beta = sched.beta[t];
            double coef = beta / std::sqrt(1.0 - ab);
            double sigma = t > 0 ? std::sqrt(beta * (1.0 - sched.alpha_bar[t - 1]) / (1.0 - ab)) : 0.0;
            std::vector<double> z = t > 0 ? r.normals(x.size()) : std::vector<double>{};
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] = (x[i] - coef * ev[i]) / std::sqrt(a);
                if (t > 0) x[i] += sigma * z[i];
            }
        }
        for (double& v : x) v = std::clamp(v, -1.0, 1.0);
        out.values.insert(out.values.end(), x.begin(), x.end());
    }
    return out;
}

ImageBatch dataset_images(const Dataset& ds, std::span<const std::size_t> indices)
{
    ImageBatch b;
    b.n = indices.size();
    b.channels = ds.item_shape.at(0);
    b.size = ds.item_shape.at(1);
    for (auto i : indices) {
        auto x = ds.item(i);
        b.values.insert(b.values.end(), x.begin(), x.end());
    }
    return b;
}

FeatureNet::FeatureNet(std::size_t input_size, std::uint64_t seed) : in_(input_size)
{
    if (input_size == 0) throw ConfigError("feature net: input size must be positive");
    RngStream rng(seed, 0xfea7);
    w1_ = rng.split(0).normals(kHidden * in_, 1.0 / std::sqrt(static_cast<double>(in_)));
    b1_ = rng.split(1).normals(kHidden, 0.1);
    w2_ = rng.split(2).normals(kOut * kHidden, 1.0 / std::sqrt(static_cast<double>(kHidden)));
}

Matrix FeatureNet::features(const ImageBatch& images) const
{
    if (images.n > 0 && images.item_size() != in_) {
        throw ShapeError("feature net: expects " + std::to_string(in_) + " inputs, images have " +
                         std::to_string(images.item_size()));
    }
    Matrix f(images.n, kOut);
    std::vector<double> h(kHidden);
    for (std::size_t i = 0; i < images.n; ++i) {
        auto x = images.item(i);
        for (std::size_t j = 0; j < kHidden; ++j) {
            double acc = b1_[j];
            const double* w = w1_.data() + j * in_;
            for (std::size_t k = 0; k < in_; ++k) acc += w[k] * x[k];
            h[j] = std::tanh(acc);
        }
        for (std::size_t o = 0; o < kOut; ++o) {
            double acc = 0.0;
            const double* w = w2_.data() + o * kHidden;
            for (std::size_t j = 0; j < kHidden; ++j) acc += w[j] * h[j];
            f(i, o) = acc;
        }
    }
    return f;
}

void moments(const Matrix& x, std::vector<double>& mu, Matrix& sigma)
{
    if (x.rows < 2) throw DataError("moments: need at least 2 samples");
    const std::size_t n = x.rows, d = x.cols;
    mu.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mu[j] += x(i, j);
    for (auto& m : mu) m /= static_cast<double>(n);
    sigma = Matrix(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            double da = x(i, a) - mu[a];
            for (std::size_t b = a; b < d; ++b) sigma(a, b) += da * (x(i, b) - mu[b]);
        }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            sigma(a, b) /= static_cast<double>(n - 1);
            sigma(b, a) = sigma(a, b);
        }
}

double frechet_from_moments(std::span<const double> mu1, const Matrix& sigma1, std::span<const double> mu2,
                            const Matrix& sigma2)
{
    const std::size_t d = mu1.size();
    if (mu2.size() != d || sigma1.rows != d || sigma1.cols != d || sigma2.rows != d || sigma2.cols != d) {
        throw ShapeError("frechet distance: moment dimensions disagree");
    }
    double mean_term = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean_term += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
    Matrix s1 = sqrtm_psd(sigma1);
    Matrix cross = sqrtm_psd(matmul(matmul(s1, sigma2), s1));
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += sigma1(i, i) + sigma2(i, i) - 2.0 * cross(i, i);
    return std::max(0.0, mean_term + trace);
}

FDResult frechet_distance(const Matrix& real, const Matrix& gen)
{
    if (real.cols != gen.cols) {
        throw ShapeError("frechet distance: feature dims differ (" + std::to_string(real.cols) + " vs " +
                         std::to_string(gen.cols) + ")");
    }
    const std::size_t d = real.cols;
    if (real.rows < d + 1 || gen.rows < d + 1) {
        throw DataError("frechet distance: need at least " + std::to_string(d + 1) + " samples per set, got " +
                        std::to_string(real.rows) + " and " + std::to_string(gen.rows));
    }
    std::vector<double> mu1, mu2;
    Matrix s1, s2;
    moments(real, mu1, s1);
    moments(gen, mu2, s2);
    return FDResult{frechet_from_moments(mu1, s1, mu2, s2), real.rows, gen.rows, d};
}

Json fd_result_to_json(const FDResult& r)
{
    return {{"fd", r.fd}, {"n_real", r.n_real}, {"n_gen", r.n_gen}, {"feature_dim", r.feature_dim}};
}

void export_pgm(const ImageBatch& images, const std::string& dir, const std::string& prefix)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
    if (images.channels != 1) throw ConfigError("export_pgm: only single-channel images can be written as PGM");
    for (std::size_t i = 0; i < images.n; ++i) {
        write_pgm(dir + "/" + prefix + "_" + std::to_string(i) + ".pgm", images.size, images.size, images.item(i), -1.0,
                  1.0);
    }
}

std::string images_csv(const ImageBatch& images)
{
    std::string out;
    for (std::size_t k = 0; k < images.item_size(); ++k) {
        if (k) out += ",";
        out += "p" + std::to_string(k);
    }
    out += "\n";
    char buf[32];
    for (std::size_t i = 0; i < images.n; ++i) {
        auto x = images.item(i);
        for (std::size_t k = 0; k < x.size(); ++k) {
            std::snprintf(buf, sizeof buf, k ? ",%.6f" : "%.6f", x[k]);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

}  // namespace peftbench
