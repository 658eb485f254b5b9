#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "peftbench/data.hpp"
#include "peftbench/linalg.hpp"
#include "peftbench/peft.hpp"
#include "peftbench/trainer.hpp"

namespace peftbench {

// Linear beta schedule. The defaults rescale the usual [1e-4, 0.02] over
// 1000 steps to 50 steps so the total noise level stays comparable.
struct DiffusionConfig {
    std::size_t timesteps = 50;
    double beta_start = 0.002;
    double beta_end = 0.4;
    std::size_t image_size = 16;
    std::size_t cond_vocab = 4;
};

void validate_diffusion_config(const DiffusionConfig& cfg);
Json diffusion_config_to_json(const DiffusionConfig& cfg);
DiffusionConfig diffusion_config_from_json(const Json& j);

struct DiffusionSchedule {
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    explicit DiffusionSchedule(const DiffusionConfig& cfg);
};

// x_t = sqrt(abar_t)·x0 + sqrt(1 - abar_t)·eps, per batch item.
Tensor q_sample(const DiffusionSchedule& sched, const Tensor& x0, std::span<const int> t, const Tensor& eps);

// Epsilon-prediction loss on one batch with t and eps drawn from `rng`.
Tensor diffusion_loss(AdaptedModel& adapted, const Tensor& x0, std::span<const int> conditions,
                      const DiffusionSchedule& sched, RngStream& rng, bool training);

// Mean loss over `indices` with a fixed noise stream, no gradient graph.
double diffusion_eval_loss(AdaptedModel& adapted, const Dataset& ds, std::span<const std::size_t> indices,
                           const DiffusionConfig& cfg, std::uint64_t seed);

// Fine-tunes on ds.train; validation metric is the negated eval loss on ds.val.
TrainReport diffusion_train(AdaptedModel& adapted, const Dataset& ds, const DiffusionConfig& dcfg,
                            const TrainConfig& tcfg);

struct ImageBatch {
    std::size_t n = 0;
    std::size_t channels = 1;
    std::size_t size = 0;
    std::vector<double> values;  // n·channels·size·size

    std::size_t item_size() const { return channels * size * size; }
    std::span<const double> item(std::size_t i) const;
};

// Ancestral sampling with the posterior variance. Condition ids are used
// cyclically when fewer than n are given. Final samples are clipped to [-1, 1].
ImageBatch diffusion_sample(AdaptedModel& adapted, std::span<const int> conditions, std::size_t n,
                            const DiffusionConfig& cfg, RngStream rng, std::size_t batch_size = 64);

ImageBatch dataset_images(const Dataset& ds, std::span<const std::size_t> indices);

// Frozen random feature map: flatten -> dense(64) -> tanh -> dense(16).
class FeatureNet {
public:
    static constexpr std::size_t kHidden = 64;
    static constexpr std::size_t kOut = 16;

    FeatureNet(std::size_t input_size, std::uint64_t seed = 0xfea7);

    std::size_t input_size() const { return in_; }
    Matrix features(const ImageBatch& images) const;

private:
    std::size_t in_;
    std::vector<double> w1_, b1_, w2_;
};

struct FDResult {
    double fd = 0.0;
    std::size_t n_real = 0;
    std::size_t n_gen = 0;
    std::size_t feature_dim = 0;
};

// Rows are samples. Each set needs at least dim+1 rows.
FDResult frechet_distance(const Matrix& real, const Matrix& gen);
// Closed form on given moments; negative round-off is clamped to 0.
double frechet_from_moments(std::span<const double> mu1, const Matrix& sigma1, std::span<const double> mu2,
                            const Matrix& sigma2);

// Sample mean and unbiased covariance of the rows.
void moments(const Matrix& x, std::vector<double>& mu, Matrix& sigma);

Json fd_result_to_json(const FDResult& r);

// One PGM per image as <dir>/<prefix>_<i>.pgm with intensities mapped from [-1, 1].
void export_pgm(const ImageBatch& images, const std::string& dir, const std::string& prefix);
// Header p0..pK, one image per row.
std::string images_csv(const ImageBatch& images);

}  // namespace peftbench
