#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peftbench/data.hpp"
#include "peftbench/peft.hpp"
#include "peftbench/serialize.hpp"

namespace peftbench {

enum class OptimizerKind { Sgd, SgdMomentum, Adam };

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;
};

void validate_train_config(const TrainConfig& cfg);
Json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j, TrainConfig defaults = {});

// Mean cross-entropy of logits [B, C] against class ids.
Tensor total_loss(const Tensor& logits, std::span<const int> targets);
// Mean squared error against a target of the same shape.
Tensor total_loss(const Tensor& outputs, const Tensor& targets);

// Updates exactly the parameters flagged trainable. Momentum and Adam state
// is created lazily for those parameters only. Weight decay is coupled
// (added to the gradient).
class Optimizer {
public:
    explicit Optimizer(const TrainConfig& cfg);

    void step(std::span<ParamRecord* const> params);
    std::size_t steps() const { return t_; }
    bool has_state(const std::string& name) const { return first_.count(name) != 0; }
    std::size_t state_count() const { return first_.size(); }

private:
    TrainConfig cfg_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> first_;
    std::map<std::string, std::vector<double>> second_;
};

// Steps the adapted model's trainable parameters; throws if none has a gradient.
void optimizer_step(AdaptedModel& adapted, Optimizer& opt);

// Clears gradients of every parameter, base and injected.
void clear_grads(AdaptedModel& adapted);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_metric = 0.0;
};

struct TrainReport {
    double best_val_metric = 0.0;
    double test_metric = 0.0;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> curve;
    bool stopped_early = false;
    std::size_t trainable_params = 0;
};

Json train_report_to_json(const TrainReport& r);
TrainReport train_report_from_json(const Json& j);
// "epoch,train_loss,val_metric" rows.
std::string curve_csv(const TrainReport& r);

// Stops after `patience` consecutive epochs whose metric fails to exceed the
// best so far by more than `tolerance`.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience, double tolerance = 1e-6) : patience_(patience), tol_(tolerance) {}

    // Returns true when `metric` is a new best.
    bool update(double metric);
    bool should_stop() const { return bad_epochs_ >= patience_; }
    double best() const { return best_; }
    std::size_t best_index() const { return best_index_; }  // 1-based, 0 before any update

private:
    std::size_t patience_;
    double tol_;
    double best_ = 0.0;
    std::size_t best_index_ = 0;
    std::size_t seen_ = 0;
    std::size_t bad_epochs_ = 0;
};

// Values of trainable parameters and all buffers, for best-epoch restoration.
struct Snapshot {
    std::map<std::string, std::vector<double>> values;
};

Snapshot take_snapshot(AdaptedModel& adapted);
void restore_snapshot(AdaptedModel& adapted, const Snapshot& snap);

// Task-agnostic pieces of one fine-tuning run. `batch_loss` receives
// positions into the training set (0..train_size) and a per-step stream.
struct LoopTask {
    std::size_t train_size = 0;
    std::function<Tensor(AdaptedModel&, std::span<const std::size_t>, RngStream&)> batch_loss;
    std::function<double(AdaptedModel&)> val_metric;   // higher is better
    std::function<double(AdaptedModel&)> test_metric;  // evaluated after restoring the best epoch
};

TrainReport run_training(AdaptedModel& adapted, const LoopTask& task, const TrainConfig& cfg);

// Classification fine-tuning on ds.train with macro-F1 early stopping on
// ds.val and final evaluation on ds.test.
TrainReport train_loop(AdaptedModel& adapted, const Dataset& ds, const TrainConfig& cfg);

// Arg-max predictions in eval mode without a gradient graph.
std::vector<int> predict(AdaptedModel& adapted, const Dataset& ds, std::span<const std::size_t> indices,
                         std::size_t batch_size = 128);

// Unweighted mean over classes of per-class F1. A class absent from both
// predictions and targets scores 0.
double macro_f1(std::span<const int> predictions, std::span<const int> targets, std::size_t num_classes);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

}  // namespace peftbench
