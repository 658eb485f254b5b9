#include "peftbench/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace peftbench {

std::string_view optimizer_name(OptimizerKind k)
{
    switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::SgdMomentum: return "sgd-momentum";
    case OptimizerKind::Adam: return "adam";
    }
    return "?";
}

OptimizerKind parse_optimizer(std::string_view s)
{
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "sgd-momentum") return OptimizerKind::SgdMomentum;
    if (s == "adam") return OptimizerKind::Adam;
    throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected sgd, sgd-momentum or adam)");
}

void validate_train_config(const TrainConfig& cfg)
{
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (cfg.patience < 1) throw ConfigError("patience must be >= 1");
    if (cfg.patience > cfg.max_epochs) {
        throw ConfigError("patience (" + std::to_string(cfg.patience) + ") exceeds max_epochs (" +
                          std::to_string(cfg.max_epochs) + ")");
    }
    if (!(cfg.weight_decay >= 0.0) || !std::isfinite(cfg.weight_decay)) throw ConfigError("weight_decay must be >= 0");
}

Json train_config_to_json(const TrainConfig& cfg)
{
    return {{"learning_rate", cfg.learning_rate}, {"optimizer", std::string(optimizer_name(cfg.optimizer))},
            {"batch_size", cfg.batch_size},       {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},           {"seed", cfg.seed},
            {"weight_decay", cfg.weight_decay}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig d)
{
    d.learning_rate = json_get(j, "learning_rate", d.learning_rate);
    d.optimizer = parse_optimizer(json_get(j, "optimizer", std::string(optimizer_name(d.optimizer))));
    d.batch_size = json_get(j, "batch_size", d.batch_size);
    d.max_epochs = json_get(j, "max_epochs", d.max_epochs);
    d.patience = json_get(j, "patience", d.patience);
    d.seed = json_get(j, "seed", d.seed);
    d.weight_decay = json_get(j, "weight_decay", d.weight_decay);
    validate_train_config(d);
    return d;
}

Tensor total_loss(const Tensor& logits, std::span<const int> targets)
{
    if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
        throw ShapeError("total_loss: logits " + shape_str(logits.shape()) + " do not match " +
                         std::to_string(targets.size()) + " targets");
    }
    return ops::cross_entropy(logits, targets);
}

Tensor total_loss(const Tensor& outputs, const Tensor& targets)
{
    if (outputs.shape() != targets.shape()) {
        throw ShapeError("total_loss: outputs " + shape_str(outputs.shape()) + " vs targets " +
                         shape_str(targets.shape()));
    }
    return ops::mse(outputs, targets);
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(const TrainConfig& cfg) : cfg_(cfg) { validate_train_config(cfg); }

void Optimizer::step(std::span<ParamRecord* const> params)
{
    constexpr double kMomentum = 0.9, kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    bool any = std::any_of(params.begin(), params.end(), [](const ParamRecord* p) {
        return p->trainable && p->tensor.has_grad();
    });
    if (!any) throw Error("optimizer step without gradients (run backward first)");
    ++t_;
    const double lr = cfg_.learning_rate, wd = cfg_.weight_decay;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (ParamRecord* p : params) {
        if (!p->trainable || !p->tensor.has_grad()) continue;
        auto w = p->tensor.mutable_values();
        auto g = p->tensor.grad();
        switch (cfg_.optimizer) {
        case OptimizerKind::Sgd:
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + wd * w[i]);
            break;
        case OptimizerKind::SgdMomentum: {
            auto& buf = first_.try_emplace(p->name, w.size(), 0.0).first->second;
            for (std::size_t i = 0; i < w.size(); ++i) {
                buf[i] = kMomentum * buf[i] + g[i] + wd * w[i];
                w[i] -= lr * buf[i];
            }
            break;
        }
        case OptimizerKind::Adam: {
            auto& m = first_.try_emplace(p->name, w.size(), 0.0).first->second;
            auto& v = second_.try_emplace(p->name, w.size(), 0.0).first->second;
            for (std::size_t i = 0; i < w.size(); ++i) {
                double gi = g[i] + wd * w[i];
                m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
                v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
                w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
            }
            break;
        }
        }
    }
}

void optimizer_step(AdaptedModel& adapted, Optimizer& opt)
{
    auto params = adapted.trainable_params();
    opt.step(params);
}

void clear_grads(AdaptedModel& adapted)
{
    for (auto& p : adapted.base.params) p.tensor.drop_grad();
    for (auto& p : adapted.injected) p.tensor.drop_grad();
}

// ---------------------------------------------------------------------------
// Reports

Json train_report_to_json(const TrainReport& r)
{
    Json curve = Json::array();
    for (const auto& e : r.curve) {
        curve.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_metric", e.val_metric}});
    }
    return {{"best_val_metric", r.best_val_metric}, {"test_metric", r.test_metric},
            {"epochs_run", r.epochs_run},           {"best_epoch", r.best_epoch},
            {"curve", std::move(curve)},            {"stopped_early", r.stopped_early},
            {"trainable_params", r.trainable_params}};
}

TrainReport train_report_from_json(const Json& j)
{
    TrainReport r;
    r.best_val_metric = json_require<double>(j, "best_val_metric");
    r.test_metric = json_require<double>(j, "test_metric");
    r.epochs_run = json_require<std::size_t>(j, "epochs_run");
    r.best_epoch = json_get<std::size_t>(j, "best_epoch", 0);
    r.stopped_early = json_get(j, "stopped_early", false);
    r.trainable_params = json_get<std::size_t>(j, "trainable_params", 0);
    for (const auto& e : json_get(j, "curve", Json::array())) {
        r.curve.push_back(EpochRecord{json_require<std::size_t>(e, "epoch"), json_require<double>(e, "train_loss"),
                                      json_require<double>(e, "val_metric")});
    }
    return r;
}

std::string curve_csv(const TrainReport& r)
{
    std::string out = "epoch,train_loss,val_metric\n";
    char buf[128];
    for (const auto& e : r.curve) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", e.epoch, e.train_loss, e.val_metric);
        out += buf;
    }
    return out;
}

bool EarlyStopper::update(double metric)
{
    ++seen_;
    if (best_index_ == 0 || metric > best_ + tol_) {
        best_ = metric;
        best_index_ = seen_;
        bad_epochs_ = 0;
        return true;
    }
    ++bad_epochs_;
    return false;
}

Snapshot take_snapshot(AdaptedModel& adapted)
{
    Snapshot s;
    for (ParamRecord* p : adapted.trainable_params()) {
        auto v = p->tensor.values();
        s.values[p->name].assign(v.begin(), v.end());
    }
    for (auto& b : adapted.base.buffers) {
        auto v = b.tensor.values();
        s.values["buffer:" + b.name].assign(v.begin(), v.end());
    }
    return s;
}

void restore_snapshot(AdaptedModel& adapted, const Snapshot& snap)
{
    auto put = [&](const std::string& key, Tensor& t) {
        auto it = snap.values.find(key);
        if (it == snap.values.end()) return;
        if (it->second.size() != t.numel()) throw ShapeError("snapshot: size mismatch for '" + key + "'");
        std::copy(it->second.begin(), it->second.end(), t.mutable_values().begin());
    };
    for (ParamRecord* p : adapted.trainable_params()) put(p->name, p->tensor);
    for (auto& b : adapted.base.buffers) put("buffer:" + b.name, b.tensor);
}

TrainReport run_training(AdaptedModel& adapted, const LoopTask& task, const TrainConfig& cfg)
{
    validate_train_config(cfg);
    if (task.train_size == 0) throw DataError("training split is empty");
    if (!task.batch_loss || !task.val_metric || !task.test_metric) throw ConfigError("incomplete training task");

    TrainReport report;
    report.trainable_params = trainable_count(adapted).trainable;
    Optimizer opt(cfg);
    EarlyStopper stopper(cfg.patience);
    RngStream root(cfg.seed, 0x7ea1);
    Snapshot best = take_snapshot(adapted);

    std::vector<std::size_t> order(task.train_size);
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        root.split(2 * epoch).shuffle(order);
        RngStream step_rng = root.split(2 * epoch + 1);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> chunk(order.data() + start, end - start);
            clear_grads(adapted);
            Tensor loss = task.batch_loss(adapted, chunk, step_rng);
            backward(loss);
            optimizer_step(adapted, opt);
            loss_sum += loss.item() * static_cast<double>(chunk.size());
        }
        clear_grads(adapted);
        double train_loss = loss_sum / static_cast<double>(order.size());
        if (!std::isfinite(train_loss)) {
            throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
        }
        double val = task.val_metric(adapted);
        report.curve.push_back(EpochRecord{epoch, train_loss, val});
        report.epochs_run = epoch;
        if (stopper.update(val)) best = take_snapshot(adapted);
        if (stopper.should_stop()) {
            report.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    restore_snapshot(adapted, best);
    report.best_val_metric = stopper.best();
    report.best_epoch = stopper.best_index();
    report.test_metric = task.test_metric(adapted);
    return report;
}

// ---------------------------------------------------------------------------
// Classification

std::vector<int> predict(AdaptedModel& adapted, const Dataset& ds, std::span<const std::size_t> indices,
                         std::size_t batch_size)
{
    std::vector<int> out;
    out.reserve(indices.size());
    ForwardOptions opts;
    opts.training = false;
    opts.grad = false;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        std::size_t end = std::min(indices.size(), start + batch_size);
        Tensor logits = adapted_forward(adapted, ds.batch(indices.subspan(start, end - start)), opts);
        std::size_t c = logits.dim(1);
        auto v = logits.values();
        for (std::size_t b = 0; b < end - start; ++b) {
            auto row = v.subspan(b * c, c);
            out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
    return out;
}

namespace {

void require_disjoint(const Dataset& ds)
{
    std::vector<std::size_t> all;
    all.insert(all.end(), ds.train.begin(), ds.train.end());
    all.insert(all.end(), ds.val.begin(), ds.val.end());
    all.insert(all.end(), ds.test.begin(), ds.test.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
        throw DataError("dataset '" + ds.name + "': train/val/test splits overlap");
    }
    if (!all.empty() && all.back() >= ds.size()) throw DataError("dataset '" + ds.name + "': split index out of range");
}

}  // namespace

TrainReport train_loop(AdaptedModel& adapted, const Dataset& ds, const TrainConfig& cfg)
{
    if (ds.train.empty() || ds.val.empty() || ds.test.empty()) {
        throw DataError("dataset '" + ds.name + "': train, val and test splits must be non-empty (sizes " +
                        std::to_string(ds.train.size()) + "/" + std::to_string(ds.val.size()) + "/" +
                        std::to_string(ds.test.size()) + ")");
    }
    require_disjoint(ds);
    std::size_t classes = adapted.base.num_classes();
    if (classes == 0) throw IncompatibleError("train_loop needs a classifier, got " + std::string(arch_name(adapted.base.arch)));
    if (classes != ds.num_classes) {
        throw ConfigError("model head has " + std::to_string(classes) + " classes, dataset '" + ds.name + "' has " +
                          std::to_string(ds.num_classes));
    }

    LoopTask task;
    task.train_size = ds.train.size();
    task.batch_loss = [&](AdaptedModel& a, std::span<const std::size_t> pos, RngStream&) {
        std::vector<std::size_t> idx;
        idx.reserve(pos.size());
        for (auto p : pos) idx.push_back(ds.train[p]);
        ForwardOptions opts;
        opts.training = true;
        Tensor logits = adapted_forward(a, ds.batch(idx), opts);
        auto labels = ds.labels_of(idx);
        return total_loss(logits, labels);
    };
    auto f1_on = [&](const std::vector<std::size_t>& split) {
        return [&ds, &split, classes](AdaptedModel& a) {
            auto pred = predict(a, ds, split);
            auto truth = ds.labels_of(split);
            return macro_f1(pred, truth, classes);
        };
    };
    task.val_metric = f1_on(ds.val);
    task.test_metric = f1_on(ds.test);
    return run_training(adapted, task, cfg);
}

double macro_f1(std::span<const int> predictions, std::span<const int> targets, std::size_t num_classes)
{
    if (predictions.size() != targets.size()) {
        throw ShapeError("macro_f1: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
    }
    if (predictions.empty()) throw DataError("macro_f1: no predictions");
    if (num_classes == 0) throw ConfigError("macro_f1: num_classes must be >= 1");
    std::vector<std::size_t> tp(num_classes), fp(num_classes), fn(num_classes);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        int p = predictions[i], t = targets[i];
        if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= num_classes || static_cast<std::size_t>(t) >= num_classes) {
            throw DataError("macro_f1: class id out of range at position " + std::to_string(i));
        }
        if (p == t) {
            ++tp[static_cast<std::size_t>(p)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(t)];
        }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
        if (denom > 0) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    }
    return sum / static_cast<double>(num_classes);
}

MeanStd mean_std(std::span<const double> values)
{
    MeanStd r;
    if (values.empty()) return r;
    double n = static_cast<double>(values.size());
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        r.std = std::sqrt(ss / (n - 1.0));
    }
    return r;
}

}  // namespace peftbench
