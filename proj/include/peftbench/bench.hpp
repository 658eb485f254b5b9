#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peftbench/data.hpp"
#include "peftbench/gen.hpp"
#include "peftbench/models.hpp"
#include "peftbench/peft.hpp"
#include "peftbench/trainer.hpp"

namespace peftbench {

enum class Direction { HigherBetter, LowerBetter };

std::string_view direction_name(Direction d);  // "higher" / "lower"
Direction parse_direction(std::string_view s);

struct ResultRow {
    std::string method;
    std::string dataset;
    double metric = 0.0;  // mean over seeds
    double std = 0.0;
    std::size_t trainable_params = 0;
    Direction direction = Direction::HigherBetter;
    double fraction = 1.0;
};

struct RankTable {
    Direction direction = Direction::HigherBetter;
    std::vector<std::string> methods;   // order of first appearance
    std::vector<std::string> datasets;  // order of first appearance
    std::vector<std::vector<ResultRow>> cells;  // [dataset][method]
    std::vector<std::vector<int>> ranks;        // [dataset][method], dense, best = 1
    std::vector<double> avg_metric;             // per method, round-half-even to 2 decimals
    std::vector<double> avg_metric_raw;
    std::vector<double> avg_rank;
};

// Dense ranks ("1223"): equal values share a rank, the next distinct value
// gets the next integer.
std::vector<int> dense_ranks(std::span<const double> values, Direction direction);

double round_half_even(double x, int decimals);

// Requires every (method, dataset) cell exactly once and a single direction.
RankTable rank_table(std::span<const ResultRow> rows);

// Rows not dominated under (metric better, trainable_params lower). Rows with
// identical coordinates are all kept. Input order is preserved.
std::vector<ResultRow> pareto_front(std::span<const ResultRow> rows);

enum class ReportFormat { Csv, Json };

ReportFormat parse_report_format(std::string_view s);

// Byte-stable rendering: fixed %.4f floats, sorted JSON keys, LF line endings.
std::string render_report(const RankTable& table, ReportFormat format);
void emit_report(const RankTable& table, ReportFormat format, const std::string& path);
// CSV reports carry no direction; JSON reports record it and ignore `direction`.
RankTable parse_report(const std::string& text, ReportFormat format, Direction direction = Direction::HigherBetter);

// Rows from either the report CSV schema (method,dataset,metric,std,params,rank;
// rank is ignored) or a wide matrix "dataset,<method>,<method>,..." of metrics.
// Lines starting with '#' are comments.
std::vector<ResultRow> read_rows_csv(const std::string& text, Direction direction);

Json result_row_to_json(const ResultRow& r);
ResultRow result_row_from_json(const Json& j);

// Plot-ready series for data-volume sweeps: fraction,method,mean,std.
std::string series_csv(std::span<const ResultRow> rows);

// ---------------------------------------------------------------------------
// Experiments

struct DatasetRef {
    std::string kind = "synthetic";  // synthetic | synthetic-conditional | image-folder | csv
    std::string path;                // ingested kinds
    SynthConfig synth;
    SynthCondConfig cond;
};

// Desk-scale pre-training on the synthetic source task that defines theta_0.
struct PretrainSpec {
    std::size_t epochs = 30;
    std::size_t source_size = 600;
    double learning_rate = 3e-3;
    std::size_t batch_size = 32;
};

struct ExperimentConfig {
    int schema = 1;
    std::string name = "experiment";
    ArchConfig arch = VitConfig{};
    PeftSpec peft;
    TrainConfig train;
    DatasetRef dataset;
    double fraction = 1.0;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::uint64_t seed = 0;  // base seed for data, pre-training and repeats
    PretrainSpec pretrain;
    DiffusionConfig diffusion;
    std::size_t fd_samples = 200;
};

void validate_experiment(const ExperimentConfig& cfg);
Json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const Json& j);

// Builds or ingests the experiment's target dataset (before subsampling).
Dataset load_dataset(const ExperimentConfig& cfg);

// Pre-trained snapshots keyed by (architecture, source task, recipe, seed).
// Optionally persisted as checkpoints under `dir`. Safe to share between threads.
class PretrainCache {
public:
    explicit PretrainCache(std::string dir = "") : dir_(std::move(dir)) {}

    ModelGraph get(const ExperimentConfig& cfg);
    std::size_t size() const;
    std::size_t builds() const { return builds_; }

private:
    std::string dir_;
    mutable std::mutex mu_;
    std::map<std::string, ModelGraph> models_;
    std::size_t builds_ = 0;
};

std::string pretrain_key(const ExperimentConfig& cfg);
ModelGraph pretrain_model(const ExperimentConfig& cfg);

// Training seed of repeat `s` under base seed `base`.
std::uint64_t repeat_seed(std::uint64_t base, std::uint64_t s);

// Pre-trains (or fetches) theta_0, applies the PEFT method, trains once per
// seed and aggregates mean and sample std of the test metric.
ResultRow run_experiment(const ExperimentConfig& cfg, PretrainCache* cache = nullptr);

// One row per (method, fraction). Fractions must be strictly descending in
// (0, 1]; val and test are shared across fractions.
std::vector<ResultRow> sweep_volume(const ExperimentConfig& cfg, std::span<const Method> methods,
                                    std::span<const double> fractions, PretrainCache* cache = nullptr,
                                    std::size_t jobs = 1);

std::vector<double> default_fractions();

// Base checkpoint plus PEFT spec and injected tensors. Loading re-applies the
// method to the base, so SV-Diff factors are recomputed.
std::string adapted_checkpoint_json(const AdaptedModel& adapted);
AdaptedModel adapted_from_checkpoint_json(const std::string& text);

}  // namespace peftbench
