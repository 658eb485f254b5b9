#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "peftbench/rng.hpp"
#include "peftbench/serialize.hpp"

namespace peftbench {

using ParamValue = std::variant<double, std::string>;

struct SearchDim {
    enum class Kind { LogUniform, Uniform, Categorical };
    Kind kind = Kind::Uniform;
    double low = 0.0;
    double high = 1.0;
    std::vector<ParamValue> choices;

    static SearchDim log_uniform(double lo, double hi) { return {Kind::LogUniform, lo, hi, {}}; }
    static SearchDim uniform(double lo, double hi) { return {Kind::Uniform, lo, hi, {}}; }
    static SearchDim categorical(std::vector<ParamValue> c) { return {Kind::Categorical, 0.0, 0.0, std::move(c)}; }
};

struct SearchSpace {
    std::map<std::string, SearchDim> dims;
};

void validate_search_space(const SearchSpace& space);
Json search_space_to_json(const SearchSpace& space);
SearchSpace search_space_from_json(const Json& j);

using TrialConfig = std::map<std::string, ParamValue>;

// Numeric view of a sampled value; numeric strings are parsed.
double config_number(const TrialConfig& cfg, const std::string& key);
std::string config_string(const TrialConfig& cfg, const std::string& key);

enum class TrialStatus { Pending, Running, Reported, Promoted, Stopped };

std::string_view trial_status_name(TrialStatus s);

struct Trial {
    std::size_t id = 0;
    TrialConfig config;
    std::size_t rung = 0;
    std::size_t budget = 0;
    TrialStatus status = TrialStatus::Pending;
    std::optional<double> metric;  // latest reported metric
};

// Draws every dimension in key order; log-uniform dims are uniform in log space.
Trial sample_trial(const SearchSpace& space, RngStream& rng, std::size_t id = 0);

// Latin-hypercube draws over a fixed trial budget: in every dimension trial i
// falls in stratum perm[i] of n equal-probability strata, with a uniform
// offset inside it. Each marginal is still the dimension's distribution.
class StratifiedSampler {
public:
    StratifiedSampler(const SearchSpace& space, std::size_t n, RngStream rng);

    Trial draw(std::size_t id);

private:
    SearchSpace space_;
    std::size_t n_;
    RngStream rng_;
    std::vector<std::vector<std::size_t>> strata_;  // per dimension, in key order
};

struct Rung {
    std::size_t level = 0;
    std::size_t budget = 0;
    std::vector<std::pair<std::size_t, double>> results;  // (trial id, metric) in report order
    std::set<std::size_t> promoted;
};

// Trials whose metric ranks within the top max(1, floor(n/eta)) of the n
// results reported so far and that are not yet promoted. Higher metric is
// better; ties are broken by lower trial id.
std::vector<std::size_t> asha_promote(const Rung& rung, std::size_t eta);

struct SearchSettings {
    std::size_t max_trials = 27;
    std::size_t eta = 3;
    std::size_t min_budget = 2;
    std::size_t max_budget = 18;
    std::uint64_t seed = 0;
    bool stratified = true;  // Latin-hypercube over max_trials, else i.i.d. sample_trial
};

// Validates the geometry and returns the rung budgets min·eta^k up to max.
std::vector<std::size_t> rung_budgets(const SearchSettings& s);

struct LedgerEvent {
    enum class Kind { Start, Report, Promote };
    Kind kind;
    std::size_t trial;
    std::size_t rung;
    std::size_t budget;
    double metric = 0.0;  // Report only
};

struct SearchResult {
    Trial best;
    std::vector<Trial> trials;
    std::vector<Rung> rungs;
    std::vector<LedgerEvent> ledger;
    std::size_t total_epochs = 0;
};

// Returns the metric (higher is better) of `trial` trained for `budget` epochs.
using Objective = std::function<double(const Trial& trial, std::size_t budget)>;

// Serial asynchronous successive halving: each step promotes a pending
// top-rung candidate if one exists (highest rung first), otherwise starts a
// new trial at the base rung until max_trials are drawn.
SearchResult run_search(const SearchSpace& space, const Objective& objective, const SearchSettings& settings);

Json search_result_to_json(const SearchResult& r);

}  // namespace peftbench
