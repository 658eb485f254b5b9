#include "peftbench/hpo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <optional>

namespace peftbench {

namespace {

const char* dim_kind_name(SearchDim::Kind k)
{
    switch (k) {
    case SearchDim::Kind::LogUniform: return "log-uniform";
    case SearchDim::Kind::Uniform: return "uniform";
    case SearchDim::Kind::Categorical: return "categorical";
    }
    return "?";
}

Json value_json(const ParamValue& v)
{
    if (auto* d = std::get_if<double>(&v)) return *d;
    return std::get<std::string>(v);
}

ParamValue value_from_json(const Json& j, const std::string& ctx)
{
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    throw ConfigError(ctx + ": categorical choices must be numbers or strings");
}

Json config_json(const TrialConfig& cfg)
{
    Json j = Json::object();
    for (const auto& [k, v] : cfg) j[k] = value_json(v);
    return j;
}

Json trial_json(const Trial& t)
{
    Json j{{"id", t.id},
           {"config", config_json(t.config)},
           {"rung", t.rung},
           {"budget", t.budget},
           {"status", std::string(trial_status_name(t.status))}};
    j["metric"] = t.metric ? Json(*t.metric) : Json(nullptr);
    return j;
}

}  // namespace

void validate_search_space(const SearchSpace& space)
{
    if (space.dims.empty()) throw ConfigError("search space has no dimensions");
    for (const auto& [name, d] : space.dims) {
        switch (d.kind) {
        case SearchDim::Kind::LogUniform:
            if (!(d.low > 0.0)) throw ConfigError("search dim '" + name + "': log-uniform low must be > 0");
            [[fallthrough]];
        case SearchDim::Kind::Uniform:
            if (!(d.low < d.high) || !std::isfinite(d.low) || !std::isfinite(d.high)) {
                throw ConfigError("search dim '" + name + "': need low < high");
            }
            break;
        case SearchDim::Kind::Categorical:
            if (d.choices.empty()) throw ConfigError("search dim '" + name + "': empty categorical set");
            break;
        }
    }
}

Json search_space_to_json(const SearchSpace& space)
{
    Json j = Json::object();
    for (const auto& [name, d] : space.dims) {
        Json e{{"type", dim_kind_name(d.kind)}};
        if (d.kind == SearchDim::Kind::Categorical) {
            Json c = Json::array();
            for (const auto& v : d.choices) c.push_back(value_json(v));
            e["choices"] = std::move(c);
        } else {
            e["low"] = d.low;
            e["high"] = d.high;
        }
        j[name] = std::move(e);
    }
    return j;
}

SearchSpace search_space_from_json(const Json& j)
{
    if (!j.is_object()) throw ConfigError("search space must be a JSON object");
    SearchSpace s;
    for (const auto& [name, e] : j.items()) {
        auto type = json_require<std::string>(e, "type");
        SearchDim d;
        if (type == "categorical") {
            d.kind = SearchDim::Kind::Categorical;
            for (const auto& c : json_require<Json>(e, "choices")) d.choices.push_back(value_from_json(c, name));
        } else if (type == "uniform" || type == "log-uniform") {
            d.kind = type == "uniform" ? SearchDim::Kind::Uniform : SearchDim::Kind::LogUniform;
            d.low = json_require<double>(e, "low");
            d.high = json_require<double>(e, "high");
        } else {
            throw ConfigError("search dim '" + name + "': unknown type '" + type + "'");
        }
        s.dims[name] = std::move(d);
    }
    validate_search_space(s);
    return s;
}

double config_number(const TrialConfig& cfg, const std::string& key)
{
    auto it = cfg.find(key);
    if (it == cfg.end()) throw ConfigError("trial config has no '" + key + "'");
    if (auto* d = std::get_if<double>(&it->second)) return *d;
    const auto& s = std::get<std::string>(it->second);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError("trial config '" + key + "' is not numeric: '" + s + "'");
    }
    return v;
}

std::string config_string(const TrialConfig& cfg, const std::string& key)
{
    auto it = cfg.find(key);
    if (it == cfg.end()) throw ConfigError("trial config has no '" + key + "'");
    if (auto* s = std::get_if<std::string>(&it->second)) return *s;
    throw ConfigError("trial config '" + key + "' is not a string");
}

std::string_view trial_status_name(TrialStatus s)
{
    switch (s) {
    case TrialStatus::Pending: return "pending";
    case TrialStatus::Running: return "running";
    case TrialStatus::Reported: return "reported";
    case TrialStatus::Promoted: return "promoted";
    case TrialStatus::Stopped: return "stopped";
    }
    return "?";
}

namespace {

// Maps one unit draw per dimension onto the space; `unit` is called in key order.
template <class Unit>
Trial draw_trial(const SearchSpace& space, std::size_t id, Unit&& unit)
{
    Trial t;
    t.id = id;
    for (const auto& [name, d] : space.dims) {
        double u = unit(d);
        switch (d.kind) {
        case SearchDim::Kind::Uniform:
            t.config[name] = std::min(d.low + (d.high - d.low) * u, d.high);
            break;
        case SearchDim::Kind::LogUniform: {
            double lo = std::log(d.low), hi = std::log(d.high);
            t.config[name] = std::clamp(std::exp(lo + (hi - lo) * u), d.low, d.high);
            break;
        }
        case SearchDim::Kind::Categorical: {
            auto k = std::min(static_cast<std::size_t>(u * static_cast<double>(d.choices.size())), d.choices.size() - 1);
            t.config[name] = d.choices[k];
            break;
        }
        }
    }
    return t;
}

}  // namespace

Trial sample_trial(const SearchSpace& space, RngStream& rng, std::size_t id)
{
    validate_search_space(space);
    return draw_trial(space, id, [&](const SearchDim& d) {
        if (d.kind == SearchDim::Kind::Categorical) {
            return (static_cast<double>(rng.below(d.choices.size())) + 0.5) / static_cast<double>(d.choices.size());
        }
        return rng.uniform();
    });
}

StratifiedSampler::StratifiedSampler(const SearchSpace& space, std::size_t n, RngStream rng)
    : space_(space), n_(n), rng_(rng)
{
    validate_search_space(space);
    if (n == 0) throw ConfigError("stratified sampler: need at least one trial");
    std::uint64_t k = 0;
    for (std::size_t i = 0; i < space.dims.size(); ++i) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng_.split(k++).shuffle(perm);
        strata_.push_back(std::move(perm));
    }
}

Trial StratifiedSampler::draw(std::size_t id)
{
    if (id >= n_) throw ConfigError("stratified sampler: trial " + std::to_string(id) + " beyond its budget");
    RngStream jitter = rng_.split(0x100000 + id);
    std::size_t dim = 0;
    return draw_trial(space_, id, [&](const SearchDim&) {
        double u = (static_cast<double>(strata_[dim++][id]) + jitter.uniform()) / static_cast<double>(n_);
        return std::min(u, std::nextafter(1.0, 0.0));
    });
}

std::vector<std::size_t> asha_promote(const Rung& rung, std::size_t eta)
{
    if (eta < 2) throw ConfigError("asha: reduction factor must be >= 2");
    if (rung.results.empty()) return {};
    auto sorted = rung.results;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::size_t k = std::max<std::size_t>(1, sorted.size() / eta);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i)
        if (!rung.promoted.count(sorted[i].first)) out.push_back(sorted[i].first);
    return out;
}

std::vector<std::size_t> rung_budgets(const SearchSettings& s)
{
    if (s.eta < 2) throw ConfigError("asha: reduction factor must be >= 2");
    if (s.min_budget < 1) throw ConfigError("asha: min_budget must be >= 1");
    if (s.max_budget < s.min_budget) throw ConfigError("asha: max_budget below min_budget");
    std::vector<std::size_t> budgets{s.min_budget};
    while (budgets.back() < s.max_budget) budgets.push_back(budgets.back() * s.eta);
    if (budgets.back() != s.max_budget) {
        throw ConfigError("asha: max_budget " + std::to_string(s.max_budget) + " is not min_budget " +
                          std::to_string(s.min_budget) + " times a power of eta " + std::to_string(s.eta));
    }
    return budgets;
}

SearchResult run_search(const SearchSpace& space, const Objective& objective, const SearchSettings& settings)
{
    validate_search_space(space);
    if (settings.max_trials < 1) throw ConfigError("asha: max_trials must be >= 1");
    if (!objective) throw ConfigError("asha: missing objective");
    const auto budgets = rung_budgets(settings);
    const std::size_t top = budgets.size() - 1;

    SearchResult res;
    for (std::size_t k = 0; k < budgets.size(); ++k) res.rungs.push_back(Rung{k, budgets[k], {}, {}});
    RngStream rng(settings.seed, 0xa5a);
    std::optional<StratifiedSampler> strat;
    if (settings.stratified) strat.emplace(space, settings.max_trials, rng.split(0x57a7));

    auto run = [&](std::size_t id, std::size_t level) {
        Trial& t = res.trials[id];
        t.rung = level;
        t.budget = budgets[level];
        t.status = TrialStatus::Running;
        double metric = objective(t, t.budget);
        if (!std::isfinite(metric)) {
            throw NumericError("asha: trial " + std::to_string(id) + " returned a non-finite metric");
        }
        res.total_epochs += t.budget;
        t.metric = metric;
        t.status = TrialStatus::Reported;
        res.rungs[level].results.emplace_back(id, metric);
        res.ledger.push_back({LedgerEvent::Kind::Report, id, level, t.budget, metric});
    };

    for (;;) {
        bool promoted = false;
        for (std::size_t k = top; k-- > 0;) {
            auto cands = asha_promote(res.rungs[k], settings.eta);
            if (cands.empty()) continue;
            std::size_t id = cands.front();
            res.rungs[k].promoted.insert(id);
            res.trials[id].status = TrialStatus::Promoted;
            res.ledger.push_back({LedgerEvent::Kind::Promote, id, k + 1, budgets[k + 1], 0.0});
            run(id, k + 1);
            promoted = true;
            break;
        }
        if (promoted) continue;
        if (res.trials.size() >= settings.max_trials) break;
        std::size_t id = res.trials.size();
        if (strat) {
            res.trials.push_back(strat->draw(id));
        } else {
            RngStream trial_rng = rng.split(id);
            res.trials.push_back(sample_trial(space, trial_rng, id));
        }
        res.ledger.push_back({LedgerEvent::Kind::Start, id, 0, budgets[0], 0.0});
        run(id, 0);
    }

    for (auto& t : res.trials)
        if (t.rung < top) t.status = TrialStatus::Stopped;

    // Best: highest metric on the highest rung that has results.
    for (std::size_t k = budgets.size(); k-- > 0;) {
        const auto& results = res.rungs[k].results;
        if (results.empty()) continue;
        auto best = *std::min_element(results.begin(), results.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        res.best = res.trials[best.first];
        break;
    }
    return res;
}

Json search_result_to_json(const SearchResult& r)
{
    Json trials = Json::array();
    for (const auto& t : r.trials) trials.push_back(trial_json(t));
    Json rungs = Json::array();
    for (const auto& g : r.rungs) {
        Json results = Json::array();
        for (const auto& [id, m] : g.results) results.push_back({{"trial", id}, {"metric", m}});
        rungs.push_back({{"level", g.level},
                         {"budget", g.budget},
                         {"results", std::move(results)},
                         {"promoted", std::vector<std::size_t>(g.promoted.begin(), g.promoted.end())}});
    }
    Json ledger = Json::array();
    for (const auto& e : r.ledger) {
        const char* kind = e.kind == LedgerEvent::Kind::Start ? "start"
                           : e.kind == LedgerEvent::Kind::Report ? "report"
                                                                  : "promote";
        Json ev{{"event", kind}, {"trial", e.trial}, {"rung", e.rung}, {"budget", e.budget}};
        if (e.kind == LedgerEvent::Kind::Report) ev["metric"] = e.metric;
        ledger.push_back(std::move(ev));
    }
    return {{"best", trial_json(r.best)},
            {"trials", std::move(trials)},
            {"rungs", std::move(rungs)},
            {"ledger", std::move(ledger)},
            {"total_epochs", r.total_epochs}};
}

}  // namespace peftbench
