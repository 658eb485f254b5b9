#include "peftbench/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "peftbench/serialize.hpp"

namespace peftbench {

namespace fs = std::filesystem;

namespace {

const char* kCsvHeader = "method,dataset,metric,std,params,rank";

std::string fmt4(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string quoted(const std::string& s) { return Json(s).dump(); }

std::string trim(std::string_view s)
{
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? pos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_double(const std::string& s, std::size_t line, const std::string& what)
{
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw DataError("line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
    }
    return v;
}

std::size_t parse_size(const std::string& s, std::size_t line, const std::string& what)
{
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw DataError("line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
    }
    return v;
}

std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

bool is_classifier(const ExperimentConfig& cfg) { return !std::holds_alternative<DenoiserConfig>(cfg.arch); }

std::size_t arch_image_size(const ArchConfig& a)
{
    return std::visit([](const auto& c) { return c.image_size; }, a);
}

std::size_t arch_in_channels(const ArchConfig& a)
{
    return std::visit([](const auto& c) { return c.in_channels; }, a);
}

std::size_t arch_classes(const ArchConfig& a)
{
    if (auto* c = std::get_if<CnnConfig>(&a)) return c->classes;
    if (auto* v = std::get_if<VitConfig>(&a)) return v->classes;
    return 0;
}

SynthConfig source_config(const ExperimentConfig& cfg)
{
    SynthConfig s = cfg.dataset.synth;
    s.variant = SynthVariant::Source;
    s.classes = arch_classes(cfg.arch);
    s.size = cfg.pretrain.source_size;
    s.image_size = arch_image_size(cfg.arch);
    return s;
}

SynthCondConfig source_cond_config(const ExperimentConfig& cfg)
{
    SynthCondConfig s = cfg.dataset.cond;
    s.shift = 1;
    s.size = cfg.pretrain.source_size;
    return s;
}

Json dataset_ref_to_json(const DatasetRef& d)
{
    Json j{{"kind", d.kind}};
    if (!d.path.empty()) j["path"] = d.path;
    if (d.kind == "synthetic") {
        j["classes"] = d.synth.classes;
        j["size"] = d.synth.size;
        j["image_size"] = d.synth.image_size;
        j["difficulty"] = d.synth.difficulty;
        j["task"] = d.synth.task;
    } else if (d.kind == "synthetic-conditional") {
        j["cond_vocab"] = d.cond.cond_vocab;
        j["size"] = d.cond.size;
        j["image_size"] = d.cond.image_size;
        j["noise"] = d.cond.noise;
    } else {
        j["difficulty"] = d.synth.difficulty;  // used by the synthetic source task
    }
    return j;
}

DatasetRef dataset_ref_from_json(const Json& j)
{
    if (!j.is_object()) throw ConfigError("'dataset' must be a JSON object");
    DatasetRef d;
    d.kind = json_get<std::string>(j, "kind", d.kind);
    d.path = json_get<std::string>(j, "path", "");
    d.synth.classes = json_get<std::size_t>(j, "classes", d.synth.classes);
    d.synth.size = json_get<std::size_t>(j, "size", d.synth.size);
    d.synth.image_size = json_get<std::size_t>(j, "image_size", d.synth.image_size);
    d.synth.difficulty = json_get<double>(j, "difficulty", d.synth.difficulty);
    d.synth.task = json_get<std::uint64_t>(j, "task", d.synth.task);
    d.cond.cond_vocab = json_get<std::size_t>(j, "cond_vocab", d.cond.cond_vocab);
    d.cond.size = json_get<std::size_t>(j, "size", d.cond.size);
    d.cond.image_size = json_get<std::size_t>(j, "image_size", d.cond.image_size);
    d.cond.noise = json_get<double>(j, "noise", d.cond.noise);
    return d;
}

}  // namespace

std::string_view direction_name(Direction d) { return d == Direction::HigherBetter ? "higher" : "lower"; }

Direction parse_direction(std::string_view s)
{
    if (s == "higher" || s == "higher-better") return Direction::HigherBetter;
    if (s == "lower" || s == "lower-better") return Direction::LowerBetter;
    throw ConfigError("unknown direction '" + std::string(s) + "' (expected higher or lower)");
}

std::vector<int> dense_ranks(std::span<const double> values, Direction direction)
{
    std::vector<double> distinct(values.begin(), values.end());
    if (direction == Direction::HigherBetter)
        std::sort(distinct.begin(), distinct.end(), std::greater<>());
    else
        std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<int> ranks;
    ranks.reserve(values.size());
    for (double v : values) {
        auto it = direction == Direction::HigherBetter
                      ? std::lower_bound(distinct.begin(), distinct.end(), v, std::greater<>())
                      : std::lower_bound(distinct.begin(), distinct.end(), v);
        ranks.push_back(static_cast<int>(it - distinct.begin()) + 1);
    }
    return ranks;
}

double round_half_even(double x, int decimals)
{
    const double p = std::pow(10.0, decimals);
    // Snap away binary noise first so 0.785 rounds as the decimal it denotes.
    double scaled = std::round(x * p * 1e6) / 1e6;
    double r = std::nearbyint(scaled);  // default rounding mode is to-nearest-even
    return r / p;
}

RankTable rank_table(std::span<const ResultRow> input)
{
    if (input.empty()) throw DataError("rank table: no rows");
    std::vector<ResultRow> rows(input.begin(), input.end());
    RankTable t;
    t.direction = rows.front().direction;
    for (const auto& r : rows) {
        if (r.direction != t.direction) throw DataError("rank table: rows mix higher- and lower-better metrics");
        if (std::find(t.methods.begin(), t.methods.end(), r.method) == t.methods.end()) t.methods.push_back(r.method);
        if (std::find(t.datasets.begin(), t.datasets.end(), r.dataset) == t.datasets.end())
            t.datasets.push_back(r.dataset);
    }
    const std::size_t nm = t.methods.size(), nd = t.datasets.size();
    std::vector<std::vector<const ResultRow*>> grid(nd, std::vector<const ResultRow*>(nm, nullptr));
    for (const auto& r : rows) {
        auto mi = std::find(t.methods.begin(), t.methods.end(), r.method) - t.methods.begin();
        auto di = std::find(t.datasets.begin(), t.datasets.end(), r.dataset) - t.datasets.begin();
        auto& cell = grid[di][mi];
        if (cell) throw DataError("rank table: duplicate cell (" + r.method + ", " + r.dataset + ")");
        cell = &r;
    }
    for (std::size_t d = 0; d < nd; ++d)
        for (std::size_t m = 0; m < nm; ++m)
            if (!grid[d][m]) throw DataError("rank table: missing cell (" + t.methods[m] + ", " + t.datasets[d] + ")");

    t.cells.assign(nd, {});
    t.ranks.assign(nd, {});
    std::vector<long> rank_sum(nm, 0);
    std::vector<double> metric_sum(nm, 0.0);
    for (std::size_t d = 0; d < nd; ++d) {
        std::vector<double> vals(nm);
        for (std::size_t m = 0; m < nm; ++m) {
            t.cells[d].push_back(*grid[d][m]);
            vals[m] = grid[d][m]->metric;
            metric_sum[m] += vals[m];
        }
        t.ranks[d] = dense_ranks(vals, t.direction);
        for (std::size_t m = 0; m < nm; ++m) rank_sum[m] += t.ranks[d][m];
    }
    for (std::size_t m = 0; m < nm; ++m) {
        double raw = metric_sum[m] / static_cast<double>(nd);
        t.avg_metric_raw.push_back(raw);
        t.avg_metric.push_back(round_half_even(raw, 2));
        t.avg_rank.push_back(static_cast<double>(rank_sum[m]) / static_cast<double>(nd));
    }
    return t;
}

std::vector<ResultRow> pareto_front(std::span<const ResultRow> rows)
{
    const std::size_t n = rows.size();
    auto score = [&](std::size_t i) {
        return rows[i].direction == Direction::HigherBetter ? rows[i].metric : -rows[i].metric;
    };
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (rows[a].trainable_params != rows[b].trainable_params)
            return rows[a].trainable_params < rows[b].trainable_params;
        return score(a) > score(b);
    });
    std::vector<bool> keep(n, false);
    double best_cheaper = -INFINITY;  // best score among strictly cheaper rows
    for (std::size_t g = 0; g < n;) {
        std::size_t h = g;
        while (h < n && rows[order[h]].trainable_params == rows[order[g]].trainable_params) ++h;
        double top = score(order[g]);
        for (std::size_t i = g; i < h && score(order[i]) == top; ++i)
            if (top > best_cheaper) keep[order[i]] = true;
        best_cheaper = std::max(best_cheaper, top);
        g = h;
    }
    std::vector<ResultRow> out;
    for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) out.push_back(rows[i]);
    return out;
}

ReportFormat parse_report_format(std::string_view s)
{
    if (s == "csv") return ReportFormat::Csv;
    if (s == "json") return ReportFormat::Json;
    throw ConfigError("unknown report format '" + std::string(s) + "' (expected csv or json)");
}

std::string render_report(const RankTable& t, ReportFormat format)
{
    std::ostringstream os;
    if (format == ReportFormat::Csv) {
        os << kCsvHeader << '\n';
        for (std::size_t d = 0; d < t.datasets.size(); ++d)
            for (std::size_t m = 0; m < t.methods.size(); ++m) {
                const auto& c = t.cells[d][m];
                os << c.method << ',' << c.dataset << ',' << fmt4(c.metric) << ',' << fmt4(c.std) << ','
                   << c.trainable_params << ',' << t.ranks[d][m] << '\n';
            }
        return os.str();
    }
    auto names = [&](const std::vector<std::string>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + quoted(v[i]);
        return s + "]";
    };
    os << "{\n";
    os << "  \"datasets\": " << names(t.datasets) << ",\n";
    os << "  \"direction\": " << quoted(std::string(direction_name(t.direction))) << ",\n";
    os << "  \"methods\": " << names(t.methods) << ",\n";
    os << "  \"rows\": [";
    bool first = true;
    for (std::size_t d = 0; d < t.datasets.size(); ++d)
        for (std::size_t m = 0; m < t.methods.size(); ++m) {
            const auto& c = t.cells[d][m];
            os << (first ? "\n" : ",\n") << "    {\"dataset\": " << quoted(c.dataset) << ", \"fraction\": "
               << fmt4(c.fraction) << ", \"method\": " << quoted(c.method) << ", \"metric\": " << fmt4(c.metric)
               << ", \"params\": " << c.trainable_params << ", \"rank\": " << t.ranks[d][m]
               << ", \"std\": " << fmt4(c.std) << "}";
            first = false;
        }
    os << "\n  ],\n";
    os << "  \"summary\": [";
    for (std::size_t m = 0; m < t.methods.size(); ++m) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", t.avg_metric[m]);
        os << (m ? ",\n" : "\n") << "    {\"avg_metric\": " << buf << ", \"avg_rank\": " << fmt4(t.avg_rank[m])
           << ", \"method\": " << quoted(t.methods[m]) << "}";
    }
    os << "\n  ]\n}\n";
    return os.str();
}

void emit_report(const RankTable& table, ReportFormat format, const std::string& path)
{
    write_text_file(path, render_report(table, format));
}

RankTable parse_report(const std::string& text, ReportFormat format, Direction direction)
{
    if (format == ReportFormat::Csv) return rank_table(read_rows_csv(text, direction));
    Json j = parse_json(text, "report");
    Direction dir = parse_direction(json_require<std::string>(j, "direction"));
    std::vector<ResultRow> rows;
    for (const auto& r : json_require<Json>(j, "rows")) {
        ResultRow row;
        row.method = json_require<std::string>(r, "method");
        row.dataset = json_require<std::string>(r, "dataset");
        row.metric = json_require<double>(r, "metric");
        row.std = json_require<double>(r, "std");
        row.trainable_params = json_require<std::size_t>(r, "params");
        row.fraction = json_get<double>(r, "fraction", 1.0);
        row.direction = dir;
        rows.push_back(std::move(row));
    }
    return rank_table(rows);
}

std::vector<ResultRow> read_rows_csv(const std::string& text, Direction direction)
{
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    std::vector<ResultRow> rows;
    bool wide = false;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto cols = split_csv(t);
        if (header.empty()) {
            header = cols;
            if (header.size() >= 5 && header[0] == "method" && header[1] == "dataset" && header[2] == "metric" &&
                header[3] == "std" && header[4] == "params") {
                wide = false;
            } else if (header.size() >= 2 && header[0] == "dataset") {
                wide = true;
            } else {
                throw DataError("line " + std::to_string(lineno) + ": unrecognised header '" + t +
                                "' (expected " + kCsvHeader + " or dataset,<methods...>)");
            }
            continue;
        }
        if (cols.size() != header.size()) {
            throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                            " fields, got " + std::to_string(cols.size()));
        }
        if (wide) {
            for (std::size_t m = 1; m < cols.size(); ++m) {
                ResultRow r;
                r.method = header[m];
                r.dataset = cols[0];
                r.metric = parse_double(cols[m], lineno, "metric");
                r.direction = direction;
                rows.push_back(std::move(r));
            }
        } else {
            ResultRow r;
            r.method = cols[0];
            r.dataset = cols[1];
            r.metric = parse_double(cols[2], lineno, "metric");
            r.std = parse_double(cols[3], lineno, "std");
            if (r.std < 0) throw DataError("line " + std::to_string(lineno) + ": negative std");
            r.trainable_params = parse_size(cols[4], lineno, "params");
            r.direction = direction;
            rows.push_back(std::move(r));
        }
    }
    if (header.empty()) throw DataError("results CSV is empty");
    return rows;
}

Json result_row_to_json(const ResultRow& r)
{
    return {{"method", r.method},
            {"dataset", r.dataset},
            {"metric", r.metric},
            {"std", r.std},
            {"params", r.trainable_params},
            {"direction", std::string(direction_name(r.direction))},
            {"fraction", r.fraction}};
}

ResultRow result_row_from_json(const Json& j)
{
    ResultRow r;
    r.method = json_require<std::string>(j, "method");
    r.dataset = json_require<std::string>(j, "dataset");
    r.metric = json_require<double>(j, "metric");
    r.std = json_get<double>(j, "std", 0.0);
    r.trainable_params = json_get<std::size_t>(j, "params", 0);
    r.direction = parse_direction(json_get<std::string>(j, "direction", "higher"));
    r.fraction = json_get<double>(j, "fraction", 1.0);
    return r;
}

std::string series_csv(std::span<const ResultRow> rows)
{
    std::string out = "fraction,method,mean,std\n";
    for (const auto& r : rows) out += fmt4(r.fraction) + "," + r.method + "," + fmt4(r.metric) + "," + fmt4(r.std) + "\n";
    return out;
}

// ---------------------------------------------------------------------------

void validate_experiment(const ExperimentConfig& cfg)
{
    if (cfg.schema != 1) throw ConfigError("unsupported experiment schema " + std::to_string(cfg.schema));
    validate_peft_spec(cfg.peft);
    validate_train_config(cfg.train);
    const Arch arch = std::visit(
        [](const auto& c) {
            using C = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<C, CnnConfig>) return Arch::MiniCnn;
            else if constexpr (std::is_same_v<C, VitConfig>) return Arch::MiniVit;
            else return Arch::MiniDenoiser;
        },
        cfg.arch);
    if (!method_supports(cfg.peft.method, arch)) {
        throw IncompatibleError("method '" + std::string(method_name(cfg.peft.method)) + "' is not applicable to " +
                                std::string(arch_name(arch)));
    }
    if (!(cfg.fraction > 0.0 && cfg.fraction <= 1.0))
        throw ConfigError("fraction must lie in (0, 1], got " + std::to_string(cfg.fraction));
    if (cfg.seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (cfg.pretrain.epochs < 1) throw ConfigError("pretrain.epochs must be >= 1");
    const auto& k = cfg.dataset.kind;
    if (is_classifier(cfg)) {
        if (k != "synthetic" && k != "image-folder" && k != "csv")
            throw ConfigError("classification experiments need a synthetic, image-folder or csv dataset, got '" + k + "'");
        if (k == "synthetic" && cfg.dataset.synth.image_size != arch_image_size(cfg.arch))
            throw ConfigError("dataset image_size " + std::to_string(cfg.dataset.synth.image_size) +
                              " does not match the model's " + std::to_string(arch_image_size(cfg.arch)));
        if (k != "synthetic" && cfg.dataset.path.empty()) throw ConfigError("dataset kind '" + k + "' needs a path");
    } else {
        if (k != "synthetic-conditional")
            throw ConfigError("generative experiments need a synthetic-conditional dataset, got '" + k + "'");
        const auto& d = std::get<DenoiserConfig>(cfg.arch);
        validate_diffusion_config(cfg.diffusion);
        if (d.image_size != cfg.dataset.cond.image_size || d.image_size != cfg.diffusion.image_size)
            throw ConfigError("image_size differs between model, dataset and diffusion settings");
        if (d.cond_vocab != cfg.dataset.cond.cond_vocab || d.cond_vocab != cfg.diffusion.cond_vocab)
            throw ConfigError("cond_vocab differs between model, dataset and diffusion settings");
        if (cfg.fd_samples <= FeatureNet::kOut)
            throw ConfigError("fd_samples must exceed the feature dimension " + std::to_string(FeatureNet::kOut));
    }
}

Json experiment_to_json(const ExperimentConfig& cfg)
{
    Json j{{"schema", cfg.schema},
           {"name", cfg.name},
           {"arch", arch_config_to_json(cfg.arch)},
           {"peft", peft_spec_to_json(cfg.peft)},
           {"train", train_config_to_json(cfg.train)},
           {"dataset", dataset_ref_to_json(cfg.dataset)},
           {"fraction", cfg.fraction},
           {"seeds", cfg.seeds},
           {"seed", cfg.seed},
           {"pretrain",
            {{"epochs", cfg.pretrain.epochs},
             {"source_size", cfg.pretrain.source_size},
             {"learning_rate", cfg.pretrain.learning_rate},
             {"batch_size", cfg.pretrain.batch_size}}}};
    if (!is_classifier(cfg)) {
        j["diffusion"] = diffusion_config_to_json(cfg.diffusion);
        j["fd_samples"] = cfg.fd_samples;
    }
    return j;
}

ExperimentConfig experiment_from_json(const Json& j)
{
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    ExperimentConfig cfg;
    cfg.schema = json_get<int>(j, "schema", 1);
    if (cfg.schema != 1) throw ConfigError("unsupported experiment schema " + std::to_string(cfg.schema));
    cfg.name = json_get<std::string>(j, "name", cfg.name);
    if (j.contains("arch")) cfg.arch = arch_config_from_json(j.at("arch"));
    cfg.peft = peft_spec_from_json(json_require<Json>(j, "peft"));
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    if (j.contains("dataset")) {
        cfg.dataset = dataset_ref_from_json(j.at("dataset"));
    } else if (!is_classifier(cfg)) {
        cfg.dataset.kind = "synthetic-conditional";
    }
    cfg.fraction = json_get<double>(j, "fraction", cfg.fraction);
    cfg.seeds = json_get<std::vector<std::uint64_t>>(j, "seeds", cfg.seeds);
    cfg.seed = json_get<std::uint64_t>(j, "seed", cfg.seed);
    if (j.contains("pretrain")) {
        const auto& p = j.at("pretrain");
        cfg.pretrain.epochs = json_get<std::size_t>(p, "epochs", cfg.pretrain.epochs);
        cfg.pretrain.source_size = json_get<std::size_t>(p, "source_size", cfg.pretrain.source_size);
        cfg.pretrain.learning_rate = json_get<double>(p, "learning_rate", cfg.pretrain.learning_rate);
        cfg.pretrain.batch_size = json_get<std::size_t>(p, "batch_size", cfg.pretrain.batch_size);
    }
    if (j.contains("diffusion")) cfg.diffusion = diffusion_config_from_json(j.at("diffusion"));
    cfg.fd_samples = json_get<std::size_t>(j, "fd_samples", cfg.fd_samples);
    validate_experiment(cfg);
    return cfg;
}

Dataset load_dataset(const ExperimentConfig& cfg)
{
    const auto& d = cfg.dataset;
    RngStream rng(cfg.seed, 0xda7a);
    Dataset ds;
    if (d.kind == "synthetic") {
        SynthConfig s = d.synth;
        s.variant = SynthVariant::Target;
        ds = gen_synth_classification(s, rng);
    } else if (d.kind == "synthetic-conditional") {
        ds = gen_synth_conditional(d.cond, rng);
    } else if (d.kind == "image-folder" || d.kind == "csv") {
        ds = ingest(d.path, parse_ingest_format(d.kind), rng);
    } else {
        throw ConfigError("unknown dataset kind '" + d.kind + "'");
    }
    if (is_classifier(cfg)) {
        const Shape want{arch_in_channels(cfg.arch), arch_image_size(cfg.arch), arch_image_size(cfg.arch)};
        if (ds.item_shape != want) {
            throw DataError("dataset '" + ds.name + "' has items of shape " + shape_str(ds.item_shape) +
                            " but the model expects " + shape_str(want));
        }
    }
    return ds;
}

std::string pretrain_key(const ExperimentConfig& cfg)
{
    Json j{{"arch", arch_config_to_json(cfg.arch)},
           {"seed", cfg.seed},
           {"epochs", cfg.pretrain.epochs},
           {"source_size", cfg.pretrain.source_size},
           {"learning_rate", cfg.pretrain.learning_rate},
           {"batch_size", cfg.pretrain.batch_size}};
    if (is_classifier(cfg)) {
        j["difficulty"] = cfg.dataset.synth.difficulty;
    } else {
        j["noise"] = cfg.dataset.cond.noise;
        j["diffusion"] = diffusion_config_to_json(cfg.diffusion);
    }
    return j.dump();
}

ModelGraph pretrain_model(const ExperimentConfig& cfg)
{
    ModelGraph model = build_model(cfg.arch, RngStream(cfg.seed, 0x1417));
    PeftSpec full;
    full.method = Method::FullFt;
    AdaptedModel adapted = make_strategy(model, full);
    TrainConfig tc;
    tc.learning_rate = cfg.pretrain.learning_rate;
    tc.optimizer = OptimizerKind::Adam;
    tc.batch_size = cfg.pretrain.batch_size;
    tc.max_epochs = cfg.pretrain.epochs;
    tc.patience = cfg.pretrain.epochs;
    tc.seed = cfg.seed;
    if (is_classifier(cfg)) {
        Dataset src = gen_synth_classification(source_config(cfg), RngStream(cfg.seed, 0x5005));
        train_loop(adapted, src, tc);
    } else {
        Dataset src = gen_synth_conditional(source_cond_config(cfg), RngStream(cfg.seed, 0x5005));
        diffusion_train(adapted, src, cfg.diffusion, tc);
    }
    ModelGraph out = adapted.base.clone();
    for (auto& p : out.params) {
        p.trainable = true;
        p.tensor.set_requires_grad(false);
        p.tensor.drop_grad();
    }
    return out;
}

ModelGraph PretrainCache::get(const ExperimentConfig& cfg)
{
    const std::string key = pretrain_key(cfg);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = models_.find(key);
    if (it == models_.end()) {
        ModelGraph model;
        fs::path file;
        if (!dir_.empty()) {
            char name[40];
            std::snprintf(name, sizeof name, "pretrain-%016llx.json", static_cast<unsigned long long>(fnv1a(key)));
            file = fs::path(dir_) / name;
        }
        if (!file.empty() && fs::exists(file)) {
            model = load_checkpoint(file.string());
        } else {
            model = pretrain_model(cfg);
            ++builds_;
            if (!file.empty()) {
                fs::create_directories(dir_);
                save_checkpoint(model, file.string());
            }
        }
        it = models_.emplace(key, std::move(model)).first;
    }
    return it->second.clone();
}

std::size_t PretrainCache::size() const
{
    std::lock_guard<std::mutex> lock(mu_);
    return models_.size();
}

std::uint64_t repeat_seed(std::uint64_t base, std::uint64_t s) { return splitmix64(base * 0x9e3779b97f4a7c15ULL + s); }

ResultRow run_experiment(const ExperimentConfig& cfg, PretrainCache* cache)
{
    validate_experiment(cfg);
    const std::string ctx = "experiment '" + cfg.name + "' (" + std::string(method_name(cfg.peft.method)) + ")";
    try {
        Dataset full = load_dataset(cfg);
        Dataset ds = cfg.fraction < 1.0 ? subsample_fraction(full, cfg.fraction, RngStream(cfg.seed, 0x5ab)) : full;
        ModelGraph theta0 = cache ? cache->get(cfg) : pretrain_model(cfg);
        if (is_classifier(cfg)) reset_head(theta0, ds.num_classes);

        std::vector<double> metrics;
        std::size_t params = 0;
        for (std::uint64_t s : cfg.seeds) {
            const std::uint64_t run_seed = repeat_seed(cfg.seed, s);
            PeftSpec spec = cfg.peft;
            spec.init_seed = run_seed;
            AdaptedModel adapted = make_strategy(theta0, spec);
            TrainConfig tc = cfg.train;
            tc.seed = run_seed;
            if (is_classifier(cfg)) {
                metrics.push_back(train_loop(adapted, ds, tc).test_metric);
            } else {
                diffusion_train(adapted, ds, cfg.diffusion, tc);
                std::vector<std::size_t> real_idx = ds.val;
                real_idx.insert(real_idx.end(), ds.test.begin(), ds.test.end());
                std::vector<int> conds = ds.labels_of(real_idx);
                ImageBatch gen = diffusion_sample(adapted, conds, cfg.fd_samples, cfg.diffusion, RngStream(run_seed, 0x5a3));
                FeatureNet net(ds.item_size());
                metrics.push_back(frechet_distance(net.features(dataset_images(ds, real_idx)), net.features(gen)).fd);
            }
            params = trainable_count(adapted).trainable;
        }
        MeanStd ms = mean_std(metrics);
        ResultRow row;
        row.method = std::string(method_name(cfg.peft.method));
        row.dataset = ds.name;
        row.metric = ms.mean;
        row.std = ms.std;
        row.trainable_params = params;
        row.direction = is_classifier(cfg) ? Direction::HigherBetter : Direction::LowerBetter;
        row.fraction = cfg.fraction;
        return row;
    } catch (const ConfigError& e) {
        throw ConfigError(ctx + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(ctx + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(ctx + ": " + e.what());
    }
}

std::vector<double> default_fractions() { return {1.0, 0.5, 0.2, 0.1, 0.05, 0.01}; }

std::vector<ResultRow> sweep_volume(const ExperimentConfig& cfg, std::span<const Method> methods,
                                    std::span<const double> fractions, PretrainCache* cache, std::size_t jobs)
{
    if (methods.empty()) throw ConfigError("sweep: no methods given");
    if (fractions.empty()) throw ConfigError("sweep: no fractions given");
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] > 0.0 && fractions[i] <= 1.0))
            throw ConfigError("sweep: fraction " + std::to_string(fractions[i]) + " outside (0, 1]");
        if (i > 0 && !(fractions[i] < fractions[i - 1]))
            throw ConfigError("sweep: fractions must be strictly descending");
    }
    std::vector<ExperimentConfig> cells;
    for (double p : fractions)
        for (Method m : methods) {
            ExperimentConfig c = cfg;
            c.peft.method = m;
            c.fraction = p;
            validate_experiment(c);
            cells.push_back(std::move(c));
        }

    PretrainCache local;
    PretrainCache* shared = cache ? cache : &local;
    shared->get(cfg);  // warm once so workers never pre-train concurrently

    std::vector<ResultRow> out(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    std::size_t workers = std::max<std::size_t>(1, std::min(jobs, cells.size()));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next++) < cells.size();) {
            try {
                out[i] = run_experiment(cells[i], shared);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

std::string adapted_checkpoint_json(const AdaptedModel& adapted)
{
    Json injected = Json::array();
    for (const auto& p : adapted.injected)
        injected.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}});
    Json j{{"format", "peftbench-adapted"},
           {"version", 1},
           {"peft", peft_spec_to_json(adapted.spec)},
           {"merged", adapted.merged},
           {"base", parse_json(checkpoint_json(adapted.base), "checkpoint")},
           {"injected", std::move(injected)}};
    return j.dump();
}

AdaptedModel adapted_from_checkpoint_json(const std::string& text)
{
    Json j = parse_json(text, "adapted checkpoint");
    if (json_get<std::string>(j, "format", "") != "peftbench-adapted")
        throw DataError("not an adapted-model checkpoint (format field missing or wrong)");
    if (json_get<int>(j, "version", 0) != 1) throw DataError("unsupported adapted checkpoint version");
    ModelGraph base = checkpoint_from_json(json_require<Json>(j, "base").dump());
    PeftSpec spec = peft_spec_from_json(json_require<Json>(j, "peft"));
    bool merged = json_get<bool>(j, "merged", false);
    AdaptedModel adapted = make_strategy(base, spec);
    if (merged) {
        adapted.injected.clear();
        adapted.merged = true;
    }
    for (const auto& e : json_require<Json>(j, "injected")) {
        auto name = json_require<std::string>(e, "name");
        if (!adapted.has_injected(name)) throw DataError("adapted checkpoint: unknown injected tensor '" + name + "'");
        auto& p = adapted.injected_param(name);
        auto shape = json_require<Shape>(e, "shape");
        auto values = json_require<std::vector<double>>(e, "values");
        if (shape != p.tensor.shape() || values.size() != p.tensor.numel())
            throw DataError("adapted checkpoint: shape mismatch for '" + name + "'");
        std::copy(values.begin(), values.end(), p.tensor.mutable_values().begin());
    }
    return adapted;
}

}  // namespace peftbench
