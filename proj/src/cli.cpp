#include "peftbench/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "peftbench/bench.hpp"
#include "peftbench/hpo.hpp"
#include "peftbench/serialize.hpp"

namespace peftbench {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr const char* kSynopsis =
    "usage: peftbench <verb> [options]\n"
    "verbs: count-params, train, sweep, hpo, gen-train, gen-eval, rank, pareto, ingest-check\n"
    "run 'peftbench --help' for every flag\n";

struct Options {
    std::optional<std::uint64_t> seed;
    bool json = false;
    std::string out;
    std::size_t jobs = 1;
    std::string config;
    std::string cache_dir;

    std::optional<std::string> arch;
    std::optional<std::string> method;
    std::optional<std::size_t> rank;
    std::optional<double> alpha;
    std::optional<std::size_t> bottleneck;
    std::optional<double> scale;
    std::optional<std::size_t> kernel;
    std::optional<std::string> filter;

    std::optional<double> fraction;
    std::optional<double> lr;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> patience;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> pretrain_epochs;
    std::string seeds;

    std::string fractions;
    std::string methods;

    std::size_t trials = 27;
    std::size_t eta = 3;
    std::size_t min_budget = 2;
    std::size_t max_budget = 18;
    std::string space;

    std::string checkpoint;
    std::optional<std::size_t> samples;
    std::string export_dir;
    std::string real;
    std::string gen;

    std::string input;
    std::string direction = "higher";
    std::string emit;
    std::string dataset;

    std::string path;
    std::string format;
};

std::vector<std::string> split_list(const std::string& text, const std::string& what)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = text.find(',', start);
        std::string tok = text.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
        if (tok.empty()) throw UsageError("malformed " + what + " list '" + text + "'");
        out.push_back(tok);
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

double to_double(const std::string& s, const std::string& what)
{
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
        throw UsageError("bad " + what + " value '" + s + "'");
    return v;
}

std::uint64_t to_u64(const std::string& s, const std::string& what)
{
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw UsageError("bad " + what + " value '" + s + "'");
    return v;
}

// Flag values are usage errors when they fail to parse.
template <class F>
auto flag_value(F&& f)
{
    try {
        return f();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
}

std::vector<double> parse_fractions(const std::string& text)
{
    std::vector<double> out;
    for (const auto& tok : split_list(text, "fraction")) out.push_back(to_double(tok, "fraction"));
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(out[i] > 0.0 && out[i] <= 1.0))
            throw UsageError("fraction " + split_list(text, "fraction")[i] + " is outside (0, 1] in '" + text + "'");
        if (i > 0 && !(out[i] < out[i - 1]))
            throw UsageError("fractions must be strictly descending: '" + text + "'");
    }
    return out;
}

std::optional<std::uint64_t> env_seed()
{
    const char* v = std::getenv("PEFTBENCH_SEED");
    if (!v || !*v) return std::nullopt;
    return to_u64(v, "PEFTBENCH_SEED");
}

// --seed, then PEFTBENCH_SEED, then the config file's value.
std::uint64_t resolve_seed(const Options& o, std::uint64_t file_seed)
{
    if (o.seed) return *o.seed;
    if (auto e = env_seed()) return *e;
    return file_seed;
}

void apply_peft_flags(const Options& o, PeftSpec& spec)
{
    if (o.method) spec.method = flag_value([&] { return parse_method(*o.method); });
    if (o.rank) spec.rank = *o.rank;
    if (o.alpha) spec.alpha = *o.alpha;
    if (o.bottleneck) spec.bottleneck = *o.bottleneck;
    if (o.scale) spec.scale = *o.scale;
    if (o.kernel) spec.kernel = *o.kernel;
    if (o.filter) spec.filter = *o.filter;
}

ExperimentConfig load_experiment(const Options& o, bool need_method)
{
    ExperimentConfig cfg;
    bool from_file = !o.config.empty();
    if (from_file) {
        cfg = experiment_from_json(parse_json(read_text_file(o.config), o.config));
    } else if (need_method && !o.method) {
        throw UsageError("either --config or --method is required");
    }
    if (o.arch) {
        cfg.arch = flag_value([&] { return arch_config_from_json(Json{{"arch", *o.arch}}); });
        if (std::holds_alternative<DenoiserConfig>(cfg.arch) && cfg.dataset.kind == "synthetic")
            cfg.dataset.kind = "synthetic-conditional";
    }
    apply_peft_flags(o, cfg.peft);
    if (o.fraction) cfg.fraction = *o.fraction;
    if (o.lr) cfg.train.learning_rate = *o.lr;
    if (o.epochs) {
        cfg.train.max_epochs = *o.epochs;
        if (!o.patience) cfg.train.patience = std::min(cfg.train.patience, *o.epochs);
    }
    if (o.patience) cfg.train.patience = *o.patience;
    if (o.batch_size) cfg.train.batch_size = *o.batch_size;
    if (o.pretrain_epochs) cfg.pretrain.epochs = *o.pretrain_epochs;
    if (!o.seeds.empty()) {
        cfg.seeds.clear();
        for (const auto& tok : split_list(o.seeds, "seed")) cfg.seeds.push_back(to_u64(tok, "seed"));
    }
    cfg.seed = resolve_seed(o, cfg.seed);
    if (o.fraction && !(*o.fraction > 0.0 && *o.fraction <= 1.0))
        throw UsageError("--fraction must lie in (0, 1]");
    validate_experiment(cfg);
    return cfg;
}

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string row_csv(std::span<const ResultRow> rows)
{
    std::string s = "method,dataset,metric,std,params,fraction\n";
    for (const auto& r : rows)
        s += r.method + "," + r.dataset + "," + fmt("%.4f", r.metric) + "," + fmt("%.4f", r.std) + "," +
             std::to_string(r.trainable_params) + "," + fmt("%.4f", r.fraction) + "\n";
    return s;
}

std::string rows_json(std::span<const ResultRow> rows)
{
    Json a = Json::array();
    for (const auto& r : rows) a.push_back(result_row_to_json(r));
    return a.dump(2) + "\n";
}

class Runner {
public:
    Runner(const Options& o, std::ostream& out) : o_(o), out_(out), cache_(o.cache_dir) {}

    void emit(const std::string& text)
    {
        if (o_.out.empty())
            out_ << text;
        else
            write_text_file(o_.out, text);
    }

    void count_params()
    {
        ArchConfig arch = VitConfig{};
        PeftSpec spec;
        std::uint64_t seed = resolve_seed(o_, 0);
        if (!o_.config.empty()) {
            auto cfg = experiment_from_json(parse_json(read_text_file(o_.config), o_.config));
            arch = cfg.arch;
            spec = cfg.peft;
            seed = resolve_seed(o_, cfg.seed);
        } else if (!o_.method) {
            throw UsageError("count-params needs --method or --config");
        }
        if (o_.arch) arch = flag_value([&] { return arch_config_from_json(Json{{"arch", *o_.arch}}); });
        apply_peft_flags(o_, spec);
        spec.init_seed = seed;
        validate_peft_spec(spec);
        ModelGraph model = build_model(arch, RngStream(seed, 0x1417));
        if (!method_supports(spec.method, model.arch)) {
            throw IncompatibleError("method '" + std::string(method_name(spec.method)) + "' is not applicable to " +
                                    std::string(arch_name(model.arch)));
        }
        AdaptedModel adapted = make_strategy(model, spec);
        TrainableCount c = trainable_count(adapted);
        if (o_.json) {
            Json j{{"arch", std::string(arch_name(model.arch))},
                   {"method", std::string(method_name(spec.method))},
                   {"trainable", c.trainable},
                   {"total", c.total},
                   {"ratio", c.ratio}};
            emit(j.dump(2) + "\n");
        } else {
            emit("arch " + std::string(arch_name(model.arch)) + "\nmethod " + std::string(method_name(spec.method)) +
                 "\ntrainable " + std::to_string(c.trainable) + "\ntotal " + std::to_string(c.total) + "\nratio " +
                 fmt("%.6f", c.ratio) + "\n");
        }
    }

    void train()
    {
        auto cfg = load_experiment(o_, true);
        ResultRow row = run_experiment(cfg, &cache_);
        emit(o_.json ? rows_json({&row, 1}) : row_csv({&row, 1}));
    }

    void sweep()
    {
        std::vector<double> fractions = o_.fractions.empty() ? default_fractions() : parse_fractions(o_.fractions);
        auto cfg = load_experiment(o_, true);
        std::vector<Method> methods;
        if (o_.methods.empty())
            methods.push_back(cfg.peft.method);
        else
            for (const auto& m : split_list(o_.methods, "method"))
                methods.push_back(flag_value([&] { return parse_method(m); }));
        if (o_.jobs < 1) throw UsageError("--jobs must be >= 1");
        auto rows = sweep_volume(cfg, methods, fractions, &cache_, o_.jobs);
        emit(o_.json ? rows_json(rows) : series_csv(rows));
    }

    void hpo()
    {
        auto cfg = load_experiment(o_, true);
        SearchSpace space;
        if (o_.space.empty())
            space.dims["learning_rate"] = SearchDim::log_uniform(1e-4, 3e-2);
        else
            space = search_space_from_json(parse_json(read_text_file(o_.space), o_.space));
        SearchSettings settings{o_.trials, o_.eta, o_.min_budget, o_.max_budget, cfg.seed};
        flag_value([&] { return rung_budgets(settings); });

        Dataset full = load_dataset(cfg);
        Dataset ds = cfg.fraction < 1.0 ? subsample_fraction(full, cfg.fraction, RngStream(cfg.seed, 0x5ab)) : full;
        ModelGraph theta0 = cache_.get(cfg);
        const bool classifier = !std::holds_alternative<DenoiserConfig>(cfg.arch);
        if (classifier) reset_head(theta0, ds.num_classes);

        Objective objective = [&](const Trial& trial, std::size_t budget) {
            PeftSpec spec = cfg.peft;
            TrainConfig tc = cfg.train;
            const auto& c = trial.config;
            if (c.count("learning_rate")) tc.learning_rate = config_number(c, "learning_rate");
            if (c.count("weight_decay")) tc.weight_decay = config_number(c, "weight_decay");
            if (c.count("batch_size")) tc.batch_size = static_cast<std::size_t>(config_number(c, "batch_size"));
            if (c.count("optimizer")) tc.optimizer = parse_optimizer(config_string(c, "optimizer"));
            if (c.count("rank")) spec.rank = static_cast<std::size_t>(config_number(c, "rank"));
            if (c.count("alpha")) spec.alpha = config_number(c, "alpha");
            if (c.count("bottleneck")) spec.bottleneck = static_cast<std::size_t>(config_number(c, "bottleneck"));
            if (c.count("scale")) spec.scale = config_number(c, "scale");
            tc.max_epochs = budget;
            tc.patience = budget;
            tc.seed = repeat_seed(cfg.seed, trial.id);
            spec.init_seed = tc.seed;
            AdaptedModel adapted = make_strategy(theta0, spec);
            TrainReport rep = classifier ? train_loop(adapted, ds, tc) : diffusion_train(adapted, ds, cfg.diffusion, tc);
            return rep.best_val_metric;
        };
        SearchResult res = run_search(space, objective, settings);
        if (o_.json) {
            emit(search_result_to_json(res).dump(2) + "\n");
            return;
        }
        std::string s = "best_trial " + std::to_string(res.best.id) + "\nbest_metric " +
                        fmt("%.6f", res.best.metric.value_or(0.0)) + "\n";
        for (const auto& [k, v] : res.best.config) {
            s += k + " ";
            s += std::holds_alternative<double>(v) ? fmt("%.6g", std::get<double>(v)) : std::get<std::string>(v);
            s += "\n";
        }
        s += "trials " + std::to_string(res.trials.size()) + "\ntotal_epochs " + std::to_string(res.total_epochs) + "\n";
        emit(s);
    }

    void gen_train()
    {
        if (o_.out.empty()) throw UsageError("gen-train needs --out for the adapted checkpoint");
        auto cfg = load_experiment(o_, true);
        if (!std::holds_alternative<DenoiserConfig>(cfg.arch))
            throw UsageError("gen-train needs a mini-denoiser experiment");
        Dataset full = load_dataset(cfg);
        Dataset ds = cfg.fraction < 1.0 ? subsample_fraction(full, cfg.fraction, RngStream(cfg.seed, 0x5ab)) : full;
        ModelGraph theta0 = cache_.get(cfg);
        PeftSpec spec = cfg.peft;
        TrainConfig tc = cfg.train;
        tc.seed = repeat_seed(cfg.seed, cfg.seeds.front());
        spec.init_seed = tc.seed;
        AdaptedModel adapted = make_strategy(theta0, spec);
        TrainReport rep = diffusion_train(adapted, ds, cfg.diffusion, tc);
        write_text_file(o_.out, adapted_checkpoint_json(adapted));
        if (o_.json)
            out_ << train_report_to_json(rep).dump(2) << "\n";
        else
            out_ << curve_csv(rep);
    }

    void gen_eval()
    {
        FDResult r;
        if (!o_.real.empty() || !o_.gen.empty()) {
            if (o_.real.empty() || o_.gen.empty()) throw UsageError("gen-eval needs both --real and --gen");
            ImageBatch a = read_images_csv(o_.real), b = read_images_csv(o_.gen);
            if (a.item_size() != b.item_size()) throw DataError("--real and --gen images differ in size");
            FeatureNet net(a.item_size(), resolve_seed(o_, 0xfea7));
            r = frechet_distance(net.features(a), net.features(b));
        } else {
            if (o_.checkpoint.empty() || o_.config.empty())
                throw UsageError("gen-eval needs --checkpoint with --config, or --real with --gen");
            auto cfg = load_experiment(o_, false);
            AdaptedModel adapted = adapted_from_checkpoint_json(read_text_file(o_.checkpoint));
            Dataset ds = load_dataset(cfg);
            std::vector<std::size_t> idx = ds.val;
            idx.insert(idx.end(), ds.test.begin(), ds.test.end());
            auto conds = ds.labels_of(idx);
            ImageBatch gen = diffusion_sample(adapted, conds, o_.samples.value_or(cfg.fd_samples), cfg.diffusion,
                                              RngStream(cfg.seed, 0x5a3));
            if (!o_.export_dir.empty()) export_pgm(gen, o_.export_dir, "sample");
            FeatureNet net(ds.item_size());
            r = frechet_distance(net.features(dataset_images(ds, idx)), net.features(gen));
        }
        if (o_.json)
            emit(fd_result_to_json(r).dump(2) + "\n");
        else
            emit("fd " + fmt("%.6f", r.fd) + "\nn_real " + std::to_string(r.n_real) + "\nn_gen " +
                 std::to_string(r.n_gen) + "\n");
    }

    void rank()
    {
        Direction dir = flag_value([&] { return parse_direction(o_.direction); });
        auto rows = read_rows_csv(read_text_file(o_.input), dir);
        RankTable t = rank_table(rows);
        if (!o_.emit.empty()) {
            emit(render_report(t, flag_value([&] { return parse_report_format(o_.emit); })));
            return;
        }
        if (o_.json) {
            emit(render_report(t, ReportFormat::Json));
            return;
        }
        std::string m = "methods", a = "avg_metric", r = "avg_rank";
        for (std::size_t i = 0; i < t.methods.size(); ++i) {
            m += "," + t.methods[i];
            a += "," + fmt("%.2f", t.avg_metric[i]);
            r += "," + fmt("%g", t.avg_rank[i]);
        }
        emit(m + "\n" + a + "\n" + r + "\n");
    }

    void pareto()
    {
        Direction dir = flag_value([&] { return parse_direction(o_.direction); });
        auto rows = read_rows_csv(read_text_file(o_.input), dir);
        std::vector<ResultRow> points;
        if (!o_.dataset.empty()) {
            for (const auto& r : rows)
                if (r.dataset == o_.dataset) points.push_back(r);
            if (points.empty()) throw DataError("no rows for dataset '" + o_.dataset + "'");
        } else {
            // Average each method over datasets, as in a performance-vs-size plot.
            RankTable t = rank_table(rows);
            for (std::size_t m = 0; m < t.methods.size(); ++m) {
                ResultRow p = t.cells.front()[m];
                p.dataset = "mean";
                p.metric = t.avg_metric_raw[m];
                p.std = 0.0;
                points.push_back(p);
            }
        }
        auto front = pareto_front(points);
        if (o_.json) {
            emit(rows_json(front));
            return;
        }
        std::string s = "method,dataset,metric,params\n";
        for (const auto& r : front)
            s += r.method + "," + r.dataset + "," + fmt("%.4f", r.metric) + "," + std::to_string(r.trainable_params) + "\n";
        emit(s);
    }

    void ingest_check()
    {
        IngestFormat f = flag_value([&] { return parse_ingest_format(o_.format); });
        Dataset ds = ingest(o_.path, f, RngStream(resolve_seed(o_, 0), 0xda7a));
        auto counts = ds.class_counts(all_indices(ds));
        char hash[24];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(ds.hash()));
        if (o_.json) {
            Json j{{"name", ds.name},
                   {"provenance", std::string(provenance_name(ds.provenance))},
                   {"items", ds.size()},
                   {"classes", ds.num_classes},
                   {"item_shape", ds.item_shape},
                   {"train", ds.train.size()},
                   {"val", ds.val.size()},
                   {"test", ds.test.size()},
                   {"class_counts", counts},
                   {"hash", hash}};
            emit(j.dump(2) + "\n");
            return;
        }
        std::string s = "name " + ds.name + "\nprovenance " + std::string(provenance_name(ds.provenance)) + "\nitems " +
                        std::to_string(ds.size()) + "\nclasses " + std::to_string(ds.num_classes) + "\nitem_shape " +
                        shape_str(ds.item_shape) + "\nsplit " + std::to_string(ds.train.size()) + "/" +
                        std::to_string(ds.val.size()) + "/" + std::to_string(ds.test.size()) + "\nclass_counts";
        for (auto c : counts) s += " " + std::to_string(c);
        s += "\nhash " + std::string(hash) + "\n";
        emit(s);
    }

private:
    static std::vector<std::size_t> all_indices(const Dataset& ds)
    {
        std::vector<std::size_t> idx(ds.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return idx;
    }

    static ImageBatch read_images_csv(const std::string& path)
    {
        std::istringstream in(read_text_file(path));
        std::string line;
        ImageBatch b;
        std::size_t cols = 0, lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto toks = split_list(line, path + " line " + std::to_string(lineno));
            if (cols == 0) {
                cols = toks.size();
                continue;
            }
            if (toks.size() != cols)
                throw DataError(path + " line " + std::to_string(lineno) + ": expected " + std::to_string(cols) + " values");
            for (const auto& t : toks) {
                double v = 0.0;
                auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
                if (ec != std::errc() || ptr != t.data() + t.size())
                    throw DataError(path + " line " + std::to_string(lineno) + ": bad value '" + t + "'");
                b.values.push_back(v);
            }
            ++b.n;
        }
        auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(cols))));
        if (cols == 0 || side * side != cols) throw DataError(path + ": header does not describe a square image");
        b.size = side;
        return b;
    }

    const Options& o_;
    std::ostream& out_;
    PretrainCache cache_;
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    Options o;
    CLI::App app{"PEFT benchmark harness: adapters, training, search, generation and reporting", "peftbench"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--seed", o.seed, "Base seed for every RNG stream (fallback: PEFTBENCH_SEED)");
    app.add_flag("--json", o.json, "Write JSON instead of text");
    app.add_option("--out", o.out, "Write results to this file instead of stdout");
    app.add_option("--jobs", o.jobs, "Concurrent grid cells (default 1)");

    auto model_flags = [&](CLI::App* c) {
        c->add_option("--config", o.config, "Experiment config (JSON, schema 1)");
        c->add_option("--arch", o.arch, "mini-cnn | mini-vit | mini-denoiser");
        c->add_option("--method", o.method, "PEFT method name");
        c->add_option("--rank", o.rank, "LoRA rank");
        c->add_option("--alpha", o.alpha, "LoRA alpha (default: rank)");
        c->add_option("--bottleneck", o.bottleneck, "AdaptFormer bottleneck width");
        c->add_option("--scale", o.scale, "AdaptFormer branch scale");
        c->add_option("--kernel", o.kernel, "TSA adapter kernel size (1 or 3)");
        c->add_option("--filter", o.filter, "SV-Diff layer filter");
    };
    auto train_flags = [&](CLI::App* c) {
        model_flags(c);
        c->add_option("--fraction", o.fraction, "Training-set fraction in (0, 1]");
        c->add_option("--lr", o.lr, "Learning rate");
        c->add_option("--epochs", o.epochs, "Maximum epochs");
        c->add_option("--patience", o.patience, "Early-stopping patience");
        c->add_option("--batch-size", o.batch_size, "Batch size");
        c->add_option("--pretrain-epochs", o.pretrain_epochs, "Epochs of source pre-training");
        c->add_option("--seeds", o.seeds, "Comma-separated repeat seeds");
        c->add_option("--cache-dir", o.cache_dir, "Directory for pre-trained checkpoints");
    };

    auto* count = app.add_subcommand("count-params", "Trainable and total parameter counts for a method");
    model_flags(count);
    auto* train = app.add_subcommand("train", "Run one experiment over its seeds and print the result row");
    train_flags(train);
    auto* sweep = app.add_subcommand("sweep", "Data-volume sweep; prints fraction,method,mean,std");
    train_flags(sweep);
    sweep->add_option("--fractions", o.fractions, "Descending fractions, e.g. 1,0.5,0.2,0.1,0.05,0.01");
    sweep->add_option("--methods", o.methods, "Comma-separated methods (default: the config's)");
    auto* hpo = app.add_subcommand("hpo", "Asynchronous successive-halving search");
    train_flags(hpo);
    hpo->add_option("--space", o.space, "Search space JSON (default: log-uniform learning_rate)");
    hpo->add_option("--trials", o.trials, "Number of sampled trials");
    hpo->add_option("--eta", o.eta, "Reduction factor");
    hpo->add_option("--min-budget", o.min_budget, "Epochs at the base rung");
    hpo->add_option("--max-budget", o.max_budget, "Epochs at the top rung");
    auto* gtrain = app.add_subcommand("gen-train", "Fine-tune the denoiser and write an adapted checkpoint to --out");
    train_flags(gtrain);
    auto* geval = app.add_subcommand("gen-eval", "Fréchet distance of samples or of two image CSVs");
    train_flags(geval);
    geval->add_option("--checkpoint", o.checkpoint, "Adapted checkpoint from gen-train");
    geval->add_option("--samples", o.samples, "Number of generated images");
    geval->add_option("--export-dir", o.export_dir, "Write generated images as PGM files");
    geval->add_option("--real", o.real, "Reference image CSV (p0..pK)");
    geval->add_option("--gen", o.gen, "Generated image CSV (p0..pK)");
    auto* rank = app.add_subcommand("rank", "Dense-rank aggregation of a results CSV");
    rank->add_option("--input", o.input, "Results CSV (long or wide)")->required();
    rank->add_option("--direction", o.direction, "higher | lower");
    rank->add_option("--emit", o.emit, "Write the full report as csv or json");
    auto* pareto = app.add_subcommand("pareto", "Performance versus trainable-parameter Pareto front");
    pareto->add_option("--input", o.input, "Results CSV with params")->required();
    pareto->add_option("--direction", o.direction, "higher | lower");
    pareto->add_option("--dataset", o.dataset, "Restrict to one dataset (default: average over datasets)");
    auto* icheck = app.add_subcommand("ingest-check", "Ingest a dataset and print its summary");
    icheck->add_option("--path", o.path, "Image folder or CSV file")->required();
    icheck->add_option("--format", o.format, "image-folder | csv")->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        auto subs = app.get_subcommands();
        out << (subs.empty() ? app.help("", CLI::AppFormatMode::All) : subs.front()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << kSynopsis;
        return kExitUsage;
    }

    Runner run(o, out);
    try {
        if (*count) run.count_params();
        else if (*train) run.train();
        else if (*sweep) run.sweep();
        else if (*hpo) run.hpo();
        else if (*gtrain) run.gen_train();
        else if (*geval) run.gen_eval();
        else if (*rank) run.rank();
        else if (*pareto) run.pareto();
        else if (*icheck) run.ingest_check();
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n" << kSynopsis;
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace peftbench
