#include "peftbench/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "peftbench/error.hpp"

namespace fs = std::filesystem;

namespace peftbench {

std::string_view provenance_name(Provenance p)
{
    switch (p) {
    case Provenance::Synthetic: return "synthetic";
    case Provenance::ImageFolder: return "image-folder";
    case Provenance::Csv: return "csv";
    }
    return "?";
}

std::span<const double> Dataset::item(std::size_t i) const
{
    if (i >= size()) throw DataError("dataset '" + name + "': item " + std::to_string(i) + " out of range");
    return std::span<const double>(pixels).subspan(i * item_size(), item_size());
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const
{
    if (indices.empty()) throw DataError("dataset '" + name + "': empty batch");
    std::vector<double> v;
    v.reserve(indices.size() * item_size());
    for (auto i : indices) {
        auto x = item(i);
        v.insert(v.end(), x.begin(), x.end());
    }
    Shape s{indices.size()};
    s.insert(s.end(), item_shape.begin(), item_shape.end());
    return Tensor(std::move(s), std::move(v));
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const
{
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels.at(i));
    return out;
}

std::vector<std::size_t> Dataset::class_counts(std::span<const std::size_t> indices) const
{
    std::vector<std::size_t> counts(num_classes, 0);
    for (auto i : indices) ++counts.at(static_cast<std::size_t>(labels.at(i)));
    return counts;
}

std::uint64_t Dataset::hash() const
{
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* data, std::size_t n) {
        auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (auto d : item_shape) mix(&d, sizeof d);
    mix(pixels.data(), pixels.size() * sizeof(double));
    mix(labels.data(), labels.size() * sizeof(int));
    for (const auto* part : {&train, &val, &test}) {
        std::size_t n = part->size();
        mix(&n, sizeof n);
        mix(part->data(), n * sizeof(std::size_t));
    }
    return h;
}

void stratified_split(Dataset& ds, RngStream rng, SplitRatios ratios)
{
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must be non-negative and sum to 1");
    }
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);
    ds.train.clear();
    ds.val.clear();
    ds.test.clear();
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        auto stream = rng.split(c);
        stream.shuffle(idx);
        auto n = static_cast<double>(idx.size());
        auto n_val = static_cast<std::size_t>(std::lround(ratios.val * n));
        auto n_test = static_cast<std::size_t>(std::lround(ratios.test * n));
        n_test = std::min(n_test, idx.size() - std::min(n_val, idx.size()));
        n_val = std::min(n_val, idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (k < n_val) ds.val.push_back(idx[k]);
            else if (k < n_val + n_test) ds.test.push_back(idx[k]);
            else ds.train.push_back(idx[k]);
        }
    }
    std::sort(ds.train.begin(), ds.train.end());
    std::sort(ds.val.begin(), ds.val.end());
    std::sort(ds.test.begin(), ds.test.end());
}

// ---------------------------------------------------------------------------
// Synthetic generators

namespace {

struct ClassPattern {
    double angle, freq, phase;   // grating
    double cx, cy, radius;       // blob
    double grating_amp, blob_amp;
};

ClassPattern draw_pattern(RngStream& r, std::size_t s)
{
    ClassPattern p;
    p.angle = r.uniform(0.0, std::numbers::pi);
    p.freq = r.uniform(1.0, 3.5) / static_cast<double>(s);
    p.phase = r.uniform(0.0, 2.0 * std::numbers::pi);
    p.cx = r.uniform(0.25, 0.75) * static_cast<double>(s);
    p.cy = r.uniform(0.25, 0.75) * static_cast<double>(s);
    p.radius = r.uniform(0.08, 0.2) * static_cast<double>(s);
    p.grating_amp = r.uniform(0.5, 1.0);
    p.blob_amp = r.uniform(0.8, 1.5) * (r.uniform() < 0.5 ? -1.0 : 1.0);
    return p;
}

void render(const ClassPattern& p, std::size_t s, double difficulty, RngStream& r, double* out)
{
    double amp = 1.0 + 0.3 * difficulty * r.normal();
    double phase = p.phase + difficulty * r.normal();
    double dx = 1.5 * difficulty * r.normal(), dy = 1.5 * difficulty * r.normal();
    double kx = std::cos(p.angle) * 2.0 * std::numbers::pi * p.freq;
    double ky = std::sin(p.angle) * 2.0 * std::numbers::pi * p.freq;
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
            double fx = static_cast<double>(x), fy = static_cast<double>(y);
            double g = p.grating_amp * std::sin(kx * fx + ky * fy + phase);
            double rx = fx - p.cx - dx, ry = fy - p.cy - dy;
            double b = p.blob_amp * std::exp(-(rx * rx + ry * ry) / (2.0 * p.radius * p.radius));
            out[y * s + x] = amp * (g + b) + difficulty * r.normal();
        }
}

std::vector<int> balanced_labels(std::size_t n, std::size_t classes, RngStream r)
{
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
    r.shuffle(labels);
    return labels;
}

}  // namespace

Dataset gen_synth_classification(const SynthConfig& cfg, RngStream rng)
{
    if (cfg.classes < 2) throw ConfigError("synthetic classification needs >= 2 classes");
    if (cfg.size < cfg.classes) throw ConfigError("synthetic classification: size smaller than class count");
    if (cfg.image_size < 4) throw ConfigError("synthetic classification: image size must be >= 4");
    if (!(cfg.difficulty >= 0.0)) throw ConfigError("synthetic classification: difficulty must be >= 0");

    // Stream ids: patterns and items of each variant/task never share a stream.
    std::uint64_t variant_id = cfg.variant == SynthVariant::Source ? 1 : 1000 + cfg.task;
    RngStream root = rng.split(variant_id);
    RngStream pattern_rng = root.split(0);
    std::vector<ClassPattern> patterns;
    for (std::size_t c = 0; c < cfg.classes; ++c) patterns.push_back(draw_pattern(pattern_rng, cfg.image_size));
    // Target tasks also permute which pattern carries which label.
    std::vector<std::size_t> remap(cfg.classes);
    for (std::size_t c = 0; c < cfg.classes; ++c) remap[c] = c;
    if (cfg.variant == SynthVariant::Target) root.split(1).shuffle(remap);

    Dataset ds;
    ds.name = cfg.variant == SynthVariant::Source ? "synth-source" : "synth-target-" + std::to_string(cfg.task);
    ds.item_shape = {1, cfg.image_size, cfg.image_size};
    ds.num_classes = cfg.classes;
    ds.labels = balanced_labels(cfg.size, cfg.classes, root.split(2));
    ds.pixels.resize(cfg.size * ds.item_size());
    RngStream items = root.split(3);
    for (std::size_t i = 0; i < cfg.size; ++i) {
        auto r = items.split(i);
        const auto& pat = patterns[remap[static_cast<std::size_t>(ds.labels[i])]];
        render(pat, cfg.image_size, cfg.difficulty, r, ds.pixels.data() + i * ds.item_size());
    }
    stratified_split(ds, root.split(4));
    return ds;
}

Dataset gen_synth_conditional(const SynthCondConfig& cfg, RngStream rng)
{
    if (cfg.cond_vocab < 2) throw ConfigError("synthetic conditional set needs cond_vocab >= 2");
    if (cfg.size < cfg.cond_vocab) throw ConfigError("synthetic conditional set: size smaller than vocabulary");
    if (cfg.image_size < 4) throw ConfigError("synthetic conditional set: image size must be >= 4");
    const std::size_t s = cfg.image_size;
    const double fs = static_cast<double>(s);
    Dataset ds;
    ds.name = "synth-conditional";
    ds.item_shape = {1, s, s};
    ds.num_classes = cfg.cond_vocab;
    ds.labels = balanced_labels(cfg.size, cfg.cond_vocab, rng.split(1));
    ds.pixels.resize(cfg.size * ds.item_size());
    RngStream items = rng.split(2);
    for (std::size_t i = 0; i < cfg.size; ++i) {
        auto r = items.split(i);
        auto c = static_cast<std::size_t>(ds.labels[i]);
        // Condition id picks a quadrant; every fourth id switches disk to ring.
        std::size_t q = (c + cfg.shift) % 4;
        double cx = (q == 0 || q == 2 ? 0.3 : 0.7) * fs + 0.5 * r.normal();
        double cy = (q < 2 ? 0.3 : 0.7) * fs + 0.5 * r.normal();
        bool ring = (c / 4 + cfg.shift) % 2 == 1;
        double rad = 0.15 * fs;
        double* out = ds.pixels.data() + i * ds.item_size();
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
                double v = ring ? std::exp(-std::pow(d - rad, 2) / (0.5 * rad * rad)) : std::exp(-d * d / (2 * rad * rad));
                out[y * s + x] = std::clamp(-1.0 + 2.0 * v + cfg.noise * r.normal(), -1.0, 1.0);
            }
    }
    stratified_split(ds, rng.split(3));
    return ds;
}

Dataset subsample_fraction(const Dataset& ds, double p, RngStream rng)
{
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("subsample fraction must lie in (0, 1], got " + std::to_string(p));
    const std::size_t n = ds.train.size();
    const auto k = static_cast<std::size_t>(std::floor(p * static_cast<double>(n) + 1e-9));
    if (k == 0) {
        throw DataError("fraction " + std::to_string(p) + " of " + std::to_string(n) + " training items yields no items");
    }
    Dataset out = ds;
    if (k == n) return out;

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (auto i : ds.train) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);
    // Largest-remainder apportionment of k over classes; ties go to the lower class id.
    std::vector<std::size_t> alloc(ds.num_classes);
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t given = 0;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        double q = static_cast<double>(k) * static_cast<double>(by_class[c].size()) / static_cast<double>(n);
        alloc[c] = static_cast<std::size_t>(std::floor(q));
        given += alloc[c];
        rem.emplace_back(q - std::floor(q), c);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; given < k; ++j, ++given) ++alloc[rem[j % rem.size()].second];

    out.train.clear();
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        auto idx = by_class[c];
        rng.split(c).shuffle(idx);
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(alloc[c]));
    }
    std::sort(out.train.begin(), out.train.end());
    return out;
}

// ---------------------------------------------------------------------------
// Ingestion

IngestFormat parse_ingest_format(std::string_view s)
{
    if (s == "image-folder") return IngestFormat::ImageFolder;
    if (s == "csv") return IngestFormat::Csv;
    throw ConfigError("unknown ingest format '" + std::string(s) + "' (expected image-folder or csv)");
}

namespace {

std::string next_pgm_token(std::istream& in, const std::string& path)
{
    std::string tok;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string skip;
            std::getline(in, skip);
            if (!tok.empty()) return tok;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(ch);
    }
    if (tok.empty()) throw DataError(path + ": truncated PGM header");
    return tok;
}

std::size_t parse_size(const std::string& tok, const std::string& context)
{
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) throw DataError(context + ": bad integer '" + tok + "'");
    return v;
}

std::string trim(std::string s)
{
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
    return s.substr(b);
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(trim(cur));
    return out;
}

int parse_label(const std::string& tok, const std::string& context)
{
    int v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size() || v < 0) {
        throw DataError(context + ": bad label token '" + tok + "' (expected a non-negative integer)");
    }
    return v;
}

double parse_pixel(const std::string& tok, const std::string& context)
{
    double v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw DataError(context + ": bad pixel value '" + tok + "'");
    }
    return v / 255.0;
}

void finish_ingest(Dataset& ds, RngStream rng)
{
    if (ds.size() == 0) throw DataError("ingest '" + ds.name + "': no items found");
    int max_label = *std::max_element(ds.labels.begin(), ds.labels.end());
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    stratified_split(ds, rng);
}

void append_image(Dataset& ds, const PgmImage& img, const std::string& path)
{
    Shape shape{1, img.height, img.width};
    if (ds.item_shape.empty()) ds.item_shape = shape;
    if (shape != ds.item_shape) {
        throw DataError(path + ": image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        ", expected " + std::to_string(ds.item_shape[2]) + "x" + std::to_string(ds.item_shape[1]));
    }
    ds.pixels.insert(ds.pixels.end(), img.pixels.begin(), img.pixels.end());
}

Dataset ingest_folder(const std::string& root)
{
    if (!fs::is_directory(root)) throw IoError("ingest: '" + root + "' is not a directory");
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw DataError("ingest: '" + root + "' has no class directories");
    Dataset ds;
    ds.name = fs::path(root).filename().string();
    ds.provenance = Provenance::ImageFolder;
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(class_dirs[c]))
            if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("ingest: class directory '" + class_dirs[c].string() + "' has no .pgm files");
        for (const auto& f : files) {
            append_image(ds, read_pgm(f.string()), f.string());
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    return ds;
}

Dataset ingest_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("ingest: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty CSV file");
    auto header = split_csv(trim(line));
    Dataset ds;
    ds.name = fs::path(path).stem().string();
    ds.provenance = Provenance::Csv;
    bool path_mode = header.size() == 2 && header[0] == "path" && header[1] == "label";
    std::size_t n_pix = 0;
    if (!path_mode) {
        if (header.size() < 2 || header.back() != "label") {
            throw DataError(path + ": header must be 'path,label' or 'p0,...,pK,label'");
        }
        n_pix = header.size() - 1;
        auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n_pix))));
        if (side * side != n_pix) {
            throw DataError(path + ": " + std::to_string(n_pix) + " pixel columns do not form a square image");
        }
        ds.item_shape = {1, side, side};
    }
    fs::path base = fs::path(path).parent_path();
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        line = trim(line);
        if (line.empty()) continue;
        std::string ctx = path + " row " + std::to_string(row);
        auto fields = split_csv(line);
        if (fields.size() != header.size()) {
            throw DataError(ctx + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        }
        int label = parse_label(fields.back(), ctx);
        if (path_mode) {
            fs::path img = base / fields[0];
            append_image(ds, read_pgm(img.string()), ctx + " (" + img.string() + ")");
        } else {
            for (std::size_t k = 0; k < n_pix; ++k) ds.pixels.push_back(parse_pixel(fields[k], ctx));
        }
        ds.labels.push_back(label);
    }
    return ds;
}

}  // namespace

Dataset ingest(const std::string& path, IngestFormat format, RngStream rng)
{
    Dataset ds = format == IngestFormat::ImageFolder ? ingest_folder(path) : ingest_csv(path);
    finish_ingest(ds, rng);
    return ds;
}

PgmImage read_pgm(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string magic = next_pgm_token(in, path);
    if (magic != "P2" && magic != "P5") throw DataError(path + ": not a PGM file (magic '" + magic + "')");
    PgmImage img;
    img.width = parse_size(next_pgm_token(in, path), path);
    img.height = parse_size(next_pgm_token(in, path), path);
    std::size_t maxval = parse_size(next_pgm_token(in, path), path);
    if (img.width == 0 || img.height == 0) throw DataError(path + ": zero image dimension");
    if (maxval == 0 || maxval > 255) throw DataError(path + ": only 8-bit PGM is supported (maxval " + std::to_string(maxval) + ")");
    std::size_t n = img.width * img.height;
    img.pixels.resize(n);
    if (magic == "P5") {
        std::vector<unsigned char> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n) throw DataError(path + ": truncated pixel data");
        for (std::size_t i = 0; i < n; ++i) img.pixels[i] = raw[i] / static_cast<double>(maxval);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t v = parse_size(next_pgm_token(in, path), path);
            if (v > maxval) throw DataError(path + ": pixel value " + std::to_string(v) + " exceeds maxval");
            img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
        }
    }
    return img;
}

void write_pgm(const std::string& path, std::size_t width, std::size_t height, std::span<const double> values,
               double lo, double hi)
{
    if (values.size() != width * height) throw ShapeError("write_pgm: value count does not match dimensions");
    if (!(hi > lo)) throw ConfigError("write_pgm: empty intensity range");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "P5\n" << width << " " << height << "\n255\n";
    for (double v : values) {
        double t = (std::clamp(v, lo, hi) - lo) / (hi - lo);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace peftbench
