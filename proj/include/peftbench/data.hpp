#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peftbench/rng.hpp"
#include "peftbench/tensor.hpp"

namespace peftbench {

enum class Provenance { Synthetic, ImageFolder, Csv };

std::string_view provenance_name(Provenance p);

// Labelled images with a train/val/test partition given as item indices.
// For conditional generation sets the label is the condition id.
struct Dataset {
    std::string name;
    Shape item_shape;            // [C, H, W]
    std::vector<double> pixels;  // items concatenated, row-major
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::vector<std::size_t> train, val, test;
    Provenance provenance = Provenance::Synthetic;

    std::size_t size() const { return labels.size(); }
    std::size_t item_size() const { return shape_numel(item_shape); }
    std::span<const double> item(std::size_t i) const;

    // [B, C, H, W] batch of the given items.
    Tensor batch(std::span<const std::size_t> indices) const;
    std::vector<int> labels_of(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> class_counts(std::span<const std::size_t> indices) const;

    // FNV-1a over shape, pixels, labels and split assignment.
    std::uint64_t hash() const;
};

struct SplitRatios {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
};

// Per-class shuffled partition; each class contributes round(ratio·n_c) items
// to val and test and the rest to train.
void stratified_split(Dataset& ds, RngStream rng, SplitRatios ratios = {});

enum class SynthVariant { Source, Target };

struct SynthConfig {
    std::size_t classes = 3;
    std::size_t size = 600;
    std::size_t image_size = 16;
    double difficulty = 0.5;  // 0 gives noiseless class prototypes
    SynthVariant variant = SynthVariant::Target;
    std::uint64_t task = 0;  // selects one of several target tasks
};

// Class-dependent grating and blob patterns plus noise. Source and target
// variants draw their patterns and label maps from disjoint streams.
Dataset gen_synth_classification(const SynthConfig& cfg, RngStream rng);

struct SynthCondConfig {
    std::size_t cond_vocab = 4;
    std::size_t size = 256;
    std::size_t image_size = 16;
    double noise = 0.05;
    std::uint64_t shift = 0;  // non-zero rotates quadrants and toggles disks/rings (source task)
};

// Images whose structure is determined by the condition id, scaled to [-1, 1].
Dataset gen_synth_conditional(const SynthCondConfig& cfg, RngStream rng);

// Stratified sample of floor(p·|train|) training items; val and test are kept.
Dataset subsample_fraction(const Dataset& ds, double p, RngStream rng);

enum class IngestFormat { ImageFolder, Csv };

IngestFormat parse_ingest_format(std::string_view s);

// image-folder: root/<class>/*.pgm, classes in lexicographic order.
// csv: header "path,label" (paths relative to the file) or "p0,...,pK,label"
// with inline pixels of a square single-channel image.
Dataset ingest(const std::string& path, IngestFormat format, RngStream rng);

struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;  // scaled to [0, 1]
};

PgmImage read_pgm(const std::string& path);
// Values are clamped to [lo, hi] and mapped onto 0..255.
void write_pgm(const std::string& path, std::size_t width, std::size_t height, std::span<const double> values,
               double lo, double hi);

}  // namespace peftbench
