#include "peftbench/serialize.hpp"

#include <fstream>
#include <sstream>

namespace peftbench {

Json arch_config_to_json(const ArchConfig& cfg)
{
    return std::visit(
        [](const auto& c) -> Json {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, CnnConfig>) {
                return {{"arch", "mini-cnn"},        {"in_channels", c.in_channels}, {"width", c.width},
                        {"blocks", c.blocks},         {"classes", c.classes},         {"image_size", c.image_size},
                        {"stem_stride", c.stem_stride}};
            } else if constexpr (std::is_same_v<T, VitConfig>) {
                return {{"arch", "mini-vit"},  {"in_channels", c.in_channels}, {"dim", c.dim},
                        {"heads", c.heads},    {"blocks", c.blocks},           {"patch", c.patch},
                        {"classes", c.classes}, {"image_size", c.image_size},  {"mlp_hidden", c.mlp_hidden}};
            } else {
                return {{"arch", "mini-denoiser"},  {"in_channels", c.in_channels}, {"base_channels", c.base_channels},
                        {"levels", c.levels},        {"cond_vocab", c.cond_vocab},   {"cond_dim", c.cond_dim},
                        {"image_size", c.image_size}, {"time_dim", c.time_dim},      {"groups", c.groups},
                        {"heads", c.heads}};
            }
        },
        cfg);
}

ArchConfig arch_config_from_json(const Json& j)
{
    Arch arch = parse_arch(json_require<std::string>(j, "arch"));
    switch (arch) {
    case Arch::MiniCnn: {
        CnnConfig c;
        c.in_channels = json_get(j, "in_channels", c.in_channels);
        c.width = json_get(j, "width", c.width);
        c.blocks = json_get(j, "blocks", c.blocks);
        c.classes = json_get(j, "classes", c.classes);
        c.image_size = json_get(j, "image_size", c.image_size);
        c.stem_stride = json_get(j, "stem_stride", c.stem_stride);
        return c;
    }
    case Arch::MiniVit: {
        VitConfig c;
        c.in_channels = json_get(j, "in_channels", c.in_channels);
        c.dim = json_get(j, "dim", c.dim);
        c.heads = json_get(j, "heads", c.heads);
        c.blocks = json_get(j, "blocks", c.blocks);
        c.patch = json_get(j, "patch", c.patch);
        c.classes = json_get(j, "classes", c.classes);
        c.image_size = json_get(j, "image_size", c.image_size);
        c.mlp_hidden = json_get(j, "mlp_hidden", c.mlp_hidden);
        return c;
    }
    case Arch::MiniDenoiser: {
        DenoiserConfig c;
        c.in_channels = json_get(j, "in_channels", c.in_channels);
        c.base_channels = json_get(j, "base_channels", c.base_channels);
        c.levels = json_get(j, "levels", c.levels);
        c.cond_vocab = json_get(j, "cond_vocab", c.cond_vocab);
        c.cond_dim = json_get(j, "cond_dim", c.cond_dim);
        c.image_size = json_get(j, "image_size", c.image_size);
        c.time_dim = json_get(j, "time_dim", c.time_dim);
        c.groups = json_get(j, "groups", c.groups);
        c.heads = json_get(j, "heads", c.heads);
        return c;
    }
    }
    throw ConfigError("unreachable arch");
}

Json parse_json(const std::string& text, std::string_view what)
{
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string(what) + ": invalid JSON: " + e.what());
    }
}

std::string read_text_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON container holding the manifest and flat values.

namespace {
constexpr int kCheckpointVersion = 1;

Json tensor_entry(const std::string& name, const Tensor& t)
{
    return {{"name", name}, {"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

void restore_values(Tensor& dst, const Json& entry, const std::string& name)
{
    auto shape = json_require<Shape>(entry, "shape");
    auto values = json_require<std::vector<double>>(entry, "values");
    if (shape != dst.shape()) {
        throw ConfigError("checkpoint: '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                          shape_str(dst.shape()));
    }
    if (values.size() != dst.numel()) throw ConfigError("checkpoint: '" + name + "' value count mismatch");
    std::copy(values.begin(), values.end(), dst.mutable_values().begin());
}
}  // namespace

std::string checkpoint_json(const ModelGraph& model)
{
    Json j;
    j["format"] = "peftbench-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = arch_config_to_json(model.config);
    Json params = Json::array();
    for (const auto& p : model.params) {
        Json e = tensor_entry(p.name, p.tensor);
        e["role"] = std::string(role_name(p.role));
        e["layer"] = p.layer;
        e["trainable"] = p.trainable;
        params.push_back(std::move(e));
    }
    j["params"] = std::move(params);
    Json buffers = Json::array();
    for (const auto& b : model.buffers) buffers.push_back(tensor_entry(b.name, b.tensor));
    j["buffers"] = std::move(buffers);
    return j.dump();
}

ModelGraph checkpoint_from_json(const std::string& text)
{
    Json j = parse_json(text, "checkpoint");
    if (json_get<std::string>(j, "format", "") != "peftbench-checkpoint") throw ConfigError("checkpoint: unknown format");
    int version = json_require<int>(j, "version");
    if (version != kCheckpointVersion) {
        throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    }
    ModelGraph model = build_model(arch_config_from_json(json_require<Json>(j, "config")), RngStream(0));
    const auto& params = j.at("params");
    if (params.size() != model.params.size()) {
        throw ConfigError("checkpoint: holds " + std::to_string(params.size()) + " parameters, architecture has " +
                          std::to_string(model.params.size()));
    }
    for (const auto& e : params) {
        auto name = json_require<std::string>(e, "name");
        if (!model.has_param(name)) throw ConfigError("checkpoint: unknown parameter '" + name + "'");
        auto& rec = model.param(name);
        restore_values(rec.tensor, e, name);
        rec.trainable = json_get(e, "trainable", true);
        rec.tensor.set_requires_grad(rec.trainable);
    }
    for (const auto& e : json_get<Json>(j, "buffers", Json::array())) {
        auto name = json_require<std::string>(e, "name");
        restore_values(model.buffer(name), e, name);
    }
    return model;
}

void save_checkpoint(const ModelGraph& model, const std::string& path) { write_text_file(path, checkpoint_json(model)); }

ModelGraph load_checkpoint(const std::string& path) { return checkpoint_from_json(read_text_file(path)); }

}  // namespace peftbench
