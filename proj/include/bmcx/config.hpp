#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bmcx/context.hpp"
#include "bmcx/model.hpp"
#include "bmcx/optim.hpp"

namespace bmcx {

using nlohmann::json;

/// Raised for malformed or inconsistent experiment configs; the CLI maps it
/// to exit code 2 while runtime failures exit 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace cfgdetail {

inline void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("config: '" + path + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key)) {
            throw ConfigError("config: unknown field '" + (path.empty() ? key : path + "." + key) + "'");
        }
    }
}

template <class T>
T require(const json& obj, const std::string& path, const std::string& key) {
    if (!obj.contains(key)) throw ConfigError("config: field '" + path + key + "' is required");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: field '" + path + key + "' has the wrong type");
    }
}

template <class T>
T optional(const json& obj, const std::string& path, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: field '" + path + key + "' has the wrong type");
    }
}

}  // namespace cfgdetail

// ----------------------------- model spec <-> json -----------------------------

inline json model_spec_to_json(const ModelSpec& spec) {
    json j;
    j["input"] = spec.input_shape;
    j["layers"] = json::array();
    for (const auto& l : spec.layers) {
        json lj;
        if (const auto* lin = std::get_if<LinearSpec>(&l)) {
            lj = {{"type", "linear"}, {"in", lin->in}, {"out", lin->out}, {"bias", lin->bias}};
        } else if (const auto* cv = std::get_if<Conv2dSpec>(&l)) {
            lj = {{"type", "conv2d"},   {"in_ch", cv->in_ch}, {"out_ch", cv->out_ch},
                  {"kernel", cv->kernel}, {"stride", cv->stride}, {"pad", cv->pad},
                  {"bias", cv->bias}};
        } else if (std::holds_alternative<ReluSpec>(l)) {
            lj = {{"type", "relu"}};
        } else if (const auto* mp = std::get_if<MaxPool2dSpec>(&l)) {
            lj = {{"type", "max-pool2d"}, {"k", mp->k}};
        } else {
            lj = {{"type", "flatten"}};
        }
        j["layers"].push_back(std::move(lj));
    }
    return j;
}

inline ModelSpec model_spec_from_json(const json& j, const std::string& path = "model") {
    cfgdetail::check_keys(j, path, {"input", "layers"});
    ModelSpec spec;
    spec.input_shape = cfgdetail::require<std::vector<int64_t>>(j, path + ".", "input");
    if (!j.contains("layers") || !j.at("layers").is_array()) {
        throw ConfigError("config: '" + path + ".layers' must be an array");
    }
    size_t idx = 0;
    for (const auto& lj : j.at("layers")) {
        const std::string lpath = path + ".layers[" + std::to_string(idx++) + "]";
        const std::string type = cfgdetail::require<std::string>(lj, lpath + ".", "type");
        if (type == "linear") {
            cfgdetail::check_keys(lj, lpath, {"type", "in", "out", "bias"});
            spec.layers.push_back(LinearSpec{cfgdetail::require<int64_t>(lj, lpath + ".", "in"),
                                             cfgdetail::require<int64_t>(lj, lpath + ".", "out"),
                                             cfgdetail::optional<bool>(lj, lpath + ".", "bias", true)});
        } else if (type == "conv2d") {
            cfgdetail::check_keys(lj, lpath, {"type", "in_ch", "out_ch", "kernel", "stride", "pad", "bias"});
            spec.layers.push_back(Conv2dSpec{cfgdetail::require<int64_t>(lj, lpath + ".", "in_ch"),
                                             cfgdetail::require<int64_t>(lj, lpath + ".", "out_ch"),
                                             cfgdetail::optional<int64_t>(lj, lpath + ".", "kernel", 3),
                                             cfgdetail::optional<int64_t>(lj, lpath + ".", "stride", 1),
                                             cfgdetail::optional<int64_t>(lj, lpath + ".", "pad", 1),
                                             cfgdetail::optional<bool>(lj, lpath + ".", "bias", true)});
        } else if (type == "relu") {
            cfgdetail::check_keys(lj, lpath, {"type"});
            spec.layers.push_back(ReluSpec{});
        } else if (type == "max-pool2d") {
            cfgdetail::check_keys(lj, lpath, {"type", "k"});
            spec.layers.push_back(MaxPool2dSpec{cfgdetail::optional<int64_t>(lj, lpath + ".", "k", 2)});
        } else if (type == "flatten") {
            cfgdetail::check_keys(lj, lpath, {"type"});
            spec.layers.push_back(FlattenSpec{});
        } else {
            throw ConfigError("config: '" + lpath + ".type' unknown layer type '" + type + "'");
        }
    }
    return spec;
}

// ----------------------------- experiment config -----------------------------

enum class ExperimentKind { Pretrain, BmcRisk, BmcLongtail, BmcShift, Planar, EvalSweep };

inline ExperimentKind experiment_from_name(const std::string& name) {
    if (name == "pretrain") return ExperimentKind::Pretrain;
    if (name == "bmc-risk") return ExperimentKind::BmcRisk;
    if (name == "bmc-longtail") return ExperimentKind::BmcLongtail;
    if (name == "bmc-shift") return ExperimentKind::BmcShift;
    if (name == "planar") return ExperimentKind::Planar;
    if (name == "eval-sweep") return ExperimentKind::EvalSweep;
    throw ConfigError("config: unknown experiment '" + name + "'");
}

inline const char* experiment_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::Pretrain: return "pretrain";
        case ExperimentKind::BmcRisk: return "bmc-risk";
        case ExperimentKind::BmcLongtail: return "bmc-longtail";
        case ExperimentKind::BmcShift: return "bmc-shift";
        case ExperimentKind::Planar: return "planar";
        case ExperimentKind::EvalSweep: return "eval-sweep";
    }
    return "?";
}

struct DatasetConfig {
    std::string source;  // "blobs" | "idx"
    // blobs
    int32_t classes = 4;
    int32_t dims = 8;
    int32_t per_class = 100;
    int32_t eval_per_class = 100;
    double spread = 0.5;
    // idx
    std::string images, labels, eval_images, eval_labels;
    bool normalize = true;
};

struct CorruptionConfig {
    std::string kind = "gaussian-noise";
    double gamma = 1.0;
};

struct ContextConfig {
    std::string kind;  // "risk" | "corruption" | "shift"
    double beta = 1.0;
    CorruptionConfig corruption;
};

struct BmcConfig {
    double r = 0.015;
    bool endpoints_frozen = false;
    int64_t pretrain_epochs = 0;       // 0: endpoints start at the raw initialization
    std::string endpoint_init = "pretrained";  // or "random"
};

struct PlanarConfig {
    CorruptionConfig corruption1{"gaussian-noise", 1.0};
    CorruptionConfig corruption2{"contrast", 1.0};
    int64_t points_per_step = 50;
    int64_t patience = 20;
    int64_t max_epochs = 200;
    int64_t pretrain_epochs = 0;
};

struct EvalConfig {
    std::string checkpoint;
    int64_t grid = 21;  // evenly spaced t values on [0,1]
};

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::Pretrain;
    uint64_t seed = 0;
    std::string output_dir;
    ModelSpec model;
    DatasetConfig dataset;
    SgdConfig optimizer{0.1, 0.9, 5e-4, true};
    int64_t epochs = 1;
    int64_t batch = 128;
    bool augment = false;
    ContextConfig context;
    BmcConfig bmc;
    PlanarConfig planar;
    EvalConfig eval;
    json raw;  // canonical parsed form, for snapshots and hashing
};

namespace cfgdetail {

inline DatasetConfig parse_dataset(const json& j) {
    DatasetConfig d;
    d.source = require<std::string>(j, "dataset.", "source");
    if (d.source == "blobs") {
        check_keys(j, "dataset",
                   {"source", "classes", "dims", "per_class", "eval_per_class", "spread", "normalize"});
        d.classes = optional<int32_t>(j, "dataset.", "classes", 4);
        d.dims = optional<int32_t>(j, "dataset.", "dims", 8);
        d.per_class = optional<int32_t>(j, "dataset.", "per_class", 100);
        d.eval_per_class = optional<int32_t>(j, "dataset.", "eval_per_class", d.per_class);
        d.spread = optional<double>(j, "dataset.", "spread", 0.5);
        if (d.classes < 2) throw ConfigError("config: 'dataset.classes' must be >= 2");
    } else if (d.source == "idx") {
        check_keys(j, "dataset",
                   {"source", "images", "labels", "eval_images", "eval_labels", "normalize"});
        d.images = require<std::string>(j, "dataset.", "images");
        d.labels = require<std::string>(j, "dataset.", "labels");
        d.eval_images = optional<std::string>(j, "dataset.", "eval_images", d.images);
        d.eval_labels = optional<std::string>(j, "dataset.", "eval_labels", d.labels);
    } else {
        throw ConfigError("config: 'dataset.source' must be 'blobs' or 'idx'");
    }
    d.normalize = optional<bool>(j, "dataset.", "normalize", true);
    return d;
}

inline CorruptionConfig parse_corruption(const json& j, const std::string& path) {
    check_keys(j, path, {"kind", "gamma"});
    CorruptionConfig c;
    c.kind = require<std::string>(j, path + ".", "kind");
    corruption_from_name(c.kind);  // validates
    c.gamma = optional<double>(j, path + ".", "gamma", 1.0);
    if (c.gamma <= 0.0) throw ConfigError("config: '" + path + ".gamma' must be positive");
    return c;
}

inline ContextConfig parse_context(const json& j, ExperimentKind experiment) {
    check_keys(j, "context", {"kind", "beta", "corruption", "gamma"});
    ContextConfig c;
    c.kind = require<std::string>(j, "context.", "kind");
    if (c.kind == "risk") {
        c.beta = optional<double>(j, "context.", "beta", 1.0);
        if (c.beta < 1.0) throw ConfigError("config: 'context.beta' must be >= 1");
    } else if (c.kind == "corruption") {
        c.corruption.kind = optional<std::string>(j, "context.", "corruption", "gaussian-noise");
        corruption_from_name(c.corruption.kind);
        c.corruption.gamma = optional<double>(j, "context.", "gamma", 1.0);
        if (c.corruption.gamma <= 0.0) throw ConfigError("config: 'context.gamma' must be positive");
    } else if (c.kind != "shift") {
        throw ConfigError("config: 'context.kind' must be risk, corruption, or shift");
    }
    const bool kind_matches =
        (experiment == ExperimentKind::BmcRisk && c.kind == "risk") ||
        (experiment == ExperimentKind::BmcLongtail && c.kind == "corruption") ||
        (experiment == ExperimentKind::BmcShift && c.kind == "shift") ||
        experiment == ExperimentKind::EvalSweep;
    if (!kind_matches) {
        throw ConfigError(std::string("config: 'context.kind' '") + c.kind +
                          "' does not match experiment '" + experiment_name(experiment) + "'");
    }
    return c;
}

}  // namespace cfgdetail

inline ExperimentConfig parse_experiment_config(const json& j) {
    using namespace cfgdetail;
    check_keys(j, "", {"experiment", "seed", "output_dir", "model", "dataset", "optimizer", "epochs",
                       "batch", "augment", "context", "bmc", "planar", "eval"});
    ExperimentConfig cfg;
    cfg.raw = j;
    cfg.experiment = experiment_from_name(require<std::string>(j, "", "experiment"));
    if (!j.contains("seed")) throw ConfigError("config: field 'seed' is required");
    cfg.seed = require<uint64_t>(j, "", "seed");
    cfg.output_dir = require<std::string>(j, "", "output_dir");
    cfg.model = model_spec_from_json(require<json>(j, "", "model"));
    cfg.dataset = parse_dataset(require<json>(j, "", "dataset"));

    if (j.contains("optimizer")) {
        const json& oj = j.at("optimizer");
        check_keys(oj, "optimizer", {"lr", "momentum", "weight_decay", "nesterov"});
        cfg.optimizer.lr = optional<double>(oj, "optimizer.", "lr", 0.1);
        cfg.optimizer.momentum = optional<double>(oj, "optimizer.", "momentum", 0.9);
        cfg.optimizer.weight_decay = optional<double>(oj, "optimizer.", "weight_decay", 5e-4);
        cfg.optimizer.nesterov = optional<bool>(oj, "optimizer.", "nesterov", true);
        if (cfg.optimizer.lr < 0.0) throw ConfigError("config: 'optimizer.lr' must be >= 0");
    }
    cfg.epochs = optional<int64_t>(j, "", "epochs", 1);
    cfg.batch = optional<int64_t>(j, "", "batch", 128);
    if (cfg.epochs < 0) throw ConfigError("config: 'epochs' must be >= 0");
    if (cfg.batch < 1) throw ConfigError("config: 'batch' must be >= 1");
    cfg.augment = optional<bool>(j, "", "augment", false);

    const bool needs_context = cfg.experiment == ExperimentKind::BmcRisk ||
                               cfg.experiment == ExperimentKind::BmcLongtail ||
                               cfg.experiment == ExperimentKind::BmcShift ||
                               cfg.experiment == ExperimentKind::EvalSweep;
    if (needs_context) {
        if (!j.contains("context")) throw ConfigError("config: field 'context' is required");
        cfg.context = parse_context(j.at("context"), cfg.experiment);
    } else if (j.contains("context")) {
        throw ConfigError("config: 'context' is not used by this experiment");
    }

    if (j.contains("bmc")) {
        const json& bj = j.at("bmc");
        check_keys(bj, "bmc", {"r", "endpoints_frozen", "pretrain_epochs", "endpoint_init"});
        cfg.bmc.r = optional<double>(bj, "bmc.", "r", 0.015);
        cfg.bmc.endpoints_frozen = optional<bool>(bj, "bmc.", "endpoints_frozen", false);
        cfg.bmc.pretrain_epochs = optional<int64_t>(bj, "bmc.", "pretrain_epochs", 0);
        cfg.bmc.endpoint_init = optional<std::string>(bj, "bmc.", "endpoint_init", "pretrained");
        if (cfg.bmc.endpoint_init != "pretrained" && cfg.bmc.endpoint_init != "random") {
            throw ConfigError("config: 'bmc.endpoint_init' must be 'pretrained' or 'random'");
        }
        if (cfg.bmc.r <= 0.0) throw ConfigError("config: 'bmc.r' must be positive");
    }
    if (j.contains("planar")) {
        const json& pj = j.at("planar");
        check_keys(pj, "planar",
                   {"corruption1", "corruption2", "points_per_step", "patience", "max_epochs",
                    "pretrain_epochs"});
        if (pj.contains("corruption1")) {
            cfg.planar.corruption1 = parse_corruption(pj.at("corruption1"), "planar.corruption1");
        }
        if (pj.contains("corruption2")) {
            cfg.planar.corruption2 = parse_corruption(pj.at("corruption2"), "planar.corruption2");
        }
        cfg.planar.points_per_step = optional<int64_t>(pj, "planar.", "points_per_step", 50);
        cfg.planar.patience = optional<int64_t>(pj, "planar.", "patience", 20);
        cfg.planar.max_epochs = optional<int64_t>(pj, "planar.", "max_epochs", 200);
        cfg.planar.pretrain_epochs = optional<int64_t>(pj, "planar.", "pretrain_epochs", 0);
        if (cfg.planar.patience < 1) throw ConfigError("config: 'planar.patience' must be >= 1");
    }
    if (cfg.experiment == ExperimentKind::EvalSweep) {
        if (!j.contains("eval")) throw ConfigError("config: field 'eval' is required");
        const json& ej = j.at("eval");
        cfgdetail::check_keys(ej, "eval", {"checkpoint", "grid"});
        cfg.eval.checkpoint = require<std::string>(ej, "eval.", "checkpoint");
        cfg.eval.grid = optional<int64_t>(ej, "eval.", "grid", 21);
        if (cfg.eval.grid < 2) throw ConfigError("config: 'eval.grid' must be >= 2");
    } else if (j.contains("eval")) {
        throw ConfigError("config: 'eval' is only used by eval-sweep");
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
    }
    return parse_experiment_config(j);
}

/// FNV-1a over the canonical serialization; stable across runs.
inline std::string config_hash(const json& j) {
    const std::string s = j.dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline constexpr const char* kVersionString = "bmcx 0.1.0";

}  // namespace bmcx
