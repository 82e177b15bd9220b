#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bmcx/checkpoint.hpp"
#include "bmcx/config.hpp"
#include "bmcx/context.hpp"
#include "bmcx/curve.hpp"
#include "bmcx/data.hpp"
#include "bmcx/eval.hpp"
#include "bmcx/model.hpp"
#include "bmcx/planar.hpp"
#include "bmcx/plot.hpp"
#include "bmcx/sweep.hpp"
#include "bmcx/train.hpp"

namespace bmcx {

struct PreparedData {
    Dataset train;
    Dataset eval;
};

/// Train and eval splits per the dataset config. Normalization statistics
/// come from the train split and are reused on the eval split; corruption at
/// train or eval time always happens after this step.
inline PreparedData prepare_dataset(const ExperimentConfig& cfg) {
    PreparedData data;
    if (cfg.dataset.source == "blobs") {
        data.train = synth_blobs(cfg.dataset.classes, cfg.dataset.dims, cfg.dataset.per_class,
                                 cfg.dataset.spread, cfg.seed);
        data.eval = synth_blobs(cfg.dataset.classes, cfg.dataset.dims, cfg.dataset.eval_per_class,
                                cfg.dataset.spread, RngStream::mix(cfg.seed, 0xE7A1));
    } else {
        data.train = load_idx(cfg.dataset.images, cfg.dataset.labels);
        data.eval = load_idx(cfg.dataset.eval_images, cfg.dataset.eval_labels);
    }
    if (cfg.dataset.normalize) {
        const NormStats stats = normalize(data.train);
        normalize_with(data.eval, stats);
    }
    return data;
}

inline ContextSpec build_context(const ContextConfig& ctx, int32_t num_classes) {
    if (ctx.kind == "risk") return RiskProfile{ctx.beta, num_classes};
    if (ctx.kind == "corruption") {
        return CorruptionSpec{corruption_from_name(ctx.corruption.kind), ctx.corruption.gamma, 0};
    }
    return ShiftSpec{num_classes};
}

/// Endpoint initialization for a bridge-mode run: both endpoints start from
/// the same mode, either pretrained on the clean data or raw.
inline ParamVector bmc_endpoint_init(const ExperimentConfig& cfg, const Model& model,
                                     const Dataset& train, TrainHistory* history) {
    if (cfg.bmc.endpoint_init == "random" || cfg.bmc.pretrain_epochs == 0) {
        return model.init_params(cfg.seed);
    }
    PretrainConfig pre;
    pre.epochs = cfg.bmc.pretrain_epochs;
    pre.batch = cfg.batch;
    pre.opt = cfg.optimizer;
    pre.augment = cfg.augment;
    pre.seed = cfg.seed;
    return pretrain_endpoint(model, train, pre, history);
}

inline void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("history: cannot write " + path);
    f << "epoch,loss,lr\n";
    for (size_t i = 0; i < history.epochs.size(); ++i) {
        f << i << ',' << format_double(history.epochs[i].mean_loss) << ','
          << format_double(history.epochs[i].lr) << '\n';
    }
}

inline void write_planar_history_csv(const std::string& path, const PlanarHistory& history) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("history: cannot write " + path);
    f << "epoch,loss,grid_mean_accuracy\n";
    for (size_t i = 0; i < history.epoch_loss.size(); ++i) {
        f << i << ',' << format_double(history.epoch_loss[i]) << ','
          << format_double(history.grid_mean_accuracy[i]) << '\n';
    }
}

/// Output directory resolution: relative paths land under $BMCX_OUTPUT_ROOT
/// when it is set.
inline std::filesystem::path resolve_output_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv("BMCX_OUTPUT_ROOT")) {
            p = std::filesystem::path(root) / p;
        }
    }
    return p;
}

/// Run one experiment end to end and write its artifacts:
///   config.json             resolved config snapshot (re-runnable)
///   history.csv             per-epoch loss / learning rate
///   model|curve|planar.bmck checkpoints
///   sweep.csv + .meta.json  for eval-sweep runs
///   grid.csv                planar grid accuracies
/// Everything is a pure function of the config, so re-running a snapshot
/// reproduces the artifacts byte for byte.
inline void run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path out = resolve_output_dir(cfg.output_dir);
    fs::create_directories(out);
    {
        std::ofstream snap(out / "config.json", std::ios::trunc);
        snap << cfg.raw.dump(2) << '\n';
    }
    try {
        const Model model(cfg.model);
        PreparedData data = prepare_dataset(cfg);

        switch (cfg.experiment) {
            case ExperimentKind::Pretrain: {
                PretrainConfig pre;
                pre.epochs = cfg.epochs;
                pre.batch = cfg.batch;
                pre.opt = cfg.optimizer;
                pre.augment = cfg.augment;
                pre.seed = cfg.seed;
                TrainHistory history;
                const ParamVector params = pretrain_endpoint(model, data.train, pre, &history);
                save_model_params((out / "model.bmck").string(), params);
                write_history_csv((out / "history.csv").string(), history);
                break;
            }
            case ExperimentKind::BmcRisk:
            case ExperimentKind::BmcLongtail:
            case ExperimentKind::BmcShift: {
                TrainHistory history;
                const ParamVector base = bmc_endpoint_init(cfg, model, data.train, nullptr);
                save_model_params((out / "endpoint.bmck").string(), base);
                CurveModel curve = make_curve(base, base, cfg.bmc.endpoints_frozen);
                const ContextSpec context = build_context(cfg.context, data.train.num_classes);
                BmcTrainConfig bmc;
                bmc.epochs = cfg.epochs;
                bmc.batch = cfg.batch;
                bmc.r = cfg.bmc.r;
                bmc.momentum = cfg.optimizer.momentum;
                bmc.weight_decay = cfg.optimizer.weight_decay;
                bmc.nesterov = cfg.optimizer.nesterov;
                bmc.augment = cfg.augment;
                bmc.seed = cfg.seed;
                history = train_bmc(curve, model, data.train, context, bmc);
                save_curve((out / "curve.bmck").string(), curve);
                write_history_csv((out / "history.csv").string(), history);
                break;
            }
            case ExperimentKind::Planar: {
                PretrainConfig pre;
                pre.epochs = cfg.planar.pretrain_epochs;
                pre.batch = cfg.batch;
                pre.opt = cfg.optimizer;
                pre.augment = cfg.augment;
                pre.seed = cfg.seed;
                const ParamVector base = pretrain_endpoint(model, data.train, pre);
                save_model_params((out / "base.bmck").string(), base);

                const CorruptionSpec corr1{corruption_from_name(cfg.planar.corruption1.kind),
                                           cfg.planar.corruption1.gamma, 0};
                const CorruptionSpec corr2{corruption_from_name(cfg.planar.corruption2.kind),
                                           cfg.planar.corruption2.gamma, 0};
                PlanarTrainConfig ptc;
                ptc.opt = cfg.optimizer;
                ptc.batch = cfg.batch;
                ptc.points_per_step = cfg.planar.points_per_step;
                ptc.patience = cfg.planar.patience;
                ptc.max_epochs = cfg.planar.max_epochs == 0 ? cfg.epochs : cfg.planar.max_epochs;
                ptc.seed = cfg.seed;
                ptc.eval_seed = RngStream::mix(cfg.seed, streams::kEval);
                PlanarHistory history;
                const PlanarModel trained = planar_train(make_planar(base), model, data.train,
                                                         data.eval, corr1, corr2, ptc, &history);
                save_planar((out / "planar.bmck").string(), trained);
                write_planar_history_csv((out / "history.csv").string(), history);
                const AccuracyGrid grid =
                    planar_eval_grid(trained, model, data.eval, corr1, corr2, ptc.eval_seed);
                write_planar_grid_csv((out / "grid.csv").string(), grid);
                break;
            }
            case ExperimentKind::EvalSweep: {
                const Checkpoint ck = load_checkpoint(cfg.eval.checkpoint);
                if (!(*ck.layout == *model.layout())) {
                    throw std::runtime_error("eval: checkpoint layout does not match the model spec");
                }
                if (ck.kind == CheckpointKind::Planar) {
                    if (cfg.context.kind != "corruption") {
                        throw std::runtime_error(
                            "eval: planar checkpoints evaluate under the corruption context, got '" +
                            cfg.context.kind + "'");
                    }
                    const PlanarModel planar = load_planar(cfg.eval.checkpoint);
                    const CorruptionSpec corr1{corruption_from_name(cfg.planar.corruption1.kind),
                                               cfg.planar.corruption1.gamma, 0};
                    const CorruptionSpec corr2{corruption_from_name(cfg.planar.corruption2.kind),
                                               cfg.planar.corruption2.gamma, 0};
                    const AccuracyGrid grid =
                        planar_eval_grid(planar, model, data.eval, corr1, corr2,
                                         RngStream::mix(cfg.seed, streams::kEval));
                    write_planar_grid_csv((out / "grid.csv").string(), grid);
                    break;
                }
                CurveModel curve;
                if (ck.kind == CheckpointKind::Curve) {
                    curve = load_curve(cfg.eval.checkpoint);
                } else {
                    // A single model sweeps as a constant curve.
                    ParamVector params = load_model_params(cfg.eval.checkpoint);
                    curve = make_curve(params, params, true);
                }
                const ContextSpec context = build_context(cfg.context, data.eval.num_classes);
                const std::vector<double> grid = uniform_grid(cfg.eval.grid);
                SweepResult result = eval_sweep_curve(curve, model, data.eval, context, grid,
                                                      RngStream::mix(cfg.seed, streams::kEval));
                result.config_hash = config_hash(cfg.raw);
                result.version = kVersionString;
                write_sweep_csv((out / "sweep.csv").string(), result);
                write_sweep_metadata((out / "sweep.meta.json").string(), result);
                break;
            }
        }
    } catch (...) {
        // Flag partial outputs so a watcher never mistakes them for a run
        // that finished.
        std::ofstream flag(out / "FAILED", std::ios::trunc);
        flag << "run did not complete\n";
        throw;
    }
}

}  // namespace bmcx
