#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmcx/context.hpp"
#include "bmcx/curve.hpp"
#include "bmcx/data.hpp"
#include "bmcx/model.hpp"
#include "bmcx/optim.hpp"
#include "bmcx/rng.hpp"
#include "bmcx/tape.hpp"

namespace bmcx {

struct EpochStats {
    double mean_loss = 0.0;
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

// ----------------------------- endpoint pretraining -----------------------------

struct PretrainConfig {
    int64_t epochs = 200;
    int64_t batch = 128;
    SgdConfig opt{0.1, 0.9, 5e-4, true};
    bool augment = true;  // image data only; flat features pass through untouched
    double flip_prob = 0.5;
    int pad = 4;
    uint64_t seed = 0;
};

/// Standard cross-entropy training with cosine annealing. Weights are
/// initialized from the config seed, so zero epochs returns the untouched
/// initialization; the whole run is bit-reproducible per (spec, config).
inline ParamVector pretrain_endpoint(const Model& model, const Dataset& ds, const PretrainConfig& cfg,
                                     TrainHistory* history = nullptr) {
    ParamVector params = model.init_params(cfg.seed);
    if (cfg.epochs == 0) return params;
    RngStream shuffle_rng(cfg.seed, streams::kShuffle);
    RngStream augment_rng(cfg.seed, streams::kAugment);
    SgdState state;
    std::vector<int64_t> order(static_cast<size_t>(ds.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        SgdConfig step_cfg = cfg.opt;
        step_cfg.lr = cosine_lr(epoch, cfg.epochs, cfg.opt.lr);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int64_t steps = 0;
        for (int64_t begin = 0; begin < ds.size(); begin += cfg.batch) {
            const int64_t end = std::min(begin + cfg.batch, ds.size());
            Batch batch = take_batch(ds, std::span(order).subspan(static_cast<size_t>(begin),
                                                                  static_cast<size_t>(end - begin)));
            if (cfg.augment && ds.is_image()) {
                augment_inplace(batch.x, augment_rng, cfg.flip_prob, cfg.pad);
            }
            Tape tape;
            const ForwardResult fwd = model.forward(tape, params, batch.x);
            const int loss = ce_loss(tape, fwd.logits, batch.y);
            tape.backward(loss);
            sgd_step(params.values, model.flat_grad(tape, fwd), step_cfg, state);
            loss_sum += tape.value(loss).data[0];
            ++steps;
        }
        if (history) history->epochs.push_back({steps ? loss_sum / static_cast<double>(steps) : 0.0,
                                                step_cfg.lr});
    }
    return params;
}

// ----------------------------- bridge-mode steps -----------------------------

struct LossEval {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Loss and flat gradient at a given point in weight space; the curve step is
/// agnostic to whether the loss comes from a network or a closed form.
using PointLossFn = std::function<LossEval(const ParamVector&)>;

struct CurveOptState {
    SgdState theta0;
    SgdState theta_b;
    SgdState theta1;
};

/// One Monte Carlo step of the bridge-mode objective: evaluate the loss at
/// the sampled curve point, route the gradient to the control points, and
/// apply one optimizer step. Frozen endpoints are left untouched entirely
/// (no decay, no velocity).
inline double bmc_step(CurveModel& curve, double t, const PointLossFn& loss_fn, const SgdConfig& cfg,
                       CurveOptState& state) {
    require_unit_interval(t, "bmc_step");
    const ParamVector at_t = curve_point(curve, t);
    const LossEval eval = loss_fn(at_t);
    if (!std::isfinite(eval.loss)) {
        throw std::runtime_error("bmc_step: non-finite loss at t=" + std::to_string(t));
    }
    const CurveGrads routed = curve_grad_route(eval.grad, t, curve.endpoints_frozen);
    sgd_step(curve.theta_b.values, routed.gb, cfg, state.theta_b);
    if (!curve.endpoints_frozen) {
        sgd_step(curve.theta0.values, routed.g0, cfg, state.theta0);
        sgd_step(curve.theta1.values, routed.g1, cfg, state.theta1);
    }
    return eval.loss;
}

// ----------------------------- bridge-mode training -----------------------------

struct BmcTrainConfig {
    int64_t epochs = 600;
    int64_t batch = 128;
    double r = 0.015;  // base rate of the piecewise schedule
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool nesterov = true;
    bool augment = false;
    double flip_prob = 0.5;
    int pad = 4;
    uint64_t seed = 0;
};

/// Bridge-mode training across one of the three context regimes. Every step
/// draws t ~ U(0,1); the regime decides how t shapes that step:
///   risk        - plain minibatch, class-weighted cross-entropy at t
///   corruption  - minibatch corrupted at severity t, plain cross-entropy
///   shift       - minibatch sampled from the t-dependent class distribution
inline TrainHistory train_bmc(CurveModel& curve, const Model& model, const Dataset& ds,
                              const ContextSpec& context, const BmcTrainConfig& cfg) {
    TrainHistory history;
    RngStream t_rng(cfg.seed, streams::kCurveT);
    RngStream shuffle_rng(cfg.seed, streams::kShuffle);
    RngStream corrupt_rng(cfg.seed, streams::kCorruption);
    RngStream shift_rng(cfg.seed, streams::kShiftSampler);
    RngStream augment_rng(cfg.seed, streams::kAugment);
    CurveOptState state;

    std::vector<int64_t> order(static_cast<size_t>(ds.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    const int64_t steps_per_epoch = (ds.size() + cfg.batch - 1) / cfg.batch;

    int64_t global_step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        SgdConfig step_cfg{bmc_lr(static_cast<double>(epoch) / static_cast<double>(cfg.epochs), cfg.r),
                           cfg.momentum, cfg.weight_decay, cfg.nesterov};
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (int64_t step = 0; step < steps_per_epoch; ++step, ++global_step) {
            const double t = t_rng.u01();

            Batch batch;
            const RiskProfile* risk = std::get_if<RiskProfile>(&context);
            if (const auto* shift = std::get_if<ShiftSpec>(&context)) {
                batch = sample_contextual_batch(ds, t, *shift, cfg.batch, shift_rng);
            } else {
                const int64_t begin = step * cfg.batch;
                const int64_t end = std::min(begin + cfg.batch, ds.size());
                batch = take_batch(ds, std::span(order).subspan(static_cast<size_t>(begin),
                                                                static_cast<size_t>(end - begin)));
            }
            if (cfg.augment && ds.is_image()) {
                augment_inplace(batch.x, augment_rng, cfg.flip_prob, cfg.pad);
            }
            if (const auto* corr = std::get_if<CorruptionSpec>(&context)) {
                batch.x = corrupt(batch.x, t, *corr, corrupt_rng);
            }

            PointLossFn loss_fn = [&](const ParamVector& w) {
                Tape tape;
                const ForwardResult fwd = model.forward(tape, w, batch.x);
                const int loss = risk ? weighted_ce_loss(tape, fwd.logits, batch.y, t, *risk)
                                      : ce_loss(tape, fwd.logits, batch.y);
                tape.backward(loss);
                return LossEval{tape.value(loss).data[0], model.flat_grad(tape, fwd)};
            };
            try {
                loss_sum += bmc_step(curve, t, loss_fn, step_cfg, state);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error(std::string(e.what()) + " (training step " +
                                         std::to_string(global_step) + ")");
            }
        }
        history.epochs.push_back({loss_sum / static_cast<double>(steps_per_epoch), step_cfg.lr});
    }
    return history;
}

}  // namespace bmcx
