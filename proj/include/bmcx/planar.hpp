#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmcx/context.hpp"
#include "bmcx/curve.hpp"
#include "bmcx/data.hpp"
#include "bmcx/eval.hpp"
#include "bmcx/model.hpp"
#include "bmcx/optim.hpp"
#include "bmcx/rng.hpp"
#include "bmcx/train.hpp"

namespace bmcx {

/// 2D weight plane for two simultaneous corruptions:
///   w(t1,t2) = w0 + t1*s*w1 + t2*s*w2
/// spans a parallelogram anchored at the pretrained base w0. All four
/// elements train.
struct PlanarModel {
    ParamVector w0;
    ParamVector w1;
    ParamVector w2;
    double s = 1.0;
};

/// Plane collapsed onto a pretrained base: direction vectors start at zero so
/// the model at any (t1,t2) initially equals the base.
inline PlanarModel make_planar(ParamVector base) {
    PlanarModel m;
    m.w1 = ParamVector::zeros_like(base);
    m.w2 = ParamVector::zeros_like(base);
    m.w0 = std::move(base);
    m.s = 1.0;
    return m;
}

inline ParamVector planar_weights(const PlanarModel& m, double t1, double t2) {
    require_unit_interval(t1, "planar_weights(t1)");
    require_unit_interval(t2, "planar_weights(t2)");
    if (t1 == 0.0 && t2 == 0.0) return m.w0;
    ParamVector out = ParamVector::zeros_like(m.w0);
    const double a = t1 * m.s, b = t2 * m.s;
    for (size_t i = 0; i < out.values.size(); ++i) {
        out.values[i] = m.w0.values[i] + a * m.w1.values[i] + b * m.w2.values[i];
    }
    return out;
}

struct PlanarGrads {
    std::vector<double> g0;
    std::vector<double> g1;
    std::vector<double> g2;
    double gs = 0.0;

    void resize(size_t n) {
        g0.assign(n, 0.0);
        g1.assign(n, 0.0);
        g2.assign(n, 0.0);
        gs = 0.0;
    }
};

/// Chain rule at one corruption point: dw/dw0 = 1, dw/dw1 = t1*s,
/// dw/dw2 = t2*s, dw/ds = t1*w1 + t2*w2.
inline void planar_grad_accumulate(PlanarGrads& acc, std::span<const double> upstream,
                                   const PlanarModel& m, double t1, double t2) {
    const double a = t1 * m.s, b = t2 * m.s;
    for (size_t i = 0; i < upstream.size(); ++i) {
        const double u = upstream[i];
        acc.g0[i] += u;
        acc.g1[i] += a * u;
        acc.g2[i] += b * u;
        acc.gs += u * (t1 * m.w1.values[i] + t2 * m.w2.values[i]);
    }
}

/// A corruption point prepared for training: position on the plane plus the
/// already-corrupted minibatch evaluated there.
struct PlanarPoint {
    double t1 = 0.0;
    double t2 = 0.0;
    Batch batch;
};

/// Mean loss over the prepared points, with gradients for {w0,w1,w2,s} if
/// requested. Deterministic given the points, which is what the
/// finite-difference check relies on.
inline double planar_accumulated_loss(const PlanarModel& m, const Model& model,
                                      std::span<const PlanarPoint> points, PlanarGrads* grads) {
    if (points.empty()) throw std::invalid_argument("planar loss: no corruption points");
    if (grads) grads->resize(m.w0.values.size());
    double loss_sum = 0.0;
    for (const PlanarPoint& pt : points) {
        const ParamVector w = planar_weights(m, pt.t1, pt.t2);
        Tape tape;
        const ForwardResult fwd = model.forward(tape, w, pt.batch.x);
        const int loss = ce_loss(tape, fwd.logits, pt.batch.y);
        const double value = tape.value(loss).data[0];
        if (!std::isfinite(value)) {
            throw std::runtime_error("planar loss: non-finite loss at (t1,t2)=(" +
                                     std::to_string(pt.t1) + "," + std::to_string(pt.t2) + ")");
        }
        loss_sum += value;
        if (grads) {
            tape.backward(loss);
            planar_grad_accumulate(*grads, model.flat_grad(tape, fwd), m, pt.t1, pt.t2);
        }
    }
    const double inv = 1.0 / static_cast<double>(points.size());
    if (grads) {
        for (auto& v : grads->g0) v *= inv;
        for (auto& v : grads->g1) v *= inv;
        for (auto& v : grads->g2) v *= inv;
        grads->gs *= inv;
    }
    return loss_sum * inv;
}

struct PlanarOptState {
    SgdState w0;
    SgdState w1;
    SgdState w2;
    SgdState s;
};

struct PlanarTrainConfig {
    SgdConfig opt{0.05, 0.0, 0.0, false};
    int64_t batch = 128;
    int64_t points_per_step = 50;  // loss accumulates across this many (t1,t2) draws
    int64_t patience = 20;
    int64_t max_epochs = 200;
    uint64_t seed = 0;
    uint64_t eval_seed = 1;  // corruption noise for grid evaluation
};

/// One epoch: draw the corruption points uniformly on the unit square, take a
/// fresh minibatch per point, corrupt it with both operators, accumulate the
/// mean loss, then apply a single optimizer step to all four elements.
inline double planar_train_epoch(PlanarModel& m, const Model& model, const Dataset& ds,
                                 const CorruptionSpec& corr1, const CorruptionSpec& corr2,
                                 const PlanarTrainConfig& cfg, PlanarOptState& state,
                                 RngStream& point_rng, RngStream& shuffle_rng, RngStream& corrupt_rng,
                                 std::vector<int64_t>& order, int64_t& cursor) {
    std::vector<PlanarPoint> points;
    points.reserve(static_cast<size_t>(cfg.points_per_step));
    for (int64_t p = 0; p < cfg.points_per_step; ++p) {
        PlanarPoint pt;
        pt.t1 = point_rng.u01();
        pt.t2 = point_rng.u01();
        std::vector<int64_t> idx(static_cast<size_t>(std::min(cfg.batch, ds.size())));
        for (auto& v : idx) {
            if (cursor == ds.size()) {
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            v = order[static_cast<size_t>(cursor++)];
        }
        pt.batch = take_batch(ds, idx);
        pt.batch.x = corrupt(pt.batch.x, pt.t1, corr1, corrupt_rng);
        pt.batch.x = corrupt(pt.batch.x, pt.t2, corr2, corrupt_rng);
        points.push_back(std::move(pt));
    }
    PlanarGrads grads;
    const double loss = planar_accumulated_loss(m, model, points, &grads);
    sgd_step(m.w0.values, grads.g0, cfg.opt, state.w0);
    sgd_step(m.w1.values, grads.g1, cfg.opt, state.w1);
    sgd_step(m.w2.values, grads.g2, cfg.opt, state.w2);
    std::vector<double> s_vec{m.s};
    const std::vector<double> gs_vec{grads.gs};
    sgd_step(s_vec, gs_vec, cfg.opt, state.s);
    m.s = s_vec[0];
    return loss;
}

// ----------------------------- grid evaluation -----------------------------

struct AccuracyGrid {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> accuracy;  // row-major, rows index t1
    std::vector<int64_t> n_eval;

    double at(int64_t i, int64_t j) const { return accuracy[static_cast<size_t>(i * cols + j)]; }
    double mean() const {
        double s = 0.0;
        for (double v : accuracy) s += v;
        return accuracy.empty() ? 0.0 : s / static_cast<double>(accuracy.size());
    }
};

/// Accuracy at every point of the 11x11 grid t1,t2 in {0, 0.1, ..., 1}.
/// Corruption noise is drawn from a per-cell stream derived from eval_seed,
/// so the grid is deterministic and cells are order-independent.
inline AccuracyGrid planar_eval_grid(const PlanarModel& m, const Model& model, const Dataset& ds,
                                     const CorruptionSpec& corr1, const CorruptionSpec& corr2,
                                     uint64_t eval_seed) {
    AccuracyGrid grid;
    grid.rows = 11;
    grid.cols = 11;
    grid.accuracy.resize(121);
    grid.n_eval.resize(121);
    std::vector<int64_t> all(static_cast<size_t>(ds.size()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
    const Batch full = take_batch(ds, all);
    for (int64_t i = 0; i < grid.rows; ++i) {
        for (int64_t j = 0; j < grid.cols; ++j) {
            const double t1 = static_cast<double>(i) / 10.0;
            const double t2 = static_cast<double>(j) / 10.0;
            RngStream cell_rng(eval_seed, streams::kEval + static_cast<uint64_t>(i * 11 + j));
            Tensor x = corrupt(full.x, t1, corr1, cell_rng);
            x = corrupt(x, t2, corr2, cell_rng);
            const ParamVector w = planar_weights(m, t1, t2);
            grid.accuracy[static_cast<size_t>(i * 11 + j)] = accuracy(model, w, x, full.y);
            grid.n_eval[static_cast<size_t>(i * 11 + j)] = ds.size();
        }
    }
    return grid;
}

// ----------------------------- early stopping -----------------------------

/// Best-so-far early stopping on a metric to maximize. Ties keep the earlier
/// epoch; stop fires once the best has not improved for `patience`
/// consecutive observations.
class EarlyStopping {
public:
    explicit EarlyStopping(int64_t patience) : patience_(patience) {
        if (patience < 1) throw std::invalid_argument("early stopping: patience must be >= 1");
    }

    /// Feed the metric for the epoch just finished; true means stop now.
    bool observe(double metric) {
        ++epoch_;
        if (metric > best_metric_) {
            best_metric_ = metric;
            best_epoch_ = epoch_;
            since_best_ = 0;
            return false;
        }
        ++since_best_;
        return since_best_ >= patience_;
    }

    int64_t best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_metric_; }
    int64_t epochs_seen() const { return epoch_; }

private:
    int64_t patience_;
    int64_t epoch_ = 0;
    int64_t best_epoch_ = 0;
    int64_t since_best_ = 0;
    double best_metric_ = -std::numeric_limits<double>::infinity();
};

struct PlanarHistory {
    std::vector<double> epoch_loss;
    std::vector<double> grid_mean_accuracy;
    int64_t best_epoch = 0;  // 1-based
};

/// Train until the mean grid accuracy stops improving for `patience` epochs;
/// returns the best-so-far model (ties resolved to the earliest epoch).
inline PlanarModel planar_train(PlanarModel m, const Model& model, const Dataset& train_ds,
                                const Dataset& eval_ds, const CorruptionSpec& corr1,
                                const CorruptionSpec& corr2, const PlanarTrainConfig& cfg,
                                PlanarHistory* history = nullptr) {
    PlanarOptState state;
    RngStream point_rng(cfg.seed, streams::kPlanarPoints);
    RngStream shuffle_rng(cfg.seed, streams::kShuffle);
    RngStream corrupt_rng(cfg.seed, streams::kCorruption);
    std::vector<int64_t> order(static_cast<size_t>(train_ds.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    shuffle_rng.shuffle(order);
    int64_t cursor = 0;

    EarlyStopping stopper(cfg.patience);
    PlanarModel best = m;
    for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double loss = planar_train_epoch(m, model, train_ds, corr1, corr2, cfg, state, point_rng,
                                               shuffle_rng, corrupt_rng, order, cursor);
        const AccuracyGrid grid = planar_eval_grid(m, model, eval_ds, corr1, corr2, cfg.eval_seed);
        const double mean_acc = grid.mean();
        if (history) {
            history->epoch_loss.push_back(loss);
            history->grid_mean_accuracy.push_back(mean_acc);
        }
        const bool was_best = mean_acc > stopper.best_metric();
        const bool stop = stopper.observe(mean_acc);
        if (was_best) best = m;
        if (stop) break;
    }
    if (history) history->best_epoch = stopper.best_epoch();
    return best;
}

}  // namespace bmcx
