#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bmcx {

struct SgdConfig {
    double lr = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
    bool nesterov = false;
};

/// Velocity buffer for one parameter vector.
struct SgdState {
    std::vector<double> velocity;

    void ensure(size_t n) {
        if (velocity.size() != n) velocity.assign(n, 0.0);
    }
};

/// One SGD step:
///   g <- g + wd * p
///   v <- mu * v + g
///   update = nesterov ? g + mu * v : v
///   p <- p - lr * update
/// lr == 0 leaves params bit-identical (velocity still accumulates).
inline void sgd_step(std::vector<double>& params, std::span<const double> grads, const SgdConfig& cfg,
                     SgdState& state) {
    if (grads.size() != params.size()) {
        throw std::invalid_argument("sgd_step: gradient length " + std::to_string(grads.size()) +
                                    " vs params " + std::to_string(params.size()));
    }
    if (cfg.lr < 0.0) throw std::invalid_argument("sgd_step: negative learning rate");
    state.ensure(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            throw std::runtime_error("sgd_step: non-finite gradient at coordinate " + std::to_string(i));
        }
        const double g = grads[i] + cfg.weight_decay * params[i];
        const double v = cfg.momentum * state.velocity[i] + g;
        state.velocity[i] = v;
        const double update = cfg.nesterov ? g + cfg.momentum * v : v;
        if (cfg.lr != 0.0) params[i] -= cfg.lr * update;
    }
}

/// Cosine annealing from lr0 at epoch 0 down to lr0*(1+cos(pi*(E-1)/E))/2.
inline double cosine_lr(int64_t epoch, int64_t total_epochs, double lr0) {
    if (epoch < 0 || epoch >= total_epochs) {
        throw std::invalid_argument("cosine_lr: epoch " + std::to_string(epoch) + " outside [0," +
                                    std::to_string(total_epochs) + ")");
    }
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                       static_cast<double>(total_epochs)));
}

/// Piecewise schedule for bridge-mode training as a function of the fraction
/// of training completed: flat at r for the first half, a linear ramp down to
/// 0.01*r at 90%, then flat. Continuous at both break points.
inline double bmc_lr(double alpha, double r) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("bmc_lr: alpha=" + std::to_string(alpha) + " outside [0,1]");
    }
    if (alpha <= 0.5) return r;
    if (alpha <= 0.9) return (1.0 - ((alpha - 0.5) * 2.5 * 0.99)) * r;
    return 0.01 * r;
}

}  // namespace bmcx
