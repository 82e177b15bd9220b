#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "bmcx/tape.hpp"
#include "bmcx/tensor.hpp"

namespace bmcx {

/// A scalar function of a flat parameter vector together with its analytic
/// gradient, the unit finite_diff_check operates on. For tape-backed
/// functions use differentiable_from_tape below.
struct DifferentiableScalar {
    std::function<double(const std::vector<double>&)> value;
    std::function<std::vector<double>(const std::vector<double>&)> gradient;
};

/// Max over the selected coordinates of
///   |analytic - central_difference| / max(1, |analytic|).
/// `coords` empty means every coordinate. Coordinates at relu / pooling kinks
/// are not detected here; callers keep their probes away from kinks (the
/// model forward reports margins for that purpose).
inline double finite_diff_check(const DifferentiableScalar& f, const std::vector<double>& params,
                                double step, const std::vector<size_t>& coords = {}) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be positive");
    const std::vector<double> analytic = f.gradient(params);
    if (analytic.size() != params.size()) {
        throw std::invalid_argument("finite_diff_check: gradient length mismatch");
    }
    std::vector<double> probe = params;
    double worst = 0.0;
    auto check_one = [&](size_t i) {
        const double saved = probe[i];
        probe[i] = saved + step;
        const double fp = f.value(probe);
        probe[i] = saved - step;
        const double fm = f.value(probe);
        probe[i] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double denom = std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    };
    if (coords.empty()) {
        for (size_t i = 0; i < params.size(); ++i) check_one(i);
    } else {
        for (size_t i : coords) check_one(i);
    }
    return worst;
}

/// Build a DifferentiableScalar from a tape program. `build` receives a fresh
/// tape plus the id of a single trainable leaf holding the parameters and
/// returns the scalar loss node.
inline DifferentiableScalar differentiable_from_tape(std::vector<int64_t> param_shape,
                                                     std::function<int(Tape&, int)> build) {
    auto run = [param_shape, build](const std::vector<double>& p, bool want_grad)
        -> std::pair<double, std::vector<double>> {
        Tape tape;
        const int leaf = tape.leaf(Tensor(param_shape, p), true);
        const int loss = build(tape, leaf);
        std::vector<double> g;
        if (want_grad) {
            tape.backward(loss);
            g = tape.grad(leaf).data;
        }
        return {tape.value(loss).data[0], std::move(g)};
    };
    DifferentiableScalar f;
    f.value = [run](const std::vector<double>& p) { return run(p, false).first; };
    f.gradient = [run](const std::vector<double>& p) { return run(p, true).second; };
    return f;
}

/// Evenly spread sample of `count` coordinate indices out of `n`; used to
/// finite-difference large parameter vectors without probing every entry.
inline std::vector<size_t> coordinate_sample(size_t n, size_t count, uint64_t salt = 0) {
    std::vector<size_t> out;
    if (n == 0) return out;
    if (count == 0 || count >= n) {
        out.resize(n);
        for (size_t i = 0; i < n; ++i) out[i] = i;
        return out;
    }
    for (size_t i = 0; i < count; ++i) {
        out.push_back((i * n / count + static_cast<size_t>(salt % (n / count + 1))) % n);
    }
    return out;
}

}  // namespace bmcx
