#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmcx/param_vector.hpp"

namespace bmcx {

/// Quadratic Bezier bridge mode across weight space: two endpoints plus one
/// trainable bend. When endpoints_frozen is set, training must leave theta0
/// and theta1 bit-identical.
struct CurveModel {
    ParamVector theta0;
    ParamVector theta_b;
    ParamVector theta1;
    bool endpoints_frozen = false;
};

/// Bezier basis evaluated at t. The coefficients form a partition of unity on
/// [0,1], which is what makes the curve interpolate its control points.
struct CurveCoefficients {
    double c0 = 0.0;
    double cb = 0.0;
    double c1 = 0.0;
};

inline void require_unit_interval(double t, const char* who) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument(std::string(who) + ": t=" + std::to_string(t) + " outside [0,1]");
    }
}

inline CurveCoefficients curve_coefficients(double t) {
    return {(1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t};
}

/// Curve with bend at the segment midpoint; the natural starting point, since
/// it makes the curve coincide with linear interpolation of the endpoints.
inline CurveModel make_curve(ParamVector theta0, ParamVector theta1, bool endpoints_frozen = false) {
    require_same_layout(theta0, theta1, "make_curve");
    ParamVector bend = ParamVector::zeros_like(theta0);
    for (size_t i = 0; i < bend.values.size(); ++i) {
        bend.values[i] = 0.5 * (theta0.values[i] + theta1.values[i]);
    }
    return CurveModel{std::move(theta0), std::move(bend), std::move(theta1), endpoints_frozen};
}

inline ParamVector curve_point(const CurveModel& curve, double t) {
    require_unit_interval(t, "curve_point");
    if (t == 0.0) return curve.theta0;
    if (t == 1.0) return curve.theta1;
    const CurveCoefficients c = curve_coefficients(t);
    ParamVector out = ParamVector::zeros_like(curve.theta0);
    for (size_t i = 0; i < out.values.size(); ++i) {
        out.values[i] = c.c0 * curve.theta0.values[i] + c.cb * curve.theta_b.values[i] +
                        c.c1 * curve.theta1.values[i];
    }
    return out;
}

/// A detached set of weights usable by any forward pass.
inline ParamVector sample_model(const CurveModel& curve, double t) { return curve_point(curve, t); }

struct CurveGrads {
    std::vector<double> g0;
    std::vector<double> gb;
    std::vector<double> g1;
};

/// Chain rule through the curve: an upstream gradient w.r.t. the sampled
/// weights splits into the three control-point gradients by the basis
/// coefficients. Frozen endpoints receive zeros.
inline CurveGrads curve_grad_route(std::span<const double> upstream, double t, bool endpoints_frozen) {
    const CurveCoefficients c = curve_coefficients(t);
    CurveGrads g;
    g.g0.resize(upstream.size(), 0.0);
    g.gb.resize(upstream.size(), 0.0);
    g.g1.resize(upstream.size(), 0.0);
    for (size_t i = 0; i < upstream.size(); ++i) {
        g.gb[i] = c.cb * upstream[i];
        if (!endpoints_frozen) {
            g.g0[i] = c.c0 * upstream[i];
            g.g1[i] = c.c1 * upstream[i];
        }
    }
    return g;
}

}  // namespace bmcx
