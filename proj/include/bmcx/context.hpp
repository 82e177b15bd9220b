#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bmcx/curve.hpp"
#include "bmcx/data.hpp"
#include "bmcx/rng.hpp"
#include "bmcx/tape.hpp"

namespace bmcx {

// ----------------------------- risk profile -----------------------------

/// Context as a risk profile: the unit interval is split into one bin per
/// class and the bin owning t gets its cross-entropy term scaled by beta.
struct RiskProfile {
    double beta = 1.0;
    int32_t num_classes = 0;
};

/// Bin map from t to the favored class; the t=1 overflow bin is clamped to
/// the last class so the map stays total on [0,1].
inline int32_t favored_class(double t, int32_t num_classes) {
    require_unit_interval(t, "favored_class");
    if (num_classes < 1) throw std::invalid_argument("favored_class: no classes");
    const auto k = static_cast<int32_t>(std::floor(t * num_classes));
    return std::min(k, num_classes - 1);
}

inline double alpha_weight(double t, int32_t k, const RiskProfile& profile) {
    require_unit_interval(t, "alpha_weight");
    if (profile.beta < 1.0) throw std::invalid_argument("alpha_weight: beta must be >= 1");
    if (k < 0 || k >= profile.num_classes) {
        throw std::invalid_argument("alpha_weight: class " + std::to_string(k) + " outside [0," +
                                    std::to_string(profile.num_classes) + ")");
    }
    return k == favored_class(t, profile.num_classes) ? profile.beta : 1.0;
}

/// Class-weighted cross-entropy: mean over the batch of
/// alpha(t, y_i) * (-log p_{y_i}). With beta = 1 this is plain mean CE.
/// Returns the scalar loss node on the tape.
inline int weighted_ce_loss(Tape& tape, int logits, std::span<const int32_t> labels, double t,
                            const RiskProfile& profile) {
    std::vector<double> weights(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        weights[i] = alpha_weight(t, labels[i], profile);
    }
    return tape.nll_loss(tape.log_softmax(logits), labels, weights);
}

/// Plain mean cross-entropy, for the contexts that keep the loss unweighted.
inline int ce_loss(Tape& tape, int logits, std::span<const int32_t> labels) {
    return tape.nll_loss(tape.log_softmax(logits), labels);
}

// ----------------------------- corruption -----------------------------

enum class CorruptionKind { GaussianNoise, Contrast };

inline const char* corruption_name(CorruptionKind k) {
    return k == CorruptionKind::GaussianNoise ? "gaussian-noise" : "contrast";
}

inline CorruptionKind corruption_from_name(const std::string& name) {
    if (name == "gaussian-noise") return CorruptionKind::GaussianNoise;
    if (name == "contrast") return CorruptionKind::Contrast;
    throw std::invalid_argument("unknown corruption kind '" + name + "'");
}

/// Context as input corruption with severity t: zero-mean Gaussian noise with
/// sigma = gamma * t, or a per-sample mean-preserving contrast reduction.
struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::GaussianNoise;
    double gamma = 1.0;
    uint64_t seed_stream = streams::kCorruption;
};

/// Severity t=0 returns the input bit-exactly; expected distortion grows
/// with t for both kinds. gamma = 0 degenerates to the identity for the
/// noise kind, which makes such a run equal to training on clean data.
inline Tensor corrupt(const Tensor& x, double t, const CorruptionSpec& spec, RngStream& rng) {
    require_unit_interval(t, "corrupt");
    if (spec.gamma < 0.0) throw std::invalid_argument("corrupt: gamma must be non-negative");
    if (t == 0.0) return x;
    Tensor out = x;
    if (spec.kind == CorruptionKind::GaussianNoise) {
        const double sigma = spec.gamma * t;
        if (sigma == 0.0) return out;
        for (auto& v : out.data) v += rng.normal(0.0, sigma);
        return out;
    }
    // Contrast: shrink every pixel toward its image's mean by factor (1-t).
    if (out.rank() < 2) throw std::invalid_argument("corrupt: contrast needs batched input");
    const int64_t n = out.dim(0);
    const int64_t stride = out.numel() / std::max<int64_t>(n, 1);
    for (int64_t i = 0; i < n; ++i) {
        double* img = &out.data[i * stride];
        double mu = 0.0;
        for (int64_t j = 0; j < stride; ++j) mu += img[j];
        mu /= static_cast<double>(stride);
        for (int64_t j = 0; j < stride; ++j) img[j] = mu + (1.0 - t) * (img[j] - mu);
    }
    return out;
}

// ----------------------------- label shift -----------------------------

/// Context as label-distribution shift: class priors vary affinely in t and
/// are uniform at t = 0.5.
struct ShiftSpec {
    int32_t num_classes = 0;
};

/// Unnormalized class weight (1-2t)(c - N/2)/N + 1/2; affine in both c and t
/// and confined to [0,1], but the weights across classes do not sum to one.
inline double raw_class_weight(double t, int32_t c, const ShiftSpec& spec) {
    require_unit_interval(t, "raw_class_weight");
    if (c < 0 || c >= spec.num_classes) throw std::invalid_argument("raw_class_weight: class out of range");
    const double n = static_cast<double>(spec.num_classes);
    return (1.0 - 2.0 * t) * (static_cast<double>(c) - 0.5 * n) / n + 0.5;
}

/// Normalized class distribution at context t: the raw weights scaled into a
/// proper categorical distribution (uniform at t = 0.5).
inline std::vector<double> class_distribution(double t, const ShiftSpec& spec) {
    require_unit_interval(t, "class_distribution");
    if (spec.num_classes < 2) throw std::invalid_argument("class_distribution: need >= 2 classes");
    std::vector<double> p(static_cast<size_t>(spec.num_classes));
    double sum = 0.0;
    for (int32_t c = 0; c < spec.num_classes; ++c) {
        p[static_cast<size_t>(c)] = raw_class_weight(t, c, spec);
        sum += p[static_cast<size_t>(c)];
    }
    for (auto& v : p) v /= sum;
    return p;
}

/// Draw labels i.i.d. from class_distribution(t), then a uniform sample
/// within each drawn class.
inline Batch sample_contextual_batch(const Dataset& ds, double t, const ShiftSpec& spec,
                                     int64_t batch_size, RngStream& rng) {
    if (spec.num_classes != ds.num_classes) {
        throw std::invalid_argument("sample_contextual_batch: spec has " +
                                    std::to_string(spec.num_classes) + " classes, dataset " +
                                    std::to_string(ds.num_classes));
    }
    const std::vector<double> dist = class_distribution(t, spec);
    std::vector<int64_t> picks;
    picks.reserve(static_cast<size_t>(batch_size));
    for (int64_t b = 0; b < batch_size; ++b) {
        const double u = rng.u01();
        double acc = 0.0;
        int32_t cls = spec.num_classes - 1;
        for (int32_t c = 0; c < spec.num_classes; ++c) {
            acc += dist[static_cast<size_t>(c)];
            if (u < acc) {
                cls = c;
                break;
            }
        }
        const auto& members = ds.class_index[static_cast<size_t>(cls)];
        if (members.empty()) {
            throw std::runtime_error("sample_contextual_batch: class " + std::to_string(cls) +
                                     " has no samples in the dataset");
        }
        picks.push_back(members[rng.below(members.size())]);
    }
    return take_batch(ds, picks);
}

// ----------------------------- tagged context -----------------------------

/// One of the three context regimes a bridge-mode run can train under.
using ContextSpec = std::variant<RiskProfile, CorruptionSpec, ShiftSpec>;

inline const char* context_kind(const ContextSpec& ctx) {
    switch (ctx.index()) {
        case 0: return "risk";
        case 1: return "corruption";
        case 2: return "shift";
    }
    return "?";
}

}  // namespace bmcx
