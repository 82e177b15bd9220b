#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bmcx/model.hpp"
#include "bmcx/param_vector.hpp"
#include "bmcx/tape.hpp"
#include "bmcx/tensor.hpp"

namespace bmcx {

inline std::vector<int32_t> predict(const Model& model, const ParamVector& params, const Tensor& batch) {
    Tape tape;
    const ForwardResult fwd = model.forward(tape, params, batch, /*trainable=*/false);
    const Tensor& logits = tape.value(fwd.logits);
    const int64_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int32_t> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int32_t best = 0;
        for (int32_t j = 1; j < k; ++j) {
            if (logits.data[i * k + j] > logits.data[i * k + best]) best = j;
        }
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

inline double accuracy(const Model& model, const ParamVector& params, const Tensor& x,
                       std::span<const int32_t> y) {
    if (y.empty()) return 0.0;
    const std::vector<int32_t> pred = predict(model, params, x);
    int64_t correct = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        if (pred[i] == y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(y.size());
}

struct PerClassAccuracy {
    std::vector<double> accuracy;  // per class; 0 when the class is absent
    std::vector<int64_t> count;
    double overall = 0.0;
    int64_t total = 0;
};

inline PerClassAccuracy per_class_accuracy(const Model& model, const ParamVector& params, const Tensor& x,
                                           std::span<const int32_t> y, int32_t num_classes) {
    PerClassAccuracy r;
    r.accuracy.assign(static_cast<size_t>(num_classes), 0.0);
    r.count.assign(static_cast<size_t>(num_classes), 0);
    if (y.empty()) return r;
    const std::vector<int32_t> pred = predict(model, params, x);
    std::vector<int64_t> correct(static_cast<size_t>(num_classes), 0);
    int64_t total_correct = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        const auto c = static_cast<size_t>(y[i]);
        ++r.count[c];
        if (pred[i] == y[i]) {
            ++correct[c];
            ++total_correct;
        }
    }
    for (size_t c = 0; c < r.accuracy.size(); ++c) {
        if (r.count[c] > 0) r.accuracy[c] = static_cast<double>(correct[c]) / static_cast<double>(r.count[c]);
    }
    r.total = static_cast<int64_t>(y.size());
    r.overall = static_cast<double>(total_correct) / static_cast<double>(r.total);
    return r;
}

}  // namespace bmcx
