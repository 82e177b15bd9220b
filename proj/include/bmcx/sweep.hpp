#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bmcx/context.hpp"
#include "bmcx/curve.hpp"
#include "bmcx/data.hpp"
#include "bmcx/eval.hpp"
#include "bmcx/model.hpp"
#include "bmcx/planar.hpp"

namespace bmcx {

struct SweepRow {
    double t = 0.0;
    std::string key;  // "overall" or "class_<k>"
    double accuracy = 0.0;
    int64_t n = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::string config_hash;
    std::string version;
    nlohmann::json metadata;  // context kind, per-t notes (favored class, ...)
};

/// Shortest round-trip decimal form; keeps CSV output byte-stable.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::vector<double> uniform_grid(int64_t points) {
    if (points < 2) throw std::invalid_argument("grid needs at least 2 points");
    std::vector<double> g(static_cast<size_t>(points));
    for (int64_t i = 0; i < points; ++i) {
        g[static_cast<size_t>(i)] = static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return g;
}

/// Sweep a trained curve across the context grid. Per t the sampled model is
/// evaluated on the context-matched test set:
///   risk       - the unmodified test set (per-class accuracy readout)
///   corruption - the test set corrupted at severity t
///   shift      - the test set resampled (with replacement) from P(Y|t)
/// Per-cell rng streams derive from eval_seed, so the sweep is deterministic
/// and cells are order-independent.
inline SweepResult eval_sweep_curve(const CurveModel& curve, const Model& model, const Dataset& eval_ds,
                                    const ContextSpec& context, std::span<const double> grid,
                                    uint64_t eval_seed) {
    SweepResult result;
    result.version = "";
    result.metadata["context"] = context_kind(context);
    std::vector<int64_t> all(static_cast<size_t>(eval_ds.size()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
    const Batch base = take_batch(eval_ds, all);

    nlohmann::json favored = nlohmann::json::array();
    for (size_t gi = 0; gi < grid.size(); ++gi) {
        const double t = grid[gi];
        require_unit_interval(t, "eval_sweep");
        const ParamVector w = sample_model(curve, t);

        Tensor x = base.x;
        std::vector<int32_t> y = base.y;
        if (const auto* corr = std::get_if<CorruptionSpec>(&context)) {
            RngStream cell(eval_seed, streams::kEval + gi);
            x = corrupt(x, t, *corr, cell);
        } else if (const auto* shift = std::get_if<ShiftSpec>(&context)) {
            RngStream cell(eval_seed, streams::kEval + gi);
            Batch resampled = sample_contextual_batch(eval_ds, t, *shift, eval_ds.size(), cell);
            x = std::move(resampled.x);
            y = std::move(resampled.y);
        } else if (const auto* risk = std::get_if<RiskProfile>(&context)) {
            favored.push_back({{"t", t}, {"favored_class", favored_class(t, risk->num_classes)}});
        }

        const PerClassAccuracy acc = per_class_accuracy(model, w, x, y, eval_ds.num_classes);
        result.rows.push_back({t, "overall", acc.overall, acc.total});
        for (int32_t c = 0; c < eval_ds.num_classes; ++c) {
            if (acc.count[static_cast<size_t>(c)] > 0) {
                result.rows.push_back({t, "class_" + std::to_string(c),
                                       acc.accuracy[static_cast<size_t>(c)],
                                       acc.count[static_cast<size_t>(c)]});
            }
        }
    }
    if (!favored.empty()) result.metadata["favored_class_per_t"] = favored;
    if (std::holds_alternative<ShiftSpec>(context)) {
        result.metadata["shift_eval"] = "resampled with replacement from P(Y|t)";
    }
    return result;
}

// ----------------------------- csv io -----------------------------

inline void write_sweep_csv(const std::string& path, const SweepResult& result) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("sweep: cannot write " + path);
    f << "t,key,accuracy,n\n";
    for (const auto& r : result.rows) {
        f << format_double(r.t) << ',' << r.key << ',' << format_double(r.accuracy) << ',' << r.n
          << '\n';
    }
}

inline void write_sweep_metadata(const std::string& path, const SweepResult& result) {
    nlohmann::json meta = result.metadata;
    meta["config_hash"] = result.config_hash;
    meta["version"] = result.version;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("sweep: cannot write " + path);
    f << meta.dump(2) << '\n';
}

inline std::vector<SweepRow> read_sweep_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("sweep: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "t,key,accuracy,n") {
        throw std::runtime_error("sweep: " + path + " does not match the schema 't,key,accuracy,n'");
    }
    std::vector<SweepRow> rows;
    size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string t_s, key, acc_s, n_s;
        if (!std::getline(ss, t_s, ',') || !std::getline(ss, key, ',') ||
            !std::getline(ss, acc_s, ',') || !std::getline(ss, n_s)) {
            throw std::runtime_error("sweep: " + path + " malformed at line " + std::to_string(lineno));
        }
        SweepRow r;
        try {
            r.t = std::stod(t_s);
            r.accuracy = std::stod(acc_s);
            r.n = std::stoll(n_s);
        } catch (const std::exception&) {
            throw std::runtime_error("sweep: " + path + " bad number at line " + std::to_string(lineno));
        }
        r.key = key;
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Planar grids use their own schema: t1,t2,accuracy,n_eval.
inline void write_planar_grid_csv(const std::string& path, const AccuracyGrid& grid) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("planar grid: cannot write " + path);
    f << "t1,t2,accuracy,n_eval\n";
    for (int64_t i = 0; i < grid.rows; ++i) {
        for (int64_t j = 0; j < grid.cols; ++j) {
            f << format_double(static_cast<double>(i) / 10.0) << ','
              << format_double(static_cast<double>(j) / 10.0) << ',' << format_double(grid.at(i, j))
              << ',' << grid.n_eval[static_cast<size_t>(i * grid.cols + j)] << '\n';
        }
    }
}

}  // namespace bmcx
