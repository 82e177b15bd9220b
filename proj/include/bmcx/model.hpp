#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bmcx/param_vector.hpp"
#include "bmcx/rng.hpp"
#include "bmcx/tape.hpp"
#include "bmcx/tensor.hpp"

namespace bmcx {

// ----------------------------- layer descriptors -----------------------------

struct LinearSpec {
    int64_t in = 0;
    int64_t out = 0;
    bool bias = true;
};

struct Conv2dSpec {
    int64_t in_ch = 0;
    int64_t out_ch = 0;
    int64_t kernel = 3;
    int64_t stride = 1;
    int64_t pad = 1;
    bool bias = true;
};

struct ReluSpec {};

struct MaxPool2dSpec {
    int64_t k = 2;
};

struct FlattenSpec {};

using LayerSpec = std::variant<LinearSpec, Conv2dSpec, ReluSpec, MaxPool2dSpec, FlattenSpec>;

inline const char* layer_name(const LayerSpec& l) {
    switch (l.index()) {
        case 0: return "linear";
        case 1: return "conv2d";
        case 2: return "relu";
        case 3: return "max-pool2d";
        case 4: return "flatten";
    }
    return "?";
}

/// Declarative model description: input shape (without the batch dimension)
/// plus an ordered layer list. Shape composition is validated at build time.
struct ModelSpec {
    std::vector<int64_t> input_shape;
    std::vector<LayerSpec> layers;
};

inline int64_t count_params(const ModelSpec& spec) {
    int64_t total = 0;
    for (const auto& l : spec.layers) {
        if (const auto* lin = std::get_if<LinearSpec>(&l)) {
            total += lin->in * lin->out + (lin->bias ? lin->out : 0);
        } else if (const auto* cv = std::get_if<Conv2dSpec>(&l)) {
            total += cv->out_ch * cv->in_ch * cv->kernel * cv->kernel + (cv->bias ? cv->out_ch : 0);
        }
    }
    return total;
}

/// One model's forward pass on a tape: the logits node plus the trainable
/// leaves in manifest order, for gathering a flat gradient after backward.
struct ForwardResult {
    int logits = -1;
    std::vector<int> param_leaves;
};

class Model {
public:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
        auto layout = std::make_shared<ParamLayout>();
        std::vector<int64_t> shape = spec_.input_shape;
        if (shape.empty()) throw std::invalid_argument("model: empty input shape");
        for (size_t i = 0; i < spec_.layers.size(); ++i) {
            shape = compose(shape, spec_.layers[i], static_cast<int>(i), layout.get());
        }
        output_shape_ = shape;
        layout_ = std::move(layout);
    }

    const ModelSpec& spec() const { return spec_; }
    const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }
    const std::vector<int64_t>& output_shape() const { return output_shape_; }
    int64_t param_count() const { return layout_->total; }

    /// Fan-in-scaled uniform initialization, deterministic per (spec, seed).
    ParamVector init_params(uint64_t seed) const {
        RngStream rng(seed, streams::kParamInit);
        std::vector<double> v(static_cast<size_t>(layout_->total));
        for (const auto& e : layout_->entries) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in_.at(e.name)));
            for (int64_t i = 0; i < e.size; ++i) {
                v[static_cast<size_t>(e.offset + i)] = (2.0 * rng.u01() - 1.0) * bound;
            }
        }
        return ParamVector(layout_, std::move(v));
    }

    /// Pure function of (params, batch); every call records fresh nodes on the
    /// given tape. Batch shape is (N, input_shape...).
    ForwardResult forward(Tape& tape, const ParamVector& params, const Tensor& batch,
                          bool trainable = true) const {
        if (!params.layout || !(*params.layout == *layout_)) {
            throw std::invalid_argument("forward: params do not match model layout");
        }
        check_batch_shape(batch);
        ForwardResult out;
        size_t entry_idx = 0;
        auto take_leaf = [&](const std::string& suffix) {
            const ParamEntry& e = layout_->entries[entry_idx];
            if (e.name.substr(e.name.find('.') + 1) != suffix) {
                throw std::logic_error("forward: manifest out of sync at " + e.name);
            }
            std::vector<double> vals(params.values.begin() + e.offset,
                                     params.values.begin() + e.offset + e.size);
            const int leaf = tape.leaf(Tensor(e.shape, std::move(vals)), trainable);
            out.param_leaves.push_back(leaf);
            ++entry_idx;
            return leaf;
        };

        int cur = tape.leaf(batch, false);
        for (const auto& l : spec_.layers) {
            if (const auto* lin = std::get_if<LinearSpec>(&l)) {
                const int w = take_leaf("weight");
                cur = tape.matmul(cur, w);
                if (lin->bias) cur = tape.add(cur, take_leaf("bias"));
            } else if (const auto* cv = std::get_if<Conv2dSpec>(&l)) {
                const int w = take_leaf("weight");
                cur = tape.conv2d(cur, w, static_cast<int>(cv->stride), static_cast<int>(cv->pad));
                if (cv->bias) cur = tape.add(cur, take_leaf("bias"));
            } else if (std::holds_alternative<ReluSpec>(l)) {
                cur = tape.relu(cur);
            } else if (const auto* mp = std::get_if<MaxPool2dSpec>(&l)) {
                cur = tape.max_pool2d(cur, static_cast<int>(mp->k));
            } else {
                cur = tape.flatten(cur);
            }
        }
        out.logits = cur;
        return out;
    }

    /// Gather leaf gradients into one flat vector in manifest order. Call
    /// after tape.backward().
    std::vector<double> flat_grad(const Tape& tape, const ForwardResult& fwd) const {
        std::vector<double> g(static_cast<size_t>(layout_->total), 0.0);
        for (size_t i = 0; i < fwd.param_leaves.size(); ++i) {
            const ParamEntry& e = layout_->entries[i];
            const Tensor& lg = tape.grad(fwd.param_leaves[i]);
            for (int64_t j = 0; j < e.size; ++j) g[static_cast<size_t>(e.offset + j)] = lg.data[j];
        }
        return g;
    }

private:
    void check_batch_shape(const Tensor& batch) const {
        bool ok = batch.rank() == static_cast<int>(spec_.input_shape.size()) + 1;
        if (ok) {
            for (size_t i = 0; i < spec_.input_shape.size(); ++i) {
                if (batch.dim(static_cast<int>(i) + 1) != spec_.input_shape[i]) ok = false;
            }
        }
        if (!ok) {
            throw std::invalid_argument("forward: batch shape " + Tensor::shape_str(batch.shape) +
                                        " does not match model input " +
                                        Tensor::shape_str(spec_.input_shape));
        }
    }

    std::vector<int64_t> compose(const std::vector<int64_t>& in, const LayerSpec& l, int index,
                                 ParamLayout* layout) {
        auto fail = [&](const std::string& why) {
            throw std::invalid_argument("model: layer " + std::to_string(index) + " (" + layer_name(l) +
                                        ") " + why + ", got " + Tensor::shape_str(in) +
                                        (index == 0 ? " from the input" : " from layer " + std::to_string(index - 1)));
        };
        auto add_entry = [&](const std::string& name, std::vector<int64_t> shape, int64_t fan_in) {
            ParamEntry e;
            e.name = "layer" + std::to_string(index) + "." + name;
            e.shape = std::move(shape);
            e.offset = layout->total;
            e.size = Tensor::numel_of(e.shape);
            layout->total += e.size;
            fan_in_[e.name] = fan_in;
            layout->entries.push_back(std::move(e));
        };
        if (const auto* lin = std::get_if<LinearSpec>(&l)) {
            if (in.size() != 1 || in[0] != lin->in) {
                fail("expects " + std::to_string(lin->in) + " flat features");
            }
            add_entry("weight", {lin->in, lin->out}, lin->in);
            if (lin->bias) add_entry("bias", {lin->out}, lin->in);
            return {lin->out};
        }
        if (const auto* cv = std::get_if<Conv2dSpec>(&l)) {
            if (in.size() != 3 || in[0] != cv->in_ch) {
                fail("expects (C,H,W) input with C=" + std::to_string(cv->in_ch));
            }
            if (cv->kernel < 1 || cv->stride < 1 || cv->pad < 0) fail("has invalid kernel/stride/pad");
            const int64_t h = (in[1] + 2 * cv->pad - cv->kernel);
            const int64_t w = (in[2] + 2 * cv->pad - cv->kernel);
            if (h < 0 || w < 0) fail("kernel larger than padded input");
            const int64_t fan = cv->in_ch * cv->kernel * cv->kernel;
            add_entry("weight", {cv->out_ch, cv->in_ch, cv->kernel, cv->kernel}, fan);
            if (cv->bias) add_entry("bias", {cv->out_ch}, fan);
            return {cv->out_ch, h / cv->stride + 1, w / cv->stride + 1};
        }
        if (std::holds_alternative<ReluSpec>(l)) return in;
        if (const auto* mp = std::get_if<MaxPool2dSpec>(&l)) {
            if (in.size() != 3 || mp->k < 1 || in[1] % mp->k != 0 || in[2] % mp->k != 0) {
                fail("needs (C,H,W) with H,W divisible by " + std::to_string(mp->k));
            }
            return {in[0], in[1] / mp->k, in[2] / mp->k};
        }
        // flatten
        int64_t n = 1;
        for (int64_t d : in) n *= d;
        return {n};
    }

    ModelSpec spec_;
    std::shared_ptr<const ParamLayout> layout_;
    std::vector<int64_t> output_shape_;
    std::map<std::string, int64_t> fan_in_;
};

}  // namespace bmcx
