#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace bmcx {

struct ParamEntry {
    std::string name;
    std::vector<int64_t> shape;
    int64_t offset = 0;
    int64_t size = 0;
};

/// Ordered (name, shape, offset) manifest of every trainable tensor in a
/// model. Shared by all ParamVectors of that model, so weight-space algebra
/// can stay flat.
struct ParamLayout {
    std::vector<ParamEntry> entries;
    int64_t total = 0;

    bool operator==(const ParamLayout& o) const {
        if (total != o.total || entries.size() != o.entries.size()) return false;
        for (size_t i = 0; i < entries.size(); ++i) {
            const auto& a = entries[i];
            const auto& b = o.entries[i];
            if (a.name != b.name || a.shape != b.shape || a.offset != b.offset || a.size != b.size)
                return false;
        }
        return true;
    }
};

/// Flat, contiguous view of all trainable weights of one model.
struct ParamVector {
    std::shared_ptr<const ParamLayout> layout;
    std::vector<double> values;

    ParamVector() = default;
    ParamVector(std::shared_ptr<const ParamLayout> layout_, std::vector<double> values_)
        : layout(std::move(layout_)), values(std::move(values_)) {
        if (layout && static_cast<int64_t>(values.size()) != layout->total) {
            throw std::invalid_argument("param vector: " + std::to_string(values.size()) +
                                        " values for layout of " + std::to_string(layout->total));
        }
    }

    int64_t size() const { return static_cast<int64_t>(values.size()); }

    static ParamVector zeros_like(const ParamVector& other) {
        return ParamVector(other.layout, std::vector<double>(other.values.size(), 0.0));
    }
};

inline void require_same_layout(const ParamVector& a, const ParamVector& b, const char* who) {
    if (!a.layout || !b.layout || !(*a.layout == *b.layout)) {
        throw std::invalid_argument(std::string(who) + ": param vectors do not share a layout");
    }
}

}  // namespace bmcx
