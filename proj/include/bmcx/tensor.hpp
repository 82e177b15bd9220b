#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bmcx {

/// Dense row-major tensor of 64-bit floats. Shapes are immutable after
/// construction; data is freely mutable by owners.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> shape_, std::vector<double> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {
        if (numel_of(shape) != static_cast<int64_t>(data.size())) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                        " does not match data length " + std::to_string(data.size()));
        }
    }

    static Tensor zeros(std::vector<int64_t> shape_) {
        const auto n = numel_of(shape_);
        return Tensor(std::move(shape_), std::vector<double>(static_cast<size_t>(n), 0.0));
    }

    static Tensor full(std::vector<int64_t> shape_, double v) {
        const auto n = numel_of(shape_);
        return Tensor(std::move(shape_), std::vector<double>(static_cast<size_t>(n), v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

    static std::string shape_str(const std::vector<int64_t>& s) {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) os << ",";
            os << s[i];
        }
        os << ")";
        return os.str();
    }
};

inline bool all_finite(const Tensor& t) {
    for (double v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace bmcx
