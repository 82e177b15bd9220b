#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmcx/rng.hpp"
#include "bmcx/tensor.hpp"

namespace bmcx {

/// Labeled dataset. Images are (n,c,h,w); flat feature data is (n,f).
/// Immutable after load apart from normalization.
struct Dataset {
    Tensor images;
    std::vector<int32_t> labels;
    int32_t num_classes = 0;
    bool normalized = false;
    std::vector<double> mean;    // per channel (image) or per feature (flat)
    std::vector<double> stddev;  // populated by normalize()
    std::vector<std::vector<int64_t>> class_index;

    int64_t size() const { return images.rank() == 0 ? 0 : images.dim(0); }
    bool is_image() const { return images.rank() == 4; }

    void rebuild_class_index() {
        class_index.assign(static_cast<size_t>(num_classes), {});
        for (size_t i = 0; i < labels.size(); ++i) {
            const int32_t y = labels[i];
            if (y < 0 || y >= num_classes) {
                throw std::invalid_argument("dataset: label " + std::to_string(y) + " outside [0," +
                                            std::to_string(num_classes) + ")");
            }
            class_index[static_cast<size_t>(y)].push_back(static_cast<int64_t>(i));
        }
    }
};

struct Batch {
    Tensor x;
    std::vector<int32_t> y;
};

// ----------------------------- IDX binary format -----------------------------

namespace detail {

inline uint32_t read_be32(const std::vector<unsigned char>& buf, size_t offset, const std::string& path) {
    if (offset + 4 > buf.size()) {
        throw std::runtime_error("idx: " + path + " truncated at byte " + std::to_string(buf.size()) +
                                 " (need 4 bytes at offset " + std::to_string(offset) + ")");
    }
    return (static_cast<uint32_t>(buf[offset]) << 24) | (static_cast<uint32_t>(buf[offset + 1]) << 16) |
           (static_cast<uint32_t>(buf[offset + 2]) << 8) | static_cast<uint32_t>(buf[offset + 3]);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("idx: cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Big-endian IDX pair: images with magic 0x00000803 (n,rows,cols of u8),
/// labels with magic 0x00000801. Pixels are scaled to [0,1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);

    const uint32_t img_magic = detail::read_be32(img, 0, images_path);
    if (img_magic != 0x00000803u) {
        throw std::runtime_error("idx: " + images_path + " bad magic 0x" + [&] {
            char b[16];
            std::snprintf(b, sizeof b, "%08x", img_magic);
            return std::string(b);
        }() + " at offset 0 (want 00000803)");
    }
    const uint32_t n = detail::read_be32(img, 4, images_path);
    const uint32_t rows = detail::read_be32(img, 8, images_path);
    const uint32_t cols = detail::read_be32(img, 12, images_path);
    const size_t want = 16 + static_cast<size_t>(n) * rows * cols;
    if (img.size() < want) {
        throw std::runtime_error("idx: " + images_path + " truncated at byte " +
                                 std::to_string(img.size()) + " (want " + std::to_string(want) + ")");
    }

    const uint32_t lab_magic = detail::read_be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801u) {
        throw std::runtime_error("idx: " + labels_path + " bad magic at offset 0 (want 00000801)");
    }
    const uint32_t ln = detail::read_be32(lab, 4, labels_path);
    if (ln != n) {
        throw std::runtime_error("idx: " + std::to_string(n) + " images vs " + std::to_string(ln) +
                                 " labels");
    }
    if (lab.size() < 8 + ln) {
        throw std::runtime_error("idx: " + labels_path + " truncated at byte " +
                                 std::to_string(lab.size()) + " (want " + std::to_string(8 + ln) + ")");
    }

    Dataset ds;
    ds.images = Tensor::zeros({n, 1, rows, cols});
    for (size_t i = 0; i < static_cast<size_t>(n) * rows * cols; ++i) {
        ds.images.data[i] = static_cast<double>(img[16 + i]) / 255.0;
    }
    ds.labels.resize(n);
    int32_t max_label = -1;
    for (uint32_t i = 0; i < n; ++i) {
        ds.labels[i] = static_cast<int32_t>(lab[8 + i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    if (ds.num_classes > 0) ds.rebuild_class_index();
    return ds;
}

// ----------------------------- synthetic blobs -----------------------------

namespace detail {

/// Deterministic class centers: the first 2*dims classes sit on the signed
/// coordinate axes at unit distance; any overflow classes get fixed
/// pseudorandom unit directions independent of the dataset seed.
inline std::vector<double> blob_center(int cls, int dims) {
    std::vector<double> c(static_cast<size_t>(dims), 0.0);
    if (cls < 2 * dims) {
        c[static_cast<size_t>(cls / 2)] = (cls % 2 == 0) ? 1.0 : -1.0;
        return c;
    }
    RngStream rng(0x626C6F62u, static_cast<uint64_t>(cls));
    double norm = 0.0;
    for (auto& v : c) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : c) v /= norm;
    return c;
}

}  // namespace detail

/// Isotropic Gaussian clusters around deterministic class centers;
/// bit-reproducible per seed.
inline Dataset synth_blobs(int num_classes, int dims, int per_class, double spread, uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("synth_blobs: need at least 2 classes");
    if (dims < 1 || per_class < 0) throw std::invalid_argument("synth_blobs: bad dims/per_class");
    RngStream rng(seed, streams::kDataGen);
    const int64_t n = static_cast<int64_t>(num_classes) * per_class;
    Dataset ds;
    ds.images = Tensor::zeros({n, dims});
    ds.labels.resize(static_cast<size_t>(n));
    ds.num_classes = num_classes;
    int64_t row = 0;
    for (int cls = 0; cls < num_classes; ++cls) {
        const std::vector<double> center = detail::blob_center(cls, dims);
        for (int s = 0; s < per_class; ++s, ++row) {
            for (int d = 0; d < dims; ++d) {
                ds.images.data[row * dims + d] = center[static_cast<size_t>(d)] + spread * rng.normal();
            }
            ds.labels[static_cast<size_t>(row)] = cls;
        }
    }
    ds.rebuild_class_index();
    return ds;
}

// ----------------------------- normalization -----------------------------

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

namespace detail {

inline int64_t channel_count(const Tensor& t) { return t.rank() == 4 ? t.dim(1) : t.dim(1); }

inline int64_t channel_of(const Tensor& t, int64_t flat_index) {
    if (t.rank() == 4) {
        const int64_t hw = t.dim(2) * t.dim(3);
        return (flat_index / hw) % t.dim(1);
    }
    return flat_index % t.dim(1);
}

}  // namespace detail

inline void normalize_with(Dataset& ds, const NormStats& st);

/// Per-channel (image) or per-feature (flat) statistics over the dataset,
/// applied in place and returned for reuse on evaluation splits.
inline NormStats normalize(Dataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("normalize: empty dataset");
    const int64_t channels = detail::channel_count(ds.images);
    NormStats st;
    st.mean.assign(static_cast<size_t>(channels), 0.0);
    st.stddev.assign(static_cast<size_t>(channels), 0.0);
    std::vector<int64_t> counts(static_cast<size_t>(channels), 0);
    for (int64_t i = 0; i < ds.images.numel(); ++i) {
        const auto c = static_cast<size_t>(detail::channel_of(ds.images, i));
        st.mean[c] += ds.images.data[i];
        ++counts[c];
    }
    for (size_t c = 0; c < st.mean.size(); ++c) st.mean[c] /= static_cast<double>(counts[c]);
    for (int64_t i = 0; i < ds.images.numel(); ++i) {
        const auto c = static_cast<size_t>(detail::channel_of(ds.images, i));
        const double d = ds.images.data[i] - st.mean[c];
        st.stddev[c] += d * d;
    }
    for (size_t c = 0; c < st.stddev.size(); ++c) {
        st.stddev[c] = std::sqrt(st.stddev[c] / static_cast<double>(counts[c]));
        if (st.stddev[c] == 0.0) {
            throw std::runtime_error("normalize: channel " + std::to_string(c) + " has zero variance");
        }
    }
    normalize_with(ds, st);
    return st;
}

inline void normalize_with(Dataset& ds, const NormStats& st) {
    for (int64_t i = 0; i < ds.images.numel(); ++i) {
        const auto c = static_cast<size_t>(detail::channel_of(ds.images, i));
        ds.images.data[i] = (ds.images.data[i] - st.mean[c]) / st.stddev[c];
    }
    ds.normalized = true;
    ds.mean = st.mean;
    ds.stddev = st.stddev;
}

inline Tensor denormalize(const Tensor& x, const NormStats& st) {
    Tensor out = x;
    for (int64_t i = 0; i < out.numel(); ++i) {
        const auto c = static_cast<size_t>(detail::channel_of(out, i));
        out.data[i] = out.data[i] * st.stddev[c] + st.mean[c];
    }
    return out;
}

// ----------------------------- batching & augmentation -----------------------------

inline Batch take_batch(const Dataset& ds, std::span<const int64_t> indices) {
    std::vector<int64_t> shape = ds.images.shape;
    shape[0] = static_cast<int64_t>(indices.size());
    int64_t stride = 1;
    for (size_t i = 1; i < shape.size(); ++i) stride *= shape[i];
    Batch b;
    b.x = Tensor::zeros(shape);
    b.y.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t src = indices[i];
        std::copy(ds.images.data.begin() + src * stride, ds.images.data.begin() + (src + 1) * stride,
                  b.x.data.begin() + static_cast<int64_t>(i) * stride);
        b.y[i] = ds.labels[static_cast<size_t>(src)];
    }
    return b;
}

/// Train-time augmentation: per image, horizontal flip with the given
/// probability, then zero-pad by `pad` and crop back to the original size at
/// a uniform offset. Labels are untouched; output shape equals input shape.
inline void augment_inplace(Tensor& images, RngStream& rng, double flip_prob = 0.5, int pad = 4) {
    if (images.rank() != 4) {
        throw std::invalid_argument("augment: expected (N,C,H,W), got " + Tensor::shape_str(images.shape));
    }
    const int64_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    std::vector<double> scratch(static_cast<size_t>(c * h * w));
    for (int64_t i = 0; i < n; ++i) {
        double* img = &images.data[i * c * h * w];
        if (flip_prob > 0.0 && rng.u01() < flip_prob) {
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w / 2; ++x) {
                        std::swap(img[(ch * h + y) * w + x], img[(ch * h + y) * w + (w - 1 - x)]);
                    }
        }
        if (pad > 0) {
            const int64_t dy = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * pad + 1)));
            const int64_t dx = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * pad + 1)));
            // Crop window at (dy,dx) in the zero-padded image: source pixel
            // (y + dy - pad, x + dx - pad), zero outside.
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        const int64_t sy = y + dy - pad;
                        const int64_t sx = x + dx - pad;
                        scratch[static_cast<size_t>((ch * h + y) * w + x)] =
                            (sy >= 0 && sy < h && sx >= 0 && sx < w) ? img[(ch * h + sy) * w + sx] : 0.0;
                    }
            std::copy(scratch.begin(), scratch.end(), img);
        }
    }
}

}  // namespace bmcx
