#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmcx/curve.hpp"
#include "bmcx/param_vector.hpp"
#include "bmcx/planar.hpp"

namespace bmcx {

// Versioned binary container:
//   magic "BMCK" | u32 version | u8 kind | u8 flags | f64 scale
//   | u32 entry count | entries (u16 name len, name, u8 ndim, i64 dims...)
//   | u32 vector count | vectors as little-endian f64 payloads
// All integers little-endian. load(save(x)) is bit-exact.

enum class CheckpointKind : uint8_t {
    ModelParams = 1,
    Curve = 2,
    Planar = 3,
};

inline const char* checkpoint_kind_name(CheckpointKind k) {
    switch (k) {
        case CheckpointKind::ModelParams: return "model";
        case CheckpointKind::Curve: return "curve";
        case CheckpointKind::Planar: return "planar";
    }
    return "?";
}

struct Checkpoint {
    CheckpointKind kind = CheckpointKind::ModelParams;
    std::shared_ptr<const ParamLayout> layout;
    std::vector<std::vector<double>> vectors;
    bool endpoints_frozen = false;  // curve only
    double scale = 1.0;             // planar s
};

namespace detail {

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kMagic[4] = {'B', 'M', 'C', 'K'};

inline void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_i64(std::string& out, int64_t v) {
    const auto u = static_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) {
    put_i64(out, static_cast<int64_t>(std::bit_cast<uint64_t>(d)));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) const {
        if (pos + n > buf.size()) {
            throw std::runtime_error("checkpoint: " + path + " truncated at byte " +
                                     std::to_string(buf.size()) + " (need " + std::to_string(pos + n) +
                                     ")");
        }
    }
    uint16_t u16() {
        need(2);
        const auto v = static_cast<uint16_t>(static_cast<unsigned char>(buf[pos]) |
                                             (static_cast<unsigned char>(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    int64_t i64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return static_cast<int64_t>(v);
    }
    double f64() { return std::bit_cast<double>(static_cast<uint64_t>(i64())); }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

/// Header + manifest size in bytes for a given layout; the payload adds
/// 8 * total * vectors on top.
inline size_t checkpoint_header_size(const ParamLayout& layout) {
    size_t n = 4 + 4 + 1 + 1 + 8 + 4;  // magic, version, kind, flags, scale, entry count
    for (const auto& e : layout.entries) {
        n += 2 + e.name.size() + 1 + 8 * e.shape.size();
    }
    n += 4;  // vector count
    return n;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    if (!ck.layout) throw std::invalid_argument("checkpoint: missing layout");
    std::string out;
    out.append(detail::kMagic, 4);
    detail::put_u32(out, detail::kCheckpointVersion);
    out.push_back(static_cast<char>(ck.kind));
    out.push_back(static_cast<char>(ck.endpoints_frozen ? 1 : 0));
    detail::put_f64(out, ck.scale);
    detail::put_u32(out, static_cast<uint32_t>(ck.layout->entries.size()));
    for (const auto& e : ck.layout->entries) {
        detail::put_u16(out, static_cast<uint16_t>(e.name.size()));
        out.append(e.name);
        out.push_back(static_cast<char>(e.shape.size()));
        for (int64_t d : e.shape) detail::put_i64(out, d);
    }
    detail::put_u32(out, static_cast<uint32_t>(ck.vectors.size()));
    for (const auto& v : ck.vectors) {
        if (static_cast<int64_t>(v.size()) != ck.layout->total) {
            throw std::invalid_argument("checkpoint: vector length does not match layout");
        }
        for (double d : v) detail::put_f64(out, d);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    const std::string buf{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    detail::Reader r{buf, 0, path};

    const std::string magic = r.bytes(4);
    if (std::memcmp(magic.data(), detail::kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: " + path + " bad magic at offset 0");
    }
    const uint32_t version = r.u32();
    if (version != detail::kCheckpointVersion) {
        throw std::runtime_error("checkpoint: " + path + " version " + std::to_string(version) +
                                 " not supported (want " + std::to_string(detail::kCheckpointVersion) +
                                 ")");
    }
    Checkpoint ck;
    const uint8_t kind = static_cast<uint8_t>(r.bytes(1)[0]);
    if (kind < 1 || kind > 3) {
        throw std::runtime_error("checkpoint: " + path + " unknown kind " + std::to_string(kind));
    }
    ck.kind = static_cast<CheckpointKind>(kind);
    ck.endpoints_frozen = r.bytes(1)[0] != 0;
    ck.scale = r.f64();

    auto layout = std::make_shared<ParamLayout>();
    const uint32_t entries = r.u32();
    for (uint32_t i = 0; i < entries; ++i) {
        ParamEntry e;
        const uint16_t len = r.u16();
        e.name = r.bytes(len);
        const auto ndim = static_cast<uint8_t>(r.bytes(1)[0]);
        e.shape.resize(ndim);
        for (auto& d : e.shape) d = r.i64();
        e.offset = layout->total;
        e.size = Tensor::numel_of(e.shape);
        layout->total += e.size;
        layout->entries.push_back(std::move(e));
    }
    ck.layout = layout;

    const uint32_t vectors = r.u32();
    ck.vectors.resize(vectors);
    for (auto& v : ck.vectors) {
        v.resize(static_cast<size_t>(layout->total));
        for (auto& d : v) d = r.f64();
    }
    return ck;
}

// ----------------------------- typed wrappers -----------------------------

inline void save_model_params(const std::string& path, const ParamVector& params) {
    Checkpoint ck;
    ck.kind = CheckpointKind::ModelParams;
    ck.layout = params.layout;
    ck.vectors = {params.values};
    save_checkpoint(path, ck);
}

inline void save_curve(const std::string& path, const CurveModel& curve) {
    Checkpoint ck;
    ck.kind = CheckpointKind::Curve;
    ck.layout = curve.theta0.layout;
    ck.vectors = {curve.theta0.values, curve.theta_b.values, curve.theta1.values};
    ck.endpoints_frozen = curve.endpoints_frozen;
    save_checkpoint(path, ck);
}

inline void save_planar(const std::string& path, const PlanarModel& m) {
    Checkpoint ck;
    ck.kind = CheckpointKind::Planar;
    ck.layout = m.w0.layout;
    ck.vectors = {m.w0.values, m.w1.values, m.w2.values};
    ck.scale = m.s;
    save_checkpoint(path, ck);
}

inline void require_kind(const Checkpoint& ck, CheckpointKind want, const std::string& path) {
    if (ck.kind != want) {
        throw std::runtime_error("checkpoint: " + path + " holds a " + checkpoint_kind_name(ck.kind) +
                                 ", expected " + checkpoint_kind_name(want));
    }
}

inline ParamVector load_model_params(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    require_kind(ck, CheckpointKind::ModelParams, path);
    return ParamVector(ck.layout, std::move(ck.vectors.at(0)));
}

inline CurveModel load_curve(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    require_kind(ck, CheckpointKind::Curve, path);
    CurveModel curve{ParamVector(ck.layout, std::move(ck.vectors.at(0))),
                     ParamVector(ck.layout, std::move(ck.vectors.at(1))),
                     ParamVector(ck.layout, std::move(ck.vectors.at(2))), ck.endpoints_frozen};
    return curve;
}

inline PlanarModel load_planar(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    require_kind(ck, CheckpointKind::Planar, path);
    PlanarModel m;
    m.w0 = ParamVector(ck.layout, std::move(ck.vectors.at(0)));
    m.w1 = ParamVector(ck.layout, std::move(ck.vectors.at(1)));
    m.w2 = ParamVector(ck.layout, std::move(ck.vectors.at(2)));
    m.s = ck.scale;
    return m;
}

}  // namespace bmcx
