#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "basisloss/losses.hpp"
#include "basisloss/model.hpp"

namespace basisloss {

/// Every trainable piece of a run.
struct ModelState {
    MlpEncoder encoder;
    ClassifierHead head;
    CenterStore centers;
    Ge2eParams ge2e;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
};

inline constexpr std::string_view kCheckpointMagic = "BLCKPT01";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& os) : os_(os) {}

    void raw(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u8(std::uint8_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void text(std::string_view s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void doubles(std::span<const double> v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }
    void matrix(const Matrix& m) {
        u64(m.rows());
        u64(m.cols());
        raw(m.values().data(), m.size() * sizeof(double));
    }

private:
    std::ostream& os_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& is) : is_(is) {}

    void raw(void* p, std::size_t n) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!is_) throw FormatError("checkpoint is truncated");
    }
    std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
    std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
    std::uint8_t u8() { std::uint8_t v; raw(&v, sizeof v); return v; }
    double f64() { double v; raw(&v, sizeof v); return v; }
    std::string text() {
        std::string s(bounded(u64()), '\0');
        raw(s.data(), s.size());
        return s;
    }
    Vector doubles() {
        Vector v(bounded(u64()));
        raw(v.data(), v.size() * sizeof(double));
        return v;
    }
    Matrix matrix() {
        const std::size_t r = bounded(u64());
        const std::size_t c = bounded(u64());
        std::vector<double> v(bounded(r * c));
        raw(v.data(), v.size() * sizeof(double));
        return Matrix(r, c, std::move(v));
    }

private:
    static std::size_t bounded(std::uint64_t n) {
        if (n > (std::uint64_t{1} << 32)) throw FormatError("checkpoint field length is implausible");
        return static_cast<std::size_t>(n);
    }

    std::istream& is_;
};

}  // namespace detail

/// Binary container: magic, version, seed, step, the provenance text, then
/// encoder, head, center store and GE2E score parameters in that order.
/// Doubles are stored as their raw bytes so a round trip is bit-exact.
inline void write_checkpoint(std::ostream& os, const ModelState& m, std::string_view provenance) {
    detail::BinaryWriter w(os);
    w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.u32(kCheckpointVersion);
    w.u64(m.seed);
    w.u64(m.step);
    w.text(provenance);

    w.u64(m.encoder.layer_dims.size());
    for (std::size_t d : m.encoder.layer_dims) w.u64(d);
    w.f64(m.encoder.leaky_slope);
    w.u8(m.encoder.activate_output ? 1 : 0);
    for (std::size_t l = 0; l < m.encoder.depth(); ++l) {
        w.matrix(m.encoder.weights[l]);
        w.doubles(m.encoder.biases[l]);
    }

    w.matrix(m.head.basis);
    w.doubles(m.head.bias);
    w.u8(m.head.use_bias ? 1 : 0);

    w.matrix(m.centers.centers);
    w.f64(m.centers.alpha);
    w.f64(m.centers.lambda);

    w.f64(m.ge2e.w_score);
    w.f64(m.ge2e.b_score);
    if (!os) throw FormatError("failed writing checkpoint");
}

struct LoadedCheckpoint {
    ModelState model;
    std::string provenance;
};

inline LoadedCheckpoint read_checkpoint(std::istream& is) {
    detail::BinaryReader r(is);
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::string_view(magic, sizeof magic) != kCheckpointMagic) throw FormatError("not a basisloss checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    LoadedCheckpoint out;
    auto& m = out.model;
    m.seed = r.u64();
    m.step = r.u64();
    out.provenance = r.text();

    const std::size_t n_dims = static_cast<std::size_t>(r.u64());
    if (n_dims < 2 || n_dims > 64) throw FormatError("checkpoint encoder depth is implausible");
    for (std::size_t i = 0; i < n_dims; ++i) m.encoder.layer_dims.push_back(static_cast<std::size_t>(r.u64()));
    m.encoder.leaky_slope = r.f64();
    m.encoder.activate_output = r.u8() != 0;
    for (std::size_t l = 0; l + 1 < n_dims; ++l) {
        m.encoder.weights.push_back(r.matrix());
        m.encoder.biases.push_back(r.doubles());
    }
    m.encoder.validate();

    m.head.basis = r.matrix();
    m.head.bias = r.doubles();
    m.head.use_bias = r.u8() != 0;

    m.centers.centers = r.matrix();
    m.centers.alpha = r.f64();
    m.centers.lambda = r.f64();

    m.ge2e.w_score = r.f64();
    m.ge2e.b_score = r.f64();
    return out;
}

inline void save_checkpoint(const std::string& path, const ModelState& m, std::string_view provenance) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_checkpoint(os, m, provenance);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    return read_checkpoint(is);
}

}  // namespace basisloss
