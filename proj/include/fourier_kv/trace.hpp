#pragma once

// KV-cache traces and the KVTR on-disk format.
//
// KVTR file layout (all integers little-endian u32):
//   magic    "KVTR" (4 bytes)
//   version  1
//   layers, kv_heads, head_dim, seq_len
//   dtype    1 = f32
//   payload  f32 little-endian, order [layer][K then V][head][position][dim]

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fourier_kv/matrix.hpp"

namespace fourier_kv {

enum class CacheKind : std::size_t { Key = 0, Value = 1 };

inline const char* to_string(CacheKind k) { return k == CacheKind::Key ? "K" : "V"; }

struct TraceGeometry {
    std::size_t layers = 0;
    std::size_t kv_heads = 0;
    std::size_t head_dim = 0;
    std::size_t seq_len = 0;

    std::size_t element_count() const noexcept { return layers * 2 * kv_heads * seq_len * head_dim; }
    bool operator==(const TraceGeometry&) const = default;
};

class KVTrace {
public:
    KVTrace() = default;
    explicit KVTrace(TraceGeometry g, std::string provenance = {})
        : geom_(g), data_(g.element_count(), 0.0f), provenance_(std::move(provenance)) {}
    KVTrace(TraceGeometry g, std::vector<float> data, std::string provenance)
        : geom_(g), data_(std::move(data)), provenance_(std::move(provenance)) {
        if (data_.size() != geom_.element_count())
            throw std::invalid_argument("KVTrace: payload size does not match geometry");
    }

    const TraceGeometry& geometry() const noexcept { return geom_; }
    std::size_t layers() const noexcept { return geom_.layers; }
    std::size_t kv_heads() const noexcept { return geom_.kv_heads; }
    std::size_t head_dim() const noexcept { return geom_.head_dim; }
    std::size_t seq_len() const noexcept { return geom_.seq_len; }
    const std::string& provenance() const noexcept { return provenance_; }
    void set_provenance(std::string p) { provenance_ = std::move(p); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    /// seq_len x head_dim block for one (layer, K|V, head), contiguous.
    std::span<float> head(std::size_t layer, CacheKind kind, std::size_t h) {
        return {data_.data() + head_offset(layer, kind, h), geom_.seq_len * geom_.head_dim};
    }
    std::span<const float> head(std::size_t layer, CacheKind kind, std::size_t h) const {
        return {data_.data() + head_offset(layer, kind, h), geom_.seq_len * geom_.head_dim};
    }

    float& at(std::size_t layer, CacheKind kind, std::size_t h, std::size_t pos, std::size_t dim) {
        return data_[head_offset(layer, kind, h) + pos * geom_.head_dim + dim];
    }
    float at(std::size_t layer, CacheKind kind, std::size_t h, std::size_t pos, std::size_t dim) const {
        return data_[head_offset(layer, kind, h) + pos * geom_.head_dim + dim];
    }

    /// Copy of positions [first, first+count) of one head as a matrix.
    MatrixF head_matrix(std::size_t layer, CacheKind kind, std::size_t h, std::size_t first = 0,
                        std::size_t count = SIZE_MAX) const {
        if (count == SIZE_MAX) count = geom_.seq_len - first;
        if (first + count > geom_.seq_len) throw std::out_of_range("head_matrix: range past seq_len");
        auto src = head(layer, kind, h).subspan(first * geom_.head_dim, count * geom_.head_dim);
        return MatrixF(count, geom_.head_dim, std::vector<float>(src.begin(), src.end()));
    }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const KVTrace& o) const { return geom_ == o.geom_ && data_ == o.data_; }

private:
    std::size_t head_offset(std::size_t layer, CacheKind kind, std::size_t h) const {
        const std::size_t block = geom_.seq_len * geom_.head_dim;
        return ((layer * 2 + static_cast<std::size_t>(kind)) * geom_.kv_heads + h) * block;
    }

    TraceGeometry geom_;
    std::vector<float> data_;
    std::string provenance_;
};

enum class TraceErrorCode {
    Io,
    TruncatedHeader,
    BadMagic,
    UnsupportedVersion,
    UnknownDtype,
    TruncatedPayload,
    SizeMismatch,
    NonFinite,
};

inline const char* to_string(TraceErrorCode c) {
    switch (c) {
        case TraceErrorCode::Io: return "io error";
        case TraceErrorCode::TruncatedHeader: return "truncated header";
        case TraceErrorCode::BadMagic: return "bad magic";
        case TraceErrorCode::UnsupportedVersion: return "unsupported version";
        case TraceErrorCode::UnknownDtype: return "unknown dtype";
        case TraceErrorCode::TruncatedPayload: return "truncated payload";
        case TraceErrorCode::SizeMismatch: return "size mismatch";
        case TraceErrorCode::NonFinite: return "non-finite value";
    }
    return "unknown";
}

class TraceFormatError : public std::runtime_error {
public:
    TraceFormatError(TraceErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}
    TraceErrorCode code() const noexcept { return code_; }

private:
    TraceErrorCode code_;
};

namespace kvtr {

inline constexpr std::array<char, 4> kMagic{'K', 'V', 'T', 'R'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;
inline constexpr std::size_t kHeaderBytes = 28;

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > UINT32_MAX) throw std::invalid_argument(std::string("KVTR: ") + what + " exceeds u32");
    return static_cast<std::uint32_t>(v);
}

}  // namespace kvtr

inline std::vector<unsigned char> encode_trace(const KVTrace& trace) {
    const auto& g = trace.geometry();
    std::vector<unsigned char> buf;
    buf.reserve(kvtr::kHeaderBytes + g.element_count() * 4);
    buf.insert(buf.end(), kvtr::kMagic.begin(), kvtr::kMagic.end());
    kvtr::put_u32(buf, kvtr::kVersion);
    kvtr::put_u32(buf, kvtr::checked_u32(g.layers, "layers"));
    kvtr::put_u32(buf, kvtr::checked_u32(g.kv_heads, "kv_heads"));
    kvtr::put_u32(buf, kvtr::checked_u32(g.head_dim, "head_dim"));
    kvtr::put_u32(buf, kvtr::checked_u32(g.seq_len, "seq_len"));
    kvtr::put_u32(buf, kvtr::kDtypeF32);
    for (float f : trace.data()) kvtr::put_u32(buf, std::bit_cast<std::uint32_t>(f));
    return buf;
}

inline KVTrace decode_trace(std::span<const unsigned char> bytes, std::string provenance = {}) {
    using E = TraceErrorCode;
    if (bytes.size() < kvtr::kHeaderBytes)
        throw TraceFormatError(E::TruncatedHeader,
                               "file has " + std::to_string(bytes.size()) + " bytes, header needs 28");
    if (std::memcmp(bytes.data(), kvtr::kMagic.data(), 4) != 0)
        throw TraceFormatError(E::BadMagic, "expected \"KVTR\"");
    const unsigned char* p = bytes.data();
    const std::uint32_t version = kvtr::get_u32(p + 4);
    if (version != kvtr::kVersion)
        throw TraceFormatError(E::UnsupportedVersion, "version " + std::to_string(version));
    TraceGeometry g;
    g.layers = kvtr::get_u32(p + 8);
    g.kv_heads = kvtr::get_u32(p + 12);
    g.head_dim = kvtr::get_u32(p + 16);
    g.seq_len = kvtr::get_u32(p + 20);
    const std::uint32_t dtype = kvtr::get_u32(p + 24);
    if (dtype != kvtr::kDtypeF32)
        throw TraceFormatError(E::UnknownDtype, "dtype code " + std::to_string(dtype));

    const std::size_t payload = bytes.size() - kvtr::kHeaderBytes;
    const std::size_t expected = g.element_count() * 4;
    if (payload != expected) {
        // A payload holding a whole number of positions (just not the declared
        // count) is a geometry disagreement; anything else is a cut-off file.
        const std::size_t per_position = g.layers * 2 * g.kv_heads * g.head_dim * 4;
        const bool whole_positions = per_position != 0 && payload % per_position == 0;
        const std::string detail = "header implies " + std::to_string(expected) +
                                   " payload bytes, found " + std::to_string(payload);
        if (payload > expected || whole_positions) throw TraceFormatError(E::SizeMismatch, detail);
        throw TraceFormatError(E::TruncatedPayload, detail);
    }

    std::vector<float> data(g.element_count());
    const unsigned char* src = p + kvtr::kHeaderBytes;
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = std::bit_cast<float>(kvtr::get_u32(src + 4 * i));
    KVTrace trace(g, std::move(data), std::move(provenance));
    if (!trace.all_finite()) throw TraceFormatError(E::NonFinite, "payload contains NaN or Inf");
    return trace;
}

inline void write_trace(const std::string& path, const KVTrace& trace) {
    const auto bytes = encode_trace(trace);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw TraceFormatError(TraceErrorCode::Io, "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw TraceFormatError(TraceErrorCode::Io, "write failed: " + path);
}

inline KVTrace read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TraceFormatError(TraceErrorCode::Io, "cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_trace(bytes, path);
}

}  // namespace fourier_kv
