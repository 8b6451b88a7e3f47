#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fourier_kv/trace.hpp"

namespace fourier_kv {

enum class SyntheticKind { Constant, Tone, BandLimited, Noise, Mix };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
    if (s == "constant") return SyntheticKind::Constant;
    if (s == "tone") return SyntheticKind::Tone;
    if (s == "bandlimited") return SyntheticKind::BandLimited;
    if (s == "noise") return SyntheticKind::Noise;
    if (s == "mix") return SyntheticKind::Mix;
    throw std::invalid_argument("unknown synthetic kind: " + s);
}

inline const char* to_string(SyntheticKind k) {
    switch (k) {
        case SyntheticKind::Constant: return "constant";
        case SyntheticKind::Tone: return "tone";
        case SyntheticKind::BandLimited: return "bandlimited";
        case SyntheticKind::Noise: return "noise";
        case SyntheticKind::Mix: return "mix";
    }
    return "?";
}

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::Constant;
    double value = 1.0;      // constant level
    std::size_t order = 1;   // tone frequency n (cycles per period)
    std::size_t band = 4;    // band-limited: orders 0..band-1
    double sigma = 1.0;      // noise / mix noise std
    std::size_t period = 0;  // T of the tones; 0 means seq_len
    std::vector<std::size_t> dims;  // tone only: dims carrying the tone (empty = all)
};

/// Deterministic per seed. Each (layer, K|V, head, dim) channel draws its own
/// amplitudes and phases from one seeded stream, in payload order.
inline KVTrace gen_synthetic(const SyntheticSpec& spec, const TraceGeometry& g, std::uint64_t seed) {
    if (g.layers == 0 || g.kv_heads == 0 || g.head_dim == 0 || g.seq_len == 0)
        throw std::invalid_argument("gen_synthetic: geometry dimensions must be >= 1");
    const std::size_t period = spec.period ? spec.period : g.seq_len;
    KVTrace trace(g, std::string("synthetic:") + to_string(spec.kind) + ":seed=" + std::to_string(seed));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
    const double w = 2.0 * std::numbers::pi / static_cast<double>(period);

    std::vector<bool> tone_dim(g.head_dim, spec.dims.empty());
    for (std::size_t d : spec.dims) {
        if (d >= g.head_dim) throw std::invalid_argument("gen_synthetic: tone dim out of range");
        tone_dim[d] = true;
    }

    for (std::size_t l = 0; l < g.layers; ++l)
        for (CacheKind kind : {CacheKind::Key, CacheKind::Value})
            for (std::size_t h = 0; h < g.kv_heads; ++h)
                for (std::size_t d = 0; d < g.head_dim; ++d) {
                    switch (spec.kind) {
                        case SyntheticKind::Constant:
                            for (std::size_t t = 0; t < g.seq_len; ++t)
                                trace.at(l, kind, h, t, d) = static_cast<float>(spec.value);
                            break;
                        case SyntheticKind::Tone: {
                            const double amp = 0.5 + 0.5 * std::abs(normal(rng));
                            const double phase = uniform(rng);
                            if (!tone_dim[d]) break;
                            for (std::size_t t = 0; t < g.seq_len; ++t) {
                                const double ph = w * static_cast<double>((spec.order * t) % period);
                                trace.at(l, kind, h, t, d) = static_cast<float>(amp * std::cos(ph + phase));
                            }
                            break;
                        }
                        case SyntheticKind::BandLimited:
                        case SyntheticKind::Mix: {
                            const std::size_t band = std::max<std::size_t>(spec.band, 1);
                            std::vector<double> a(band), b(band);
                            for (std::size_t n = 0; n < band; ++n) {
                                a[n] = normal(rng);
                                b[n] = n == 0 ? 0.0 : normal(rng);
                            }
                            const double norm = 1.0 / std::sqrt(static_cast<double>(band));
                            for (std::size_t t = 0; t < g.seq_len; ++t) {
                                double v = 0.0;
                                for (std::size_t n = 0; n < band; ++n) {
                                    const double ph = w * static_cast<double>((n * t) % period);
                                    v += a[n] * std::cos(ph) + b[n] * std::sin(ph);
                                }
                                v *= norm;
                                if (spec.kind == SyntheticKind::Mix) v += spec.sigma * normal(rng);
                                trace.at(l, kind, h, t, d) = static_cast<float>(v);
                            }
                            break;
                        }
                        case SyntheticKind::Noise:
                            for (std::size_t t = 0; t < g.seq_len; ++t)
                                trace.at(l, kind, h, t, d) = static_cast<float>(spec.sigma * normal(rng));
                            break;
                    }
                }
    return trace;
}

}  // namespace fourier_kv
