#pragma once

// Text manifest describing a dimension selection. Line oriented, '#' starts a
// comment, fields separated by single spaces:
//
//   fourier-kv-selection 1
//   schema <preset>
//   geometry <layers> <kv_heads> <head_dim>
//   partition <l_init> <l_local> <window> <states>
//   ratio <layer> <k_ratio> <v_ratio>          one per layer
//   kc <layer> <head> [dim ...]                one per (layer, head)
//   vc <layer> <head> [dim ...]
//   end

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fourier_kv/cache.hpp"
#include "fourier_kv/dim_select.hpp"

namespace fourier_kv {

inline constexpr const char* kSelectionMagic = "fourier-kv-selection";
inline constexpr int kSelectionVersion = 1;

struct SelectionManifest {
    CompressionSchema schema;
    CacheLayout layout;

    bool operator==(const SelectionManifest&) const = default;
};

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string format_ratio(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", r);
    return buf;
}

}  // namespace detail

inline std::string serialize_selection(const SelectionManifest& m) {
    const auto& lay = m.layout;
    const auto& p = lay.partition();
    std::ostringstream os;
    os << kSelectionMagic << ' ' << kSelectionVersion << '\n';
    os << "schema " << to_string(m.schema.preset) << '\n';
    os << "geometry " << lay.layers() << ' ' << lay.kv_heads() << ' ' << lay.head_dim() << '\n';
    os << "partition " << p.l_init << ' ' << p.l_local << ' ' << p.window << ' ' << p.states << '\n';
    for (std::size_t l = 0; l < m.schema.layers.size(); ++l)
        os << "ratio " << l << ' ' << detail::format_ratio(m.schema.layers[l].k) << ' '
           << detail::format_ratio(m.schema.layers[l].v) << '\n';
    for (std::size_t l = 0; l < lay.layers(); ++l)
        for (std::size_t h = 0; h < lay.kv_heads(); ++h) {
            const auto& s = lay.split(l, h);
            os << "kc " << l << ' ' << h;
            for (auto dim : s.k_compressed) os << ' ' << dim;
            os << "\nvc " << l << ' ' << h;
            for (auto dim : s.v_compressed) os << ' ' << dim;
            os << '\n';
        }
    os << "end\n";
    return os.str();
}

inline SelectionManifest parse_selection(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) -> ManifestError {
        return ManifestError("selection manifest line " + std::to_string(lineno) + ": " + why);
    };
    auto next_line = [&](std::string& out) {
        while (std::getline(in, out)) {
            ++lineno;
            const auto hash = out.find('#');
            if (hash != std::string::npos) out.erase(hash);
            if (out.find_first_not_of(" \t\r") != std::string::npos) return true;
        }
        return false;
    };

    if (!next_line(line)) throw ManifestError("selection manifest: empty");
    {
        std::istringstream ls(line);
        std::string magic;
        int version = 0;
        ls >> magic >> version;
        if (magic != kSelectionMagic) throw fail("bad magic '" + magic + "'");
        if (version != kSelectionVersion) throw fail("unsupported version " + std::to_string(version));
    }

    SelectionManifest m;
    bool have_geom = false, have_part = false, have_end = false;
    std::size_t layers = 0, heads = 0, dim = 0;
    PartitionConfig part;
    std::vector<bool> seen_ratio;
    while (next_line(line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "end") {
            have_end = true;
            break;
        }
        if (key == "schema") {
            std::string name;
            ls >> name;
            try {
                m.schema.preset = parse_schema_preset(name);
            } catch (const std::invalid_argument& e) {
                throw fail(e.what());
            }
        } else if (key == "geometry") {
            if (!(ls >> layers >> heads >> dim)) throw fail("malformed geometry");
            have_geom = true;
        } else if (key == "partition") {
            if (!(ls >> part.l_init >> part.l_local >> part.window >> part.states)) throw fail("malformed partition");
            have_part = true;
            if (!have_geom) throw fail("partition before geometry");
            try {
                m.layout = CacheLayout(part, layers, heads, dim);
            } catch (const std::invalid_argument& e) {
                throw fail(e.what());
            }
            m.schema.layers.assign(layers, {});
            seen_ratio.assign(layers, false);
        } else if (key == "ratio") {
            if (!have_part) throw fail("ratio before partition");
            std::size_t l = 0;
            LayerRatio r;
            if (!(ls >> l >> r.k >> r.v) || l >= layers) throw fail("malformed ratio");
            m.schema.layers[l] = r;
            seen_ratio[l] = true;
        } else if (key == "kc" || key == "vc") {
            if (!have_part) throw fail(key + " before partition");
            std::size_t l = 0, h = 0, v = 0;
            if (!(ls >> l >> h) || l >= layers || h >= heads) throw fail("malformed " + key);
            DimList dims;
            while (ls >> v) dims.push_back(v);
            if (!ls.eof()) throw fail("non-numeric dim in " + key);
            HeadSplit s = m.layout.split(l, h);
            (key == "kc" ? s.k_compressed : s.v_compressed) = std::move(dims);
            try {
                m.layout.set_split(l, h, std::move(s));
            } catch (const std::invalid_argument& e) {
                throw fail(e.what());
            }
        } else {
            throw fail("unknown key '" + key + "'");
        }
    }
    if (!have_end) throw ManifestError("selection manifest: missing 'end'");
    if (!have_part) throw ManifestError("selection manifest: missing partition");
    for (std::size_t l = 0; l < layers; ++l)
        if (!seen_ratio[l]) throw ManifestError("selection manifest: missing ratio for layer " + std::to_string(l));
    try {
        m.schema.validate();
    } catch (const std::invalid_argument& e) {
        throw ManifestError(std::string("selection manifest: ") + e.what());
    }
    return m;
}

inline void write_selection(const std::string& path, const SelectionManifest& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << serialize_selection(m);
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline SelectionManifest read_selection(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_selection(ss.str());
}

}  // namespace fourier_kv
