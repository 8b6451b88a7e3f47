// fourier-kv: generate traces, select compressed dimensions, evaluate
// compressed attention, compare bases and run the diagnostics.
//
// Exit codes: 0 ok, 2 usage, 3 IO, 4 data mismatch.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fourier_kv/fourier_kv.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace fourier_kv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitData = 4;

class UsageError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "";
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex64(fnv1a64(ss.str()));
}

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

/// What a command did, written next to its outputs.
struct RunRecord {
    std::string command;
    json config = json::object();
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::vector<std::string> argv;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void write(const std::string& path) const {
        json j;
        j["tool"] = "fourier-kv";
        j["command"] = command;
        j["config"] = config;
        j["config_hash"] = hex64(fnv1a64(config.dump()));
        j["seed"] = seed;
        auto files = [](const std::vector<std::string>& paths) {
            json arr = json::array();
            for (const auto& p : paths) arr.push_back({{"path", p}, {"fnv1a64", file_digest(p)}});
            return arr;
        };
        j["inputs"] = files(inputs);
        j["outputs"] = files(outputs);
        j["argv"] = argv;
        j["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write manifest " + path);
        out << j.dump(2) << '\n';
    }
};

/// Partition flags shared by select; --preset fills whatever was not given.
struct PartitionFlags {
    std::string preset = "paper";
    std::optional<std::size_t> init, local, states, window;

    void add(CLI::App* app) {
        app->add_option("--preset", preset, "defaults: paper (local 1024, k 512, T 32768) or desk (local 64, k 16, T 4096)")
            ->check(CLI::IsMember({"paper", "desk"}));
        app->add_option("--init", init, "initial tokens kept exact (default 4)");
        app->add_option("--local", local, "local tokens kept exact");
        app->add_option("--k", states, "Fourier states per compressed dim");
        app->add_option("--T", window, "Fourier period");
    }

    PartitionConfig resolve() const {
        PartitionConfig p;
        if (preset == "desk") {
            p.l_local = 64;
            p.states = 16;
            p.window = 4096;
        }
        if (init) p.l_init = *init;
        if (local) p.l_local = *local;
        if (states) p.states = *states;
        if (window) p.window = *window;
        if (p.l_local < 1 || p.states < 1 || p.window < 1) throw UsageError("--local, --k and --T must be >= 1");
        return p;
    }
};

json partition_json(const PartitionConfig& p) {
    return {{"l_init", p.l_init}, {"l_local", p.l_local}, {"k", p.states}, {"T", p.window}};
}

json geometry_json(const TraceGeometry& g) {
    return {{"layers", g.layers}, {"kv_heads", g.kv_heads}, {"head_dim", g.head_dim}, {"seq_len", g.seq_len}};
}

// A middle region longer than one period would alias positions onto each other.
void require_fits_window(std::size_t seq_len, const PartitionConfig& p) {
    const std::size_t edges = p.l_init + p.l_local;
    const std::size_t middle = seq_len > edges ? seq_len - edges : 0;
    if (middle > p.window)
        throw DataMismatchError("middle region of " + std::to_string(middle) + " positions exceeds the Fourier period T=" +
                                std::to_string(p.window));
}

// ---------------------------------------------------------------- gen-trace

struct GenTraceArgs {
    std::string kind;
    std::size_t layers = 4, heads = 4, q_heads = 0, dim = 64, len = 512, vocab = 256;
    std::uint64_t seed = 0;
    std::string out;
    double value = 1.0, sigma = 1.0;
    std::size_t order = 1, band = 4, period = 0;
    std::vector<std::size_t> tone_dims;
};

void setup_gen_trace(CLI::App& app, GenTraceArgs& a) {
    auto* c = app.add_subcommand("gen-trace", "write a synthetic or tiny-transformer KV trace");
    c->add_option("--kind", a.kind, "constant|tone|bandlimited|noise|mix|tiny")
        ->required()
        ->check(CLI::IsMember({"constant", "tone", "bandlimited", "noise", "mix", "tiny"}));
    c->add_option("--layers", a.layers, "layers")->check(CLI::PositiveNumber);
    c->add_option("--heads", a.heads, "KV heads")->check(CLI::PositiveNumber);
    c->add_option("--q-heads", a.q_heads, "query heads for --kind tiny (default: --heads)");
    c->add_option("--dim", a.dim, "head dimension")->check(CLI::PositiveNumber);
    c->add_option("--len", a.len, "sequence length")->check(CLI::PositiveNumber);
    c->add_option("--seed", a.seed, "RNG seed");
    c->add_option("--out", a.out, "output .kvtr path")->required();
    c->add_option("--value", a.value, "constant level");
    c->add_option("--order", a.order, "tone frequency (cycles per period)");
    c->add_option("--band", a.band, "band-limited: orders below this");
    c->add_option("--sigma", a.sigma, "noise std");
    c->add_option("--period", a.period, "tone period (default: --len)");
    c->add_option("--tone-dims", a.tone_dims, "dims carrying the tone (default all)")->delimiter(',');
    c->add_option("--vocab", a.vocab, "tiny model vocabulary")->check(CLI::PositiveNumber);
}

int run_gen_trace(const GenTraceArgs& a, RunRecord& rec) {
    KVTrace trace;
    if (a.kind == "tiny") {
        TinyModelConfig cfg;
        cfg.layers = a.layers;
        cfg.kv_heads = a.heads;
        cfg.heads = a.q_heads ? a.q_heads : a.heads;
        cfg.head_dim = a.dim;
        cfg.vocab = a.vocab;
        cfg.seed = a.seed;
        cfg.max_context = std::max(cfg.max_context, a.len);
        if (cfg.heads % cfg.kv_heads != 0) throw UsageError("--q-heads must be a multiple of --heads");
        if (cfg.head_dim % 2 != 0) throw UsageError("--dim must be even for --kind tiny");
        trace = tiny_forward(cfg, random_tokens(a.len, a.vocab, a.seed));
    } else {
        SyntheticSpec s;
        s.kind = parse_synthetic_kind(a.kind);
        s.value = a.value;
        s.order = a.order;
        s.band = a.band;
        s.sigma = a.sigma;
        s.period = a.period;
        s.dims = a.tone_dims;
        trace = gen_synthetic(s, {a.layers, a.heads, a.dim, a.len}, a.seed);
    }
    ensure_parent(a.out);
    write_trace(a.out, trace);

    rec.config = {{"kind", a.kind},   {"geometry", geometry_json(trace.geometry())},
                  {"value", a.value}, {"order", a.order},
                  {"band", a.band},   {"sigma", a.sigma},
                  {"period", a.period}, {"tone_dims", a.tone_dims},
                  {"q_heads", a.q_heads ? a.q_heads : a.heads}, {"vocab", a.vocab}};
    rec.seed = a.seed;
    rec.outputs = {a.out};
    rec.write(a.out + ".run.json");
    std::printf("wrote %s (%zu x %zu x %zu x %zu, %s)\n", a.out.c_str(), trace.layers(), trace.kv_heads(),
                trace.head_dim(), trace.seq_len(), trace.provenance().c_str());
    return kExitOk;
}

// ---------------------------------------------------------------- select

struct SelectArgs {
    std::string trace, schema = "inverted", out_manifest, histogram;
    std::optional<double> k_ratio, v_ratio;
    std::size_t group = 16;
    PartitionFlags part;
};

void setup_select(CLI::App& app, SelectArgs& a) {
    auto* c = app.add_subcommand("select", "rank dims by reconstruction MSE and apply a compression schema");
    c->add_option("--trace", a.trace, "calibration trace")->required();
    c->add_option("--schema", a.schema, "inverted|uniform|kv-inv|layer-inv|custom")
        ->check(CLI::IsMember({"inverted", "uniform", "kv-inv", "layer-inv", "custom"}));
    c->add_option("--k-ratio", a.k_ratio, "custom schema: K ratio for every layer");
    c->add_option("--v-ratio", a.v_ratio, "custom schema: V ratio for every layer");
    c->add_option("--out-manifest", a.out_manifest, "selection manifest path")->required();
    c->add_option("--histogram", a.histogram, "histogram CSV path (default <manifest>.histogram.csv)");
    c->add_option("--group", a.group, "histogram group size")->check(CLI::PositiveNumber);
    a.part.add(c);
}

CompressionSchema schema_from_flag(const SelectArgs& a, std::size_t layers) {
    if (a.schema == "custom") {
        if (!a.k_ratio || !a.v_ratio) throw UsageError("--schema custom needs --k-ratio and --v-ratio");
        try {
            return constant_schema(layers, *a.k_ratio, *a.v_ratio);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    if (a.k_ratio || a.v_ratio) throw UsageError("--k-ratio/--v-ratio only apply to --schema custom");
    const auto base = inverted_pyramid(layers);
    if (a.schema == "inverted") return base;
    const auto v = schema_variants(base);
    if (a.schema == "uniform") return v.uniform;
    if (a.schema == "kv-inv") return v.kv_inverted;
    return v.layer_inverted;
}

int run_select(const SelectArgs& a, RunRecord& rec) {
    const PartitionConfig part = a.part.resolve();
    schema_from_flag(a, 1);  // flag errors before any IO
    const KVTrace trace = read_trace(a.trace);
    require_fits_window(trace.seq_len(), part);
    const CompressionSchema schema = schema_from_flag(a, trace.layers());
    const FourierBasis basis(part.states, part.window);
    const RankTable ranks = rank_dimensions(trace, part, basis, thread_count_from_env());
    const SelectionManifest m{schema, apply_schema(ranks, schema, part)};

    ensure_parent(a.out_manifest);
    write_selection(a.out_manifest, m);
    const std::string hist_path = a.histogram.empty() ? a.out_manifest + ".histogram.csv" : a.histogram;
    ensure_parent(hist_path);
    const auto hist = selection_histogram(m.layout, a.group);
    {
        CsvWriter csv(hist_path, {"layer", "group", "k_count", "v_count"});
        for (std::size_t l = 0; l < hist.layers; ++l)
            for (std::size_t g = 0; g < hist.groups; ++g) csv.row(l, g, hist.k(l, g), hist.v(l, g));
    }

    rec.config = {{"schema", to_string(schema.preset)},
                  {"partition", partition_json(part)},
                  {"group", a.group},
                  {"geometry", geometry_json(trace.geometry())}};
    if (a.k_ratio) rec.config["k_ratio"] = *a.k_ratio;
    if (a.v_ratio) rec.config["v_ratio"] = *a.v_ratio;
    rec.inputs = {a.trace};
    rec.outputs = {a.out_manifest, hist_path};
    rec.write(a.out_manifest + ".run.json");
    std::printf("schema %s: compressed_fraction %.6f over %zu layers x %zu heads x %zu dims\n",
                to_string(schema.preset), memory_report(m.layout, trace.seq_len()).compressed_fraction, trace.layers(),
                trace.kv_heads(), trace.head_dim());
    std::printf("wrote %s and %s\n", a.out_manifest.c_str(), hist_path.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string trace, manifest, mode = "normalized", report;
    std::size_t decode_steps = 8, tile = 64;
    std::uint64_t seed = 0;
};

void setup_eval(CLI::App& app, EvalArgs& a) {
    auto* c = app.add_subcommand("eval", "compare full, materialized and fused attention over decode steps");
    c->add_option("--trace", a.trace, "KV trace")->required();
    c->add_option("--manifest", a.manifest, "selection manifest")->required();
    c->add_option("--mode", a.mode, "reconstruction: paper|normalized")->check(CLI::IsMember({"paper", "normalized"}));
    c->add_option("--decode-steps", a.decode_steps, "tokens appended after prefill, one query each");
    c->add_option("--tile", a.tile, "fused-path tile size")->check(CLI::PositiveNumber);
    c->add_option("--report", a.report, "output directory")->required();
    c->add_option("--seed", a.seed, "query RNG seed");
}

struct EvalRow {
    std::size_t step = 0, layer = 0, head = 0, position = 0;
    Divergence mat, fused;
    double fused_vs_mat = 0.0;
    std::size_t transient = 0;
};

int run_eval(const EvalArgs& a, RunRecord& rec) {
    const KVTrace trace = read_trace(a.trace);
    const SelectionManifest m = read_selection(a.manifest);
    const auto& layout = m.layout;
    if (!layout.matches(trace.geometry()))
        throw DataMismatchError("manifest geometry (" + std::to_string(layout.layers()) + " layers, " +
                                std::to_string(layout.kv_heads()) + " heads, d=" + std::to_string(layout.head_dim()) +
                                ") does not match the trace");
    const auto& part = layout.partition();
    const std::size_t L = trace.seq_len();
    if (a.decode_steps >= L)
        throw DataMismatchError("--decode-steps " + std::to_string(a.decode_steps) + " leaves no prefill in a " +
                                std::to_string(L) + "-token trace");
    require_fits_window(L, part);
    const ReconMode mode = a.mode == "paper" ? ReconMode::PaperLiteral : ReconMode::Normalized;
    const FourierBasis basis(part.states, part.window);
    const std::size_t prefill_len = L - a.decode_steps;
    const std::size_t queries = std::max<std::size_t>(a.decode_steps, 1);
    const std::size_t d = trace.head_dim();

    std::vector<EvalRow> rows(layout.layers() * layout.kv_heads() * queries);
    parallel_for(
        layout.layers() * layout.kv_heads(),
        [&](std::size_t job) {
            const std::size_t l = job / layout.kv_heads(), h = job % layout.kv_heads();
            HeadCache cache = prefill(trace, prefill_len, layout, l, h, basis);
            const MatrixF K = trace.head_matrix(l, CacheKind::Key, h);
            const MatrixF V = trace.head_matrix(l, CacheKind::Value, h);
            for (std::size_t s = 0; s < queries; ++s) {
                if (a.decode_steps > 0) append_token(cache, basis, K.row(prefill_len + s), V.row(prefill_len + s));
                const std::size_t n = cache.length();
                std::seed_seq seq{static_cast<std::uint32_t>(a.seed), static_cast<std::uint32_t>(a.seed >> 32),
                                  static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(h),
                                  static_cast<std::uint32_t>(s)};
                std::mt19937_64 rng(seq);
                std::normal_distribution<float> nd;
                std::vector<float> q(d);
                for (float& x : q) x = nd(rng);

                const MatrixF Kn(n, d, std::vector<float>(K.flat().begin(), K.flat().begin() + n * d));
                const MatrixF Vn(n, d, std::vector<float>(V.flat().begin(), V.flat().begin() + n * d));
                const auto full = attend_full(as_row(q), Kn, Vn);
                const auto mat = attend_compressed_materialized(q, cache, basis, mode);
                FusedStats stats;
                const auto fused = attend_compressed_fused(q, cache, basis, mode, a.tile, &stats);

                EvalRow& r = rows[job * queries + s];
                r = {s, l, h, n - 1, output_divergence(full, mat), output_divergence(full, fused),
                     output_divergence(mat, fused).max_abs, stats.peak_transient_floats()};
            }
        },
        thread_count_from_env());

    fs::create_directories(a.report);
    const std::string div_path = (fs::path(a.report) / "divergence.csv").string();
    const std::string mem_path = (fs::path(a.report) / "memory.csv").string();
    double worst_mat = 0, worst_fused = 0, worst_gap = 0, rmse_sum = 0;
    {
        CsvWriter csv(div_path, {"step", "layer", "head", "position", "materialized_max_abs", "materialized_rmse",
                                 "materialized_cosine", "fused_max_abs", "fused_rmse", "fused_cosine",
                                 "fused_vs_materialized_max_abs", "fused_transient_floats"});
        for (const auto& r : rows) {
            csv.row(r.step, r.layer, r.head, r.position, r.mat.max_abs, r.mat.rmse, r.mat.cosine, r.fused.max_abs,
                    r.fused.rmse, r.fused.cosine, r.fused_vs_mat, r.transient);
            worst_mat = std::max(worst_mat, r.mat.max_abs);
            worst_fused = std::max(worst_fused, r.fused.max_abs);
            worst_gap = std::max(worst_gap, r.fused_vs_mat);
            rmse_sum += r.fused.rmse;
        }
    }
    const MemoryReport mem = memory_report(layout, L);
    {
        CsvWriter csv(mem_path, {"metric", "value"});
        csv.row("seq_len", L);
        csv.row("exact_floats", mem.exact_floats);
        csv.row("spectral_floats", mem.spectral_floats);
        csv.row("full_cache_floats", mem.full_cache_floats);
        csv.row("compressed_fraction", mem.compressed_fraction);
        csv.row("schema_compressed_fraction", m.schema.compressed_fraction());
        csv.row("ratio_vs_full", mem.ratio_vs_full);
    }

    rec.config = {{"mode", to_string(mode)},
                  {"decode_steps", a.decode_steps},
                  {"tile", a.tile},
                  {"schema", to_string(m.schema.preset)},
                  {"partition", partition_json(part)},
                  {"geometry", geometry_json(trace.geometry())}};
    rec.seed = a.seed;
    rec.inputs = {a.trace, a.manifest};
    rec.outputs = {div_path, mem_path};
    rec.write((fs::path(a.report) / "manifest.json").string());
    std::printf("eval %s: %zu rows, max_abs materialized %.3g fused %.3g, fused-vs-materialized %.3g, mean rmse %.3g\n",
                to_string(mode), rows.size(), worst_mat, worst_fused, worst_gap,
                rows.empty() ? 0.0 : rmse_sum / static_cast<double>(rows.size()));
    std::printf("memory: compressed_fraction %.6f (schema %.6f), ratio_vs_full %.6f\n", mem.compressed_fraction,
                m.schema.compressed_fraction(), mem.ratio_vs_full);
    return kExitOk;
}

// ---------------------------------------------------------------- compare-bases

struct CompareArgs {
    std::string trace, out, kind = "K";
    std::size_t k = 16, window = 0;
    std::vector<std::size_t> layers, heads, dims;
};

void setup_compare(CLI::App& app, CompareArgs& a) {
    auto* c = app.add_subcommand("compare-bases", "per-dimension reconstruction MSE of FourierT vs LegT");
    c->add_option("--trace", a.trace, "KV trace")->required();
    c->add_option("--k", a.k, "Fourier states (LegT gets 2k orders)")->check(CLI::PositiveNumber);
    c->add_option("--T", a.window, "window for both bases (default: trace length)");
    c->add_option("--cache", a.kind, "K|V")->check(CLI::IsMember({"K", "V"}));
    c->add_option("--layers", a.layers, "layer subset")->delimiter(',');
    c->add_option("--heads", a.heads, "head subset")->delimiter(',');
    c->add_option("--dims", a.dims, "dim subset")->delimiter(',');
    c->add_option("--out", a.out, "CSV path")->required();
}

int run_compare(const CompareArgs& a, RunRecord& rec) {
    const KVTrace trace = read_trace(a.trace);
    BasisSelection sel{a.layers, a.heads, a.dims, a.kind == "K" ? CacheKind::Key : CacheKind::Value};
    const BasisComparison cmp = compare_bases(trace, a.k, a.window, sel);
    ensure_parent(a.out);
    {
        CsvWriter csv(a.out, {"layer", "head", "dim", "mse_fourier", "mse_legt"});
        for (const auto& r : cmp.rows) csv.row(r.layer, r.head, r.dim, r.mse_fourier, r.mse_legt);
    }
    const std::size_t window = a.window ? a.window : trace.seq_len();
    rec.config = {{"k", a.k}, {"T", window}, {"cache", a.kind}, {"layers", a.layers}, {"heads", a.heads}, {"dims", a.dims}};
    rec.inputs = {a.trace};
    rec.outputs = {a.out};
    rec.write(a.out + ".run.json");
    std::printf("win_rate %.6f (FourierT <= LegT on %zu of %zu dims, ties to FourierT; k=%zu, T=%zu)\n",
                cmp.win_rate(), cmp.fourier_wins, cmp.rows.size(), a.k, window);
    return kExitOk;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
    std::string trace, out;
    std::optional<std::size_t> split;
    double sigma = 0.1;
    std::optional<std::vector<std::size_t>> dims;
    std::size_t probes = 4;
    std::uint64_t seed = 0;
};

void setup_analyze(CLI::App& app, AnalyzeArgs& a) {
    auto* c = app.add_subcommand("analyze", "temporal std, score decomposition and perturbation diagnostics");
    c->add_option("--trace", a.trace, "KV trace")->required();
    c->add_option("--split-dim", a.split, "low/high boundary (default d/2)");
    c->add_option("--sigma", a.sigma, "perturbation noise std")->check(CLI::NonNegativeNumber);
    c->add_option("--dims", a.dims, "K dims to perturb (default: dims >= split)")->delimiter(',');
    c->add_option("--probes", a.probes, "query positions per head for the decomposition")->check(CLI::PositiveNumber);
    c->add_option("--seed", a.seed, "perturbation seed");
    c->add_option("--out", a.out, "output directory")->required();
}

int run_analyze(const AnalyzeArgs& a, RunRecord& rec) {
    const KVTrace trace = read_trace(a.trace);
    const std::size_t d = trace.head_dim(), L = trace.seq_len();
    const std::size_t split = a.split.value_or(std::max<std::size_t>(1, d / 2));
    if (split == 0 || split > d)
        throw DataMismatchError("--split-dim " + std::to_string(split) + " outside (0, " + std::to_string(d) + "]");
    std::vector<std::size_t> dims;
    if (a.dims) dims = *a.dims;
    else
        for (std::size_t i = split; i < d; ++i) dims.push_back(i);
    for (std::size_t dim : dims)
        if (dim >= d) throw DataMismatchError("--dims entry " + std::to_string(dim) + " >= head_dim");

    fs::create_directories(a.out);
    const auto path = [&](const char* name) { return (fs::path(a.out) / name).string(); };

    const StdReport sr = temporal_std(trace);
    {
        CsvWriter csv(path("std.csv"), {"layer", "cache", "head", "dim", "std"});
        for (std::size_t l = 0; l < trace.layers(); ++l)
            for (CacheKind k : {CacheKind::Key, CacheKind::Value})
                for (std::size_t h = 0; h < trace.kv_heads(); ++h)
                    for (std::size_t i = 0; i < d; ++i) csv.row(l, to_string(k), h, i, sr.at(l, k, h, i));
    }
    {
        CsvWriter csv(path("std_curve.csv"), {"layer", "cache", "rank", "mean_std"});
        for (std::size_t l = 0; l < trace.layers(); ++l)
            for (CacheKind k : {CacheKind::Key, CacheKind::Value})
                for (std::size_t r = 0; r < d; ++r) csv.row(l, to_string(k), r, sr.curve(l, k, r));
    }

    // probe queries are keys at evenly spaced positions ending at the last token
    std::vector<std::size_t> probe_pos;
    const std::size_t probes = std::min(a.probes, L);
    for (std::size_t i = 0; i < probes; ++i) probe_pos.push_back((L - 1) - (probes - 1 - i) * ((L - 1) / probes));
    double worst_sum_err = 0;
    {
        CsvWriter csv(path("decomposition.csv"), {"layer", "head", "query_pos", "key_pos", "low", "high", "full"});
        for (std::size_t l = 0; l < trace.layers(); ++l)
            for (std::size_t h = 0; h < trace.kv_heads(); ++h)
                for (std::size_t qp : probe_pos) {
                    const MatrixF keys = trace.head_matrix(l, CacheKind::Key, h, 0, qp + 1);
                    const auto sc = decompose_scores(keys.row(qp), keys, split);
                    for (std::size_t j = 0; j <= qp; ++j) {
                        csv.row(l, h, qp, j, sc.low[j], sc.high[j], sc.full[j]);
                        worst_sum_err = std::max(worst_sum_err, std::abs(sc.low[j] + sc.high[j] - sc.full[j]));
                    }
                }
    }

    const KVTrace noisy = perturb_dims(trace, dims, a.sigma, a.seed);
    double worst_div = 0;
    {
        CsvWriter csv(path("perturbation.csv"), {"layer", "head", "query_pos", "max_abs", "rmse", "cosine"});
        for (std::size_t l = 0; l < trace.layers(); ++l)
            for (std::size_t h = 0; h < trace.kv_heads(); ++h) {
                const MatrixF K = trace.head_matrix(l, CacheKind::Key, h);
                const MatrixF Kp = noisy.head_matrix(l, CacheKind::Key, h);
                const MatrixF V = trace.head_matrix(l, CacheKind::Value, h);
                const MatrixF q = as_row(K.row(L - 1));
                const auto dv = output_divergence(attend_full(q, K, V), attend_full(q, Kp, V));
                csv.row(l, h, L - 1, dv.max_abs, dv.rmse, dv.cosine);
                worst_div = std::max(worst_div, dv.max_abs);
            }
    }

    rec.config = {{"split_dim", split}, {"sigma", a.sigma}, {"dims", dims}, {"probes", probes},
                  {"geometry", geometry_json(trace.geometry())}};
    rec.seed = a.seed;
    rec.inputs = {a.trace};
    rec.outputs = {path("std.csv"), path("std_curve.csv"), path("decomposition.csv"), path("perturbation.csv")};
    rec.write(path("manifest.json"));
    std::printf("analyze: split %zu/%zu, decomposition max |low+high-full| %.3g, perturbation (sigma %g, %zu dims) "
                "max_abs %.3g\n",
                split, d - split, worst_sum_err, a.sigma, dims.size(), worst_div);
    for (std::size_t l = 0; l < trace.layers(); ++l)
        std::printf("layer %zu mean temporal std: K %.6g V %.6g\n", l, sr.mean_std(l, CacheKind::Key),
                    sr.mean_std(l, CacheKind::Value));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FourierAttention KV-cache compression tools"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "fourier-kv 1.0.0");

    GenTraceArgs gen;
    SelectArgs sel;
    EvalArgs ev;
    CompareArgs cmp;
    AnalyzeArgs an;
    setup_gen_trace(app, gen);
    setup_select(app, sel);
    setup_eval(app, ev);
    setup_compare(app, cmp);
    setup_analyze(app, an);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    RunRecord rec;
    rec.argv.assign(argv, argv + argc);
    try {
        if (app.got_subcommand("gen-trace")) {
            rec.command = "gen-trace";
            return run_gen_trace(gen, rec);
        }
        if (app.got_subcommand("select")) {
            rec.command = "select";
            return run_select(sel, rec);
        }
        if (app.got_subcommand("eval")) {
            rec.command = "eval";
            return run_eval(ev, rec);
        }
        if (app.got_subcommand("compare-bases")) {
            rec.command = "compare-bases";
            return run_compare(cmp, rec);
        }
        rec.command = "analyze";
        return run_analyze(an, rec);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const TraceFormatError& e) {
        std::fprintf(stderr, "trace error (%s): %s\n", to_string(e.code()), e.what());
        return e.code() == TraceErrorCode::Io ? kExitIo : kExitData;
    } catch (const ManifestError& e) {
        std::fprintf(stderr, "manifest error: %s\n", e.what());
        return kExitData;
    } catch (const DataMismatchError& e) {
        std::fprintf(stderr, "data mismatch: %s\n", e.what());
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return kExitUsage;
    } catch (const std::out_of_range& e) {
        std::fprintf(stderr, "out of range: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        // remaining runtime errors come from opening or writing files
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    }
}
