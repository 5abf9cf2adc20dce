#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/rng.hpp"
#include "ecomp/tensor.hpp"

namespace ecomp {

/// 5x5 binary glyph standing in for one object class.
struct ClassPattern {
    int class_id = 0;
    std::uint32_t bits = 0;  // row-major, bit r*5+c

    bool pixel(int r, int c) const { return (bits >> (r * 5 + c)) & 1u; }
};

struct Sample {
    Tensor image;  // [1,res,res], values in [0,1]
    int label = 0;
};

/// Canonical unordered pair of distinct class ids.
struct CompositionLabel {
    int lo = 0;
    int hi = 0;
    auto operator<=>(const CompositionLabel&) const = default;
};

inline CompositionLabel make_label(int a, int b) {
    if (a == b) throw std::invalid_argument("composition label needs distinct classes, got " + std::to_string(a) + " twice");
    return {std::min(a, b), std::max(a, b)};
}

/// 2x2-grid image with exactly two occupied quadrants (0=TL,1=TR,2=BL,3=BR).
struct CompositeImage {
    Tensor image;  // [1,2res,2res]
    CompositionLabel label;
    int quad_lo = 0;  // quadrant holding label.lo's object
    int quad_hi = 0;  // quadrant holding label.hi's object
};

/// One segment of the class-incremental stream. Test data lives in the
/// pack's shared composite test set; experiences reference it by index.
struct Experience {
    int experience_id = 0;
    std::vector<CompositionLabel> labels;
    std::vector<CompositeImage> train;
    std::vector<int> test_indices;
};

struct SysEpisode {
    int episode_id = 0;
    std::vector<CompositionLabel> labels;  // n_way, canonical order
    std::vector<CompositeImage> support;
    std::vector<CompositeImage> query;
};

struct ObjectSplits {
    // indexed [class_id][instance]
    std::vector<std::vector<Sample>> train, val, test;
};

struct DatagenConfig {
    int n_classes = 21;
    int resolution = 16;
    int train_per_class = 500;
    int val_per_class = 50;
    int test_per_class = 100;

    int n_combos = 100;
    int test_per_combo = 100;
    int con_experiences = 10;
    int con_train_per_combo = 30;

    int sys_episodes = 300;
    int sys_way = 10;
    int sys_shots = 10;
    int sys_queries = 10;

    int jitter_px = 2;
    double intensity_lo = 0.6;
    double intensity_hi = 1.0;
    double noise = 0.1;

    bool operator==(const DatagenConfig&) const = default;
};

struct BenchmarkPack {
    DatagenConfig config;
    std::uint64_t seed = 0;
    std::vector<ClassPattern> patterns;
    ObjectSplits objects;
    std::vector<CompositionLabel> combos;  // sorted; index order is the baseline label space
    std::vector<CompositeImage> comp_test;
    std::vector<Experience> con;
    std::vector<SysEpisode> sys;
};

// fixed sub-seed streams so every section regenerates independently
namespace seed_stream {
inline constexpr std::uint64_t patterns = 0x01;
inline constexpr std::uint64_t objects = 0x02;
inline constexpr std::uint64_t combos = 0x03;
inline constexpr std::uint64_t comp_test = 0x04;
inline constexpr std::uint64_t con = 0x05;
inline constexpr std::uint64_t sys = 0x06;
}  // namespace seed_stream

// ---------------------------------------------------------------------------

/// Rejection-samples K well-separated glyphs: >= 6 set bits each, pairwise
/// Hamming distance >= 8 of 25. Gives up loudly rather than looping forever.
inline std::vector<ClassPattern> gen_class_patterns(std::uint64_t seed, int K) {
    if (K < 1 || K > 64) throw std::invalid_argument("gen_class_patterns: K must be in [1,64], got " + std::to_string(K));
    constexpr int kMaxAttempts = 100000;
    Rng rng = make_rng(sub_seed(seed, seed_stream::patterns));
    std::vector<ClassPattern> out;
    out.reserve(static_cast<std::size_t>(K));
    int attempts = 0;
    while (static_cast<int>(out.size()) < K) {
        if (++attempts > kMaxAttempts)
            throw std::runtime_error("gen_class_patterns: no separated glyph set after " +
                                     std::to_string(kMaxAttempts) + " attempts (K=" + std::to_string(K) +
                                     "; a larger bitmap would be needed)");
        const std::uint32_t candidate = static_cast<std::uint32_t>(rng() & 0x1FFFFFFu);
        if (std::popcount(candidate) < 6) continue;
        bool ok = true;
        for (const auto& p : out)
            if (std::popcount(candidate ^ p.bits) < 8) {
                ok = false;
                break;
            }
        if (ok) out.push_back({static_cast<int>(out.size()), candidate});
    }
    return out;
}

/// Nearest-neighbour upscale of the glyph into a res x res frame, with
/// integer translation jitter, a global intensity factor, and additive
/// pixel noise. Draws are skipped for knobs at their identity value, so a
/// zeroed config renders the exact upscaled bitmap.
inline Sample render_object(const ClassPattern& pattern, const DatagenConfig& cfg, Rng& rng) {
    const int res = cfg.resolution;
    if (res < 12) throw std::invalid_argument("render_object: resolution must be >= 12, got " + std::to_string(res));
    int dy = 0, dx = 0;
    if (cfg.jitter_px > 0) {
        dy = uniform_int(rng, -cfg.jitter_px, cfg.jitter_px);
        dx = uniform_int(rng, -cfg.jitter_px, cfg.jitter_px);
    }
    double intensity = cfg.intensity_lo;
    if (cfg.intensity_hi > cfg.intensity_lo) intensity = uniform_real(rng, cfg.intensity_lo, cfg.intensity_hi);

    Sample s;
    s.label = pattern.class_id;
    s.image = Tensor({1, res, res});
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const int sy = y - dy, sx = x - dx;
            double v = 0;
            if (sy >= 0 && sy < res && sx >= 0 && sx < res && pattern.pixel(sy * 5 / res, sx * 5 / res)) v = intensity;
            if (cfg.noise > 0) v += uniform_real(rng, 0.0, cfg.noise);
            s.image.data[static_cast<std::size_t>(y * res + x)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    return s;
}

/// Train/val/test splits per class, each (split, class) pair on its own
/// rng stream so splits are disjoint draws by construction.
inline ObjectSplits build_object_dataset(const std::vector<ClassPattern>& patterns, const DatagenConfig& cfg,
                                         std::uint64_t seed) {
    if (cfg.train_per_class < 1 || cfg.val_per_class < 1 || cfg.test_per_class < 1)
        throw std::invalid_argument("build_object_dataset: split sizes must be >= 1");
    ObjectSplits splits;
    const std::uint64_t base = sub_seed(seed, seed_stream::objects);
    auto fill = [&](std::vector<std::vector<Sample>>& split, int split_idx, int count) {
        split.resize(patterns.size());
        for (std::size_t c = 0; c < patterns.size(); ++c) {
            Rng rng = make_rng(sub_seed(base, (static_cast<std::uint64_t>(split_idx) << 32) | c));
            split[c].reserve(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i) split[c].push_back(render_object(patterns[c], cfg, rng));
        }
    };
    fill(splits.train, 0, cfg.train_per_class);
    fill(splits.val, 1, cfg.val_per_class);
    fill(splits.test, 2, cfg.test_per_class);
    return splits;
}

inline std::vector<CompositionLabel> all_pairs(int K) {
    std::vector<CompositionLabel> pairs;
    for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b) pairs.push_back({a, b});
    return pairs;
}

/// Uniform sample of n distinct class pairs, returned in canonical order.
inline std::vector<CompositionLabel> select_combinations(int K, int n_combos, std::uint64_t seed) {
    auto pairs = all_pairs(K);
    if (n_combos < 1 || static_cast<std::size_t>(n_combos) > pairs.size())
        throw std::invalid_argument("select_combinations: n_combos=" + std::to_string(n_combos) + " not in [1," +
                                    std::to_string(pairs.size()) + "] for K=" + std::to_string(K));
    Rng rng = make_rng(sub_seed(seed, seed_stream::combos));
    shuffle_vec(pairs, rng);
    pairs.resize(static_cast<std::size_t>(n_combos));
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

/// Index of a label in a sorted combo table; -1 when absent.
inline int label_index(const std::vector<CompositionLabel>& combos, const CompositionLabel& label) {
    auto it = std::lower_bound(combos.begin(), combos.end(), label);
    if (it == combos.end() || *it != label) return -1;
    return static_cast<int>(it - combos.begin());
}

inline CompositeImage render_composite(const CompositionLabel& label, const std::vector<ClassPattern>& patterns,
                                       const DatagenConfig& cfg, Rng& rng) {
    static constexpr int kQuadPairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    const int res = cfg.resolution;
    const auto& pair = kQuadPairs[uniform_below(rng, 6)];
    const bool swap = uniform_below(rng, 2) == 1;

    CompositeImage comp;
    comp.label = label;
    comp.quad_lo = swap ? pair[1] : pair[0];
    comp.quad_hi = swap ? pair[0] : pair[1];
    comp.image = Tensor({1, 2 * res, 2 * res});

    Sample lo = render_object(patterns.at(static_cast<std::size_t>(label.lo)), cfg, rng);
    Sample hi = render_object(patterns.at(static_cast<std::size_t>(label.hi)), cfg, rng);
    auto blit = [&](const Sample& s, int quad) {
        const int y0 = (quad / 2) * res, x0 = (quad % 2) * res;
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x)
                comp.image.data[static_cast<std::size_t>((y0 + y) * 2 * res + (x0 + x))] =
                    s.image.data[static_cast<std::size_t>(y * res + x)];
    };
    blit(lo, comp.quad_lo);
    blit(hi, comp.quad_hi);
    return comp;
}

/// per_combo composites per label: occupied quadrant pair uniform over the
/// six 2-subsets, class-to-quadrant assignment by fair coin.
inline std::vector<CompositeImage> build_composites(const std::vector<CompositionLabel>& combos, int per_combo,
                                                    const std::vector<ClassPattern>& patterns,
                                                    const DatagenConfig& cfg, Rng& rng) {
    if (per_combo < 1) throw std::invalid_argument("build_composites: per_combo must be >= 1");
    std::vector<CompositeImage> out;
    out.reserve(combos.size() * static_cast<std::size_t>(per_combo));
    for (const auto& label : combos)
        for (int i = 0; i < per_combo; ++i) out.push_back(render_composite(label, patterns, cfg, rng));
    return out;
}

/// Partitions the combo set into n_experiences label groups and generates
/// fresh training composites per experience; test composites are indices
/// into the shared composite test set.
inline std::vector<Experience> build_con_stream(const std::vector<CompositionLabel>& combos,
                                                const std::vector<CompositeImage>& comp_test,
                                                const std::vector<ClassPattern>& patterns, const DatagenConfig& cfg,
                                                std::uint64_t seed) {
    const int n_exp = cfg.con_experiences;
    if (n_exp < 1 || static_cast<int>(combos.size()) % n_exp != 0)
        throw std::invalid_argument("build_con_stream: " + std::to_string(n_exp) + " experiences do not divide " +
                                    std::to_string(combos.size()) + " combos");
    const int per_exp = static_cast<int>(combos.size()) / n_exp;

    std::vector<CompositionLabel> order = combos;
    const std::uint64_t base = sub_seed(seed, seed_stream::con);
    Rng shuffle_rng = make_rng(base);
    shuffle_vec(order, shuffle_rng);

    std::vector<Experience> stream(static_cast<std::size_t>(n_exp));
    for (int e = 0; e < n_exp; ++e) {
        Experience& exp = stream[static_cast<std::size_t>(e)];
        exp.experience_id = e;
        exp.labels.assign(order.begin() + static_cast<std::ptrdiff_t>(e) * per_exp,
                          order.begin() + static_cast<std::ptrdiff_t>(e + 1) * per_exp);
        std::sort(exp.labels.begin(), exp.labels.end());
        Rng rng = make_rng(sub_seed(base, 1 + static_cast<std::uint64_t>(e)));
        exp.train = build_composites(exp.labels, cfg.con_train_per_combo, patterns, cfg, rng);
        for (std::size_t i = 0; i < comp_test.size(); ++i)
            if (std::binary_search(exp.labels.begin(), exp.labels.end(), comp_test[i].label))
                exp.test_indices.push_back(static_cast<int>(i));
    }
    return stream;
}

/// Independent few-shot episodes over combination labels outside the con
/// set, so every episode tests recombination of known classes.
inline std::vector<SysEpisode> build_sys_stream(const std::vector<CompositionLabel>& con_combos,
                                                const std::vector<ClassPattern>& patterns, const DatagenConfig& cfg,
                                                std::uint64_t seed) {
    std::vector<CompositionLabel> universe;
    for (const auto& p : all_pairs(static_cast<int>(patterns.size())))
        if (!std::binary_search(con_combos.begin(), con_combos.end(), p)) universe.push_back(p);
    if (cfg.sys_way < 2 || static_cast<std::size_t>(cfg.sys_way) > universe.size())
        throw std::invalid_argument("build_sys_stream: n_way=" + std::to_string(cfg.sys_way) +
                                    " outside [2," + std::to_string(universe.size()) + "] novel combinations");

    const std::uint64_t base = sub_seed(seed, seed_stream::sys);
    std::vector<SysEpisode> stream(static_cast<std::size_t>(cfg.sys_episodes));
    for (int e = 0; e < cfg.sys_episodes; ++e) {
        SysEpisode& ep = stream[static_cast<std::size_t>(e)];
        ep.episode_id = e;
        Rng rng = make_rng(sub_seed(base, static_cast<std::uint64_t>(e)));
        for (int idx : sample_indices(static_cast<int>(universe.size()), cfg.sys_way, rng))
            ep.labels.push_back(universe[static_cast<std::size_t>(idx)]);
        std::sort(ep.labels.begin(), ep.labels.end());
        ep.support = build_composites(ep.labels, cfg.sys_shots, patterns, cfg, rng);
        ep.query = build_composites(ep.labels, cfg.sys_queries, patterns, cfg, rng);
    }
    return stream;
}

/// The whole benchmark as a pure function of (config, seed).
inline BenchmarkPack generate_pack(const DatagenConfig& cfg, std::uint64_t seed) {
    BenchmarkPack pack;
    pack.config = cfg;
    pack.seed = seed;
    pack.patterns = gen_class_patterns(seed, cfg.n_classes);
    pack.objects = build_object_dataset(pack.patterns, cfg, seed);
    pack.combos = select_combinations(cfg.n_classes, cfg.n_combos, seed);
    Rng comp_rng = make_rng(sub_seed(seed, seed_stream::comp_test));
    pack.comp_test = build_composites(pack.combos, cfg.test_per_combo, pack.patterns, cfg, comp_rng);
    pack.con = build_con_stream(pack.combos, pack.comp_test, pack.patterns, cfg, seed);
    pack.sys = build_sys_stream(pack.combos, pack.patterns, cfg, seed);
    return pack;
}

}  // namespace ecomp
