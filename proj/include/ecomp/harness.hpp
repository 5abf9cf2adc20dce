#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/composition.hpp"
#include "ecomp/config.hpp"
#include "ecomp/continual.hpp"
#include "ecomp/experts.hpp"
#include "ecomp/fewshot.hpp"
#include "ecomp/model_io.hpp"
#include "ecomp/pack_io.hpp"

namespace ecomp {

namespace fs = std::filesystem;

struct ResultRow {
    std::string method;
    std::uint64_t seed = 0;
    int experience_id = -1;  // -1: not tied to a stream position (overall / episodic)
    double accuracy = 0;
    double wall_seconds = 0;
};

/// Append-only run log; the carrier for the accuracy-curve and k-sweep data.
struct ResultsTable {
    std::vector<ResultRow> rows;

    void add(std::string method, std::uint64_t seed, int experience_id, double accuracy, double wall_seconds) {
        if (wall_seconds < 0) throw std::invalid_argument("results table: negative wall time");
        rows.push_back({std::move(method), seed, experience_id, accuracy, wall_seconds});
    }
    void append(const ResultsTable& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }
};

namespace detail {

inline std::string fmt_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string fmt_wall(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); }
};

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

inline constexpr const char* kTableHeader = "method,seed,experience_id,accuracy,wall_seconds";

inline std::string table_csv(const ResultsTable& t) {
    std::ostringstream out;
    out << kTableHeader << "\n";
    for (const ResultRow& r : t.rows)
        out << r.method << ',' << r.seed << ',' << r.experience_id << ',' << detail::fmt_acc(r.accuracy) << ','
            << detail::fmt_wall(r.wall_seconds) << "\n";
    return out.str();
}

inline ResultsTable parse_table_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kTableHeader)
        throw std::runtime_error("results table: bad or missing header");
    ResultsTable t;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> f = detail::split_fields(line);
        if (f.size() != 5) throw std::runtime_error("results table: malformed row '" + line + "'");
        t.add(f[0], std::stoull(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Stage stamps: each artifact directory records the fingerprint of the config
// slice that produced it plus its upstream fingerprint. Reuse requires a
// match; standalone verbs use the upstream line to refuse mixed artifacts.

struct Stamp {
    std::string stage;
    std::string hash;
    std::string upstream;
};

inline void write_stamp(const fs::path& path, const Stamp& s) {
    write_text_file(path, "stage = " + s.stage + "\nhash = " + s.hash + "\nupstream = " + s.upstream + "\n");
}

inline std::optional<Stamp> read_stamp(const fs::path& path) {
    if (!fs::exists(path)) return std::nullopt;
    std::istringstream in(read_text_file(path));
    std::string line;
    Stamp s;
    while (std::getline(in, line)) {
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key == "stage") s.stage = value;
        else if (key == "hash") s.hash = value;
        else if (key == "upstream") s.upstream = value;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Expert artifact store: root/s<i>/expert<j>.{json,bin} + monolith, one
// subdirectory per seed replicate, stamped with the stage fingerprint.

inline void save_expert_set(const fs::path& dir, std::vector<ExpertModel>& experts, Network& monolith_net,
                            std::uint64_t seed, const std::string& config_hash) {
    fs::create_directories(dir);
    for (ExpertModel& ex : experts) {
        ModelMeta meta;
        meta.kind = "expert";
        meta.expert_id = ex.spec.expert_id;
        meta.seed = seed;
        meta.class_ids = ex.spec.owned_classes;
        meta.config_hash = config_hash;
        save_model(dir / ("expert" + std::to_string(ex.spec.expert_id)), ex.net, meta);
    }
    ModelMeta meta;
    meta.kind = "monolith";
    meta.seed = seed;
    meta.config_hash = config_hash;
    save_model(dir / "monolith", monolith_net, meta);
}

inline std::vector<ExpertModel> load_expert_set(const fs::path& dir, const std::string& expect_hash = "") {
    std::vector<ExpertModel> out;
    for (int i = 0;; ++i) {
        const fs::path base = dir / ("expert" + std::to_string(i));
        if (!fs::exists(base.string() + ".json")) break;
        SavedModel m = load_model(base);
        if (!expect_hash.empty() && m.meta.config_hash != expect_hash)
            throw std::runtime_error("expert artifact " + base.string() + " carries config hash '" +
                                     m.meta.config_hash + "', expected '" + expect_hash +
                                     "'; re-run train-experts");
        ExpertModel ex;
        ex.spec.expert_id = m.meta.expert_id;
        ex.spec.owned_classes = m.meta.class_ids;
        ex.net = std::move(m.net);
        out.push_back(std::move(ex));
    }
    if (out.empty())
        throw std::runtime_error("no expert artifacts in " + dir.string() + "; run train-experts first");
    return out;
}

inline Network load_monolith_net(const fs::path& dir, const std::string& expect_hash = "") {
    const fs::path base = dir / "monolith";
    if (!fs::exists(base.string() + ".json"))
        throw std::runtime_error("no monolith artifact in " + dir.string() + "; run train-experts first");
    SavedModel m = load_model(base);
    if (!expect_hash.empty() && m.meta.config_hash != expect_hash)
        throw std::runtime_error("monolith artifact in " + dir.string() + " carries config hash '" +
                                 m.meta.config_hash + "', expected '" + expect_hash + "'; re-run train-experts");
    return std::move(m.net);
}

/// Opened expert stage directory. Accepts either a stage root (with s<i>
/// replicate subdirectories) or a single replicate directory.
struct ExpertStore {
    fs::path root;
    Stamp stamp;
    std::vector<fs::path> set_dirs;

    int n_sets() const { return static_cast<int>(set_dirs.size()); }
    std::vector<ExpertModel> load_set(int i) const { return load_expert_set(set_dirs.at(i), stamp.hash); }
    Network load_monolith(int i) const { return load_monolith_net(set_dirs.at(i), stamp.hash); }
};

inline ExpertStore open_experts(const fs::path& root) {
    ExpertStore store;
    store.root = root;
    std::optional<Stamp> st = read_stamp(root / "STAMP");
    if (!st || st->stage != "experts")
        throw std::runtime_error("no expert stage stamp at " + root.string() + "; run train-experts first");
    store.stamp = *st;
    if (fs::exists(root / "expert0.json")) {
        store.set_dirs.push_back(root);
        return store;
    }
    for (int i = 0;; ++i) {
        const fs::path dir = root / ("s" + std::to_string(i));
        if (!fs::exists(dir / "expert0.json")) break;
        store.set_dirs.push_back(dir);
    }
    if (store.set_dirs.empty())
        throw std::runtime_error("no expert artifacts under " + root.string() + "; run train-experts first");
    return store;
}

/// Refuses experts that were trained against a different pack.
inline void check_experts_match_pack(const ExpertStore& store, const BenchmarkPack& pack) {
    const std::string h = pack_hash(pack.config, pack.seed);
    if (store.stamp.upstream != h)
        throw std::runtime_error("experts at " + store.root.string() +
                                 " were trained on a different pack; re-run train-experts against this pack");
}

// ---------------------------------------------------------------------------
// Pinned result surfaces.

inline std::string experts_report_csv(const std::vector<ExpertModel>& experts, int epochs) {
    std::ostringstream out;
    out << "expert_id,test_accuracy,epochs,wall_seconds\n";
    for (const ExpertModel& ex : experts)
        out << ex.spec.expert_id << ',' << detail::fmt_acc(ex.test_accuracy) << ',' << epochs << ','
            << detail::fmt_wall(ex.wall_seconds) << "\n";
    return out.str();
}

inline std::string zero_shot_csv(const ZeroShotResult& z) {
    std::ostringstream out;
    out << "experience_id,n_samples,accuracy,duplicates,malformed,abstain_fallback_rate\n";
    auto row = [&](const ExperienceScore& s) {
        out << s.experience_id << ',' << s.n_samples << ',' << detail::fmt_acc(s.accuracy()) << ',' << s.duplicates
            << ',' << s.malformed << ',' << detail::fmt_acc(s.abstain_fallback_rate()) << "\n";
    };
    for (const ExperienceScore& s : z.per_experience) row(s);
    row(z.overall);
    return out.str();
}

inline std::string fewshot_csv(const std::vector<FewshotRow>& rows) {
    std::ostringstream out;
    out << "k,seed,mean_acc,std_acc,n_episodes\n";
    for (const FewshotRow& r : rows)
        out << r.k << ',' << r.seed << ',' << detail::fmt_acc(r.mean_acc) << ',' << detail::fmt_acc(r.std_acc) << ','
            << r.n_episodes << "\n";
    return out.str();
}

inline std::string baseline_csv(const BaselineResult& r) {
    std::ostringstream out;
    out << "experience_id,avg_accuracy_so_far,per_experience_accuracies\n";
    for (std::size_t t = 0; t < r.acc.size(); ++t) {
        out << t << ',' << detail::fmt_acc(r.avg_so_far[t]) << ',';
        for (std::size_t e = 0; e < r.acc[t].size(); ++e) out << (e ? ";" : "") << detail::fmt_acc(r.acc[t][e]);
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Report: plain-text comparison summary plus plot-ready series, rebuilt from
// the results table alone so it can be regenerated without models or packs.

inline constexpr const char* kFewshotReference =
    "k=3 18.82 +/- 0.98, k=5 35.77 +/- 1.68, k=7 42.82 +/- 1.45";

inline void emit_report(const fs::path& results_dir, const fs::path& report_dir) {
    const fs::path table_path = results_dir / "results_table.csv";
    if (!fs::exists(table_path))
        throw std::runtime_error("no results table at " + table_path.string() +
                                 "; run run-all (or the individual eval verbs) first");
    const ResultsTable table = parse_table_csv(read_text_file(table_path));
    fs::create_directories(report_dir);

    // Method order follows first appearance so the report mirrors the run.
    std::vector<std::string> curve_methods;
    std::map<std::string, std::map<int, std::pair<double, int>>> sums;  // method -> t -> (sum, n)
    std::map<std::string, std::pair<double, int>> ec_overall;           // keyed "" single slot
    std::map<int, std::vector<double>> fewshot_by_k;                    // k -> per-seed means
    int n_experiences = 0;

    for (const ResultRow& r : table.rows) {
        if (r.method.rfind("fewshot_k", 0) == 0) {
            fewshot_by_k[std::stoi(r.method.substr(9))].push_back(r.accuracy);
            continue;
        }
        if (r.method == "ec") {
            if (r.experience_id < 0) {
                ec_overall[""].first += r.accuracy;
                ec_overall[""].second += 1;
            } else {
                n_experiences = std::max(n_experiences, r.experience_id + 1);
            }
            continue;
        }
        if (std::find(curve_methods.begin(), curve_methods.end(), r.method) == curve_methods.end())
            curve_methods.push_back(r.method);
        auto& slot = sums[r.method][r.experience_id];
        slot.first += r.accuracy;
        slot.second += 1;
        n_experiences = std::max(n_experiences, r.experience_id + 1);
    }

    const bool have_ec = ec_overall[""].second > 0;
    const double ec_final = have_ec ? ec_overall[""].first / ec_overall[""].second : 0;

    std::map<std::string, double> finals;
    for (const std::string& m : curve_methods) {
        const auto& by_t = sums[m];
        const auto& last = by_t.rbegin()->second;
        finals[m] = last.first / last.second;
    }

    // fig_accuracy_curves.csv: ec is flat at its overall value; a method with
    // no row at some x carries its last value forward (joint training has a
    // single row, so it plots as the constant reference it is).
    {
        std::ostringstream out;
        out << "method,experience_index,accuracy\n";
        if (have_ec)
            for (int x = 0; x < std::max(n_experiences, 1); ++x)
                out << "ec," << x << ',' << detail::fmt_acc(ec_final) << "\n";
        for (const std::string& m : curve_methods) {
            double last = 0;
            for (int x = 0; x < std::max(n_experiences, 1); ++x) {
                auto it = sums[m].find(x);
                if (it != sums[m].end()) last = it->second.first / it->second.second;
                out << m << ',' << x << ',' << detail::fmt_acc(last) << "\n";
            }
        }
        write_text_file(report_dir / "fig_accuracy_curves.csv", out.str());
    }

    // fig_fewshot.csv: mean and spread across protocol seeds per k.
    std::map<int, std::pair<double, double>> fewshot_stats;
    {
        std::ostringstream out;
        out << "k,mean_acc,std_acc\n";
        for (const auto& [k, means] : fewshot_by_k) {
            double mean = 0;
            for (double v : means) mean += v;
            mean /= static_cast<double>(means.size());
            double var = 0;
            for (double v : means) var += (v - mean) * (v - mean);
            const double sd = means.size() > 1 ? std::sqrt(var / static_cast<double>(means.size() - 1)) : 0.0;
            fewshot_stats[k] = {mean, sd};
            out << k << ',' << detail::fmt_acc(mean) << ',' << detail::fmt_acc(sd) << "\n";
        }
        write_text_file(report_dir / "fig_fewshot.csv", out.str());
    }

    std::ostringstream rep;
    rep << "experiment report\n=================\n";

    if (have_ec || !curve_methods.empty()) {
        rep << "\nfinal accuracy, mean over seeds:\n";
        if (have_ec) rep << "  ec          " << detail::fmt_acc(ec_final) << "  (zero-shot composition)\n";
        for (const std::string& m : curve_methods) {
            rep << "  " << m << std::string(m.size() < 10 ? 10 - m.size() : 1, ' ') << "  "
                << detail::fmt_acc(finals[m]);
            if (m == "multitask") rep << "  (joint training; non-continual reference)";
            rep << "\n";
        }
    }

    std::string best_seq;
    for (const std::string& m : curve_methods) {
        if (m == "multitask") continue;
        if (best_seq.empty() || finals[m] > finals[best_seq]) best_seq = m;
    }
    if (have_ec && !best_seq.empty()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", finals[best_seq] > 0 ? ec_final / finals[best_seq] : 0.0);
        rep << "\ncomposition vs best sequential baseline: " << buf << "x  (ec " << detail::fmt_acc(ec_final) << " / "
            << best_seq << " " << detail::fmt_acc(finals[best_seq]) << ")\n";
    }

    if (!fewshot_stats.empty()) {
        rep << "\nfew-shot expert selection, mean +/- std over seeds:\n";
        for (const auto& [k, ms] : fewshot_stats)
            rep << "  k=" << k << "  " << detail::fmt_acc(ms.first) << " +/- " << detail::fmt_acc(ms.second) << "\n";
        bool monotone = fewshot_stats.size() > 1;
        double prev = -1;
        for (const auto& [k, ms] : fewshot_stats) {
            if (ms.first <= prev) monotone = false;
            prev = ms.first;
        }
        rep << "  trend: " << (monotone ? "monotone" : "not monotone") << "\n";
        rep << "  full-scale reference values (different dataset; not reproduced here):\n";
        rep << "    " << kFewshotReference << "\n";
    }

    rep << "\nseries files: fig_accuracy_curves.csv, fig_fewshot.csv\n";
    write_text_file(report_dir / "report.txt", rep.str());
}

// ---------------------------------------------------------------------------
// Staged orchestration. Every stage owns one artifact directory plus a stamp;
// a stage re-executes when its stamp is missing or stale or anything upstream
// re-executed, so deleting an artifact re-runs exactly that stage and its
// dependents.

struct StageOutcome {
    bool datagen = false;
    bool experts = false;
    bool ec = false;
    bool fewshot = false;
    bool baseline = false;
};

/// Trains the replicate expert sets (seed, seed+1, ...) plus one monolith
/// each, persists them under root/s<i>, and writes the stage report + stamp.
inline void run_experts_stage(const RunConfig& cfg, const BenchmarkPack& pack, const fs::path& root,
                              std::vector<std::vector<ExpertModel>>& sets, std::vector<Network>& monoliths,
                              std::ostream* log = nullptr) {
    const StageHashes hashes = stage_hashes(cfg);
    if (fs::exists(root)) fs::remove_all(root);
    fs::create_directories(root);

    TrainHyper hyper;
    hyper.epochs = cfg.expert_epochs;
    hyper.batch_size = cfg.expert_batch;
    hyper.lr = cfg.expert_lr;

    sets.assign(static_cast<std::size_t>(cfg.n_seeds), {});
    monoliths.assign(static_cast<std::size_t>(cfg.n_seeds), Network{});
    for (int i = 0; i < cfg.n_seeds; ++i) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
        const std::vector<ExpertSpec> specs = partition_classes(cfg.data.n_classes, cfg.per_expert, seed);
        for (const ExpertSpec& spec : specs) {
            detail::Stopwatch w;
            ExpertModel m = train_expert(spec, pack.objects, cfg.data, hyper, seed);
            m.wall_seconds = w.seconds();
            if (log)
                (*log) << "experts: seed " << seed << " expert " << spec.expert_id << " test acc "
                       << detail::fmt_acc(m.test_accuracy) << " (" << detail::fmt_wall(m.wall_seconds) << "s)\n"
                       << std::flush;
            sets[i].push_back(std::move(m));
        }
        detail::Stopwatch w;
        MonolithModel mono = train_monolith(pack.objects, cfg.data, hyper, seed);
        if (log)
            (*log) << "experts: seed " << seed << " monolith test acc " << detail::fmt_acc(mono.test_accuracy) << " ("
                   << detail::fmt_wall(w.seconds()) << "s)\n"
                   << std::flush;
        monoliths[i] = std::move(mono.net);
        save_expert_set(root / ("s" + std::to_string(i)), sets[i], monoliths[i], seed, hashes.experts);
    }
    write_text_file(root / "experts_report.csv", experts_report_csv(sets[0], cfg.expert_epochs));
    // Upstream records the pack actually trained on, which differs from the
    // config-derived hash when EC_SEED overrides the seed of an existing pack.
    write_stamp(root / "STAMP", {"experts", hashes.experts, pack_hash(pack.config, pack.seed)});
}

inline StageOutcome run_experiment(const RunConfig& cfg, std::ostream* log = nullptr) {
    auto say = [&](const std::string& s) {
        if (log) (*log) << s << "\n" << std::flush;
    };
    const StageHashes hashes = stage_hashes(cfg);
    const fs::path out = cfg.out;
    const fs::path pack_dir = out / "pack";
    const fs::path exp_root = out / "experts";
    const fs::path res_dir = out / "results";
    fs::create_directories(out);
    fs::create_directories(res_dir);
    write_text_file(out / "config.txt", config_text(cfg));

    StageOutcome ran;

    std::optional<BenchmarkPack> pack_mem;
    {
        std::optional<Stamp> st = read_stamp(pack_dir / "STAMP");
        if (!st || st->hash != hashes.pack || !fs::exists(pack_dir / "manifest.json")) {
            say("datagen: generating pack");
            detail::Stopwatch w;
            pack_mem = generate_pack(cfg.data, cfg.seed);
            save_pack(pack_dir, *pack_mem);
            write_stamp(pack_dir / "STAMP", {"datagen", hashes.pack, ""});
            say("datagen: done (" + detail::fmt_wall(w.seconds()) + "s)");
            ran.datagen = true;
        } else {
            say("datagen: pack up to date");
        }
    }
    const BenchmarkPack pack = pack_mem ? std::move(*pack_mem) : load_pack(pack_dir);
    pack_mem.reset();

    std::vector<std::vector<ExpertModel>> sets;
    std::vector<Network> monoliths;
    {
        std::optional<Stamp> st = read_stamp(exp_root / "STAMP");
        bool fresh = ran.datagen || !st || st->hash != hashes.experts;
        if (!fresh)
            for (int i = 0; i < cfg.n_seeds; ++i)
                if (!fs::exists(exp_root / ("s" + std::to_string(i)) / "expert0.json")) fresh = true;
        if (fresh) {
            say("experts: training " + std::to_string(cfg.n_seeds) + " replicate set(s)");
            detail::Stopwatch w;
            run_experts_stage(cfg, pack, exp_root, sets, monoliths, log);
            say("experts: done (" + detail::fmt_wall(w.seconds()) + "s)");
            ran.experts = true;
        } else {
            say("experts: artifacts up to date");
        }
    }
    auto expert_set = [&](int i) -> std::vector<ExpertModel>& {
        if (sets.empty()) sets.resize(static_cast<std::size_t>(cfg.n_seeds));
        if (sets[i].empty()) sets[i] = load_expert_set(exp_root / ("s" + std::to_string(i)), hashes.experts);
        return sets[i];
    };
    auto monolith_net = [&](int i) -> Network& {
        if (monoliths.empty()) monoliths.assign(static_cast<std::size_t>(cfg.n_seeds), Network{});
        if (monoliths[i].parameters().empty())
            monoliths[i] = load_monolith_net(exp_root / ("s" + std::to_string(i)), hashes.experts);
        return monoliths[i];
    };

    if (wants_method(cfg, "ec")) {
        std::optional<Stamp> st = read_stamp(res_dir / "STAMP.ec");
        const bool fresh = ran.experts || !st || st->hash != hashes.ec || !fs::exists(res_dir / "table_ec.csv") ||
                           !fs::exists(res_dir / "results_ec.csv");
        if (fresh) {
            ResultsTable frag;
            ComposeConfig ccfg;
            ccfg.oracle_occupancy = cfg.oracle_occupancy;
            for (int i = 0; i < cfg.n_seeds; ++i) {
                const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
                detail::Stopwatch w;
                const ZeroShotResult z = evaluate_zero_shot(expert_set(i), pack, ccfg);
                const double wall = w.seconds();
                for (const ExperienceScore& s : z.per_experience)
                    frag.add("ec", seed, s.experience_id, s.accuracy(), 0.0);
                frag.add("ec", seed, -1, z.overall.accuracy(), wall);
                say("ec: seed " + std::to_string(seed) + " overall " + detail::fmt_acc(z.overall.accuracy()) + " (" +
                    detail::fmt_wall(wall) + "s)");
                if (i == 0) write_text_file(res_dir / "results_ec.csv", zero_shot_csv(z));
            }
            write_text_file(res_dir / "table_ec.csv", table_csv(frag));
            write_stamp(res_dir / "STAMP.ec", {"ec", hashes.ec, hashes.experts});
            ran.ec = true;
        } else {
            say("ec: results up to date");
        }
    }

    if (wants_method(cfg, "fewshot")) {
        std::optional<Stamp> st = read_stamp(res_dir / "STAMP.fewshot");
        const bool fresh = ran.experts || !st || st->hash != hashes.fewshot ||
                           !fs::exists(res_dir / "table_fewshot.csv") || !fs::exists(res_dir / "results_fewshot.csv");
        if (fresh) {
            const FeatureMode mode =
                cfg.feature_mode == "quadrant" ? FeatureMode::per_quadrant : FeatureMode::whole_downsampled;
            HeadHyper hh;
            hh.epochs = cfg.head_epochs;
            hh.lr = cfg.head_lr;
            detail::Stopwatch wc;
            const SysCache cache = build_sys_cache(expert_set(0), pack.sys, mode);
            say("fewshot: cache built (" + detail::fmt_wall(wc.seconds()) + "s)");
            ResultsTable frag;
            std::vector<FewshotRow> rows;
            for (int k : cfg.fewshot_ks)
                for (int j = 0; j < cfg.fewshot_seeds; ++j) {
                    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(j);
                    detail::Stopwatch w;
                    const SysRunResult r = run_sys_protocol(cache, k, seed, hh);
                    rows.push_back({r.k, r.seed, r.mean_acc, r.std_acc, static_cast<int>(r.per_episode.size())});
                    frag.add("fewshot_k" + std::to_string(k), seed, -1, r.mean_acc, w.seconds());
                    say("fewshot: k=" + std::to_string(k) + " seed " + std::to_string(seed) + " mean " +
                        detail::fmt_acc(r.mean_acc));
                }
            write_text_file(res_dir / "results_fewshot.csv", fewshot_csv(rows));
            write_text_file(res_dir / "table_fewshot.csv", table_csv(frag));
            write_stamp(res_dir / "STAMP.fewshot", {"fewshot", hashes.fewshot, hashes.experts});
            ran.fewshot = true;
        } else {
            say("fewshot: results up to date");
        }
    }

    const std::vector<std::string> bms = baseline_methods(cfg);
    if (!bms.empty()) {
        std::optional<Stamp> st = read_stamp(res_dir / "STAMP.baseline");
        bool fresh = ran.experts || !st || st->hash != hashes.baseline || !fs::exists(res_dir / "table_baseline.csv");
        for (const std::string& m : bms)
            if (!fs::exists(res_dir / ("results_" + m + ".csv"))) fresh = true;
        if (fresh) {
            BaselineHyper bh;
            bh.epochs = cfg.baseline_epochs;
            bh.batch_size = cfg.baseline_batch;
            bh.lr = cfg.baseline_lr;
            bh.buffer_capacity = cfg.buffer_capacity;
            bh.lambda = cfg.ewc_lambda;
            ResultsTable frag;
            for (const std::string& m : bms)
                for (int i = 0; i < cfg.n_seeds; ++i) {
                    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
                    Network* pre = cfg.pretrained_backbone ? &monolith_net(i) : nullptr;
                    detail::Stopwatch w;
                    const BaselineResult r = run_baseline(method_from(m), pack, bh, seed, pre);
                    const double wall = w.seconds();
                    for (std::size_t t = 0; t < r.avg_so_far.size(); ++t)
                        frag.add(m, seed, static_cast<int>(t), r.avg_so_far[t],
                                 t + 1 == r.avg_so_far.size() ? wall : 0.0);
                    say("baseline: " + m + " seed " + std::to_string(seed) + " final " +
                        detail::fmt_acc(r.final_avg()) + " (" + detail::fmt_wall(wall) + "s)");
                    if (i == 0) write_text_file(res_dir / ("results_" + m + ".csv"), baseline_csv(r));
                }
            write_text_file(res_dir / "table_baseline.csv", table_csv(frag));
            write_stamp(res_dir / "STAMP.baseline", {"baseline", hashes.baseline, hashes.experts});
            ran.baseline = true;
        } else {
            say("baseline: results up to date");
        }
    }

    // Full table = the fragments of every requested stage, in stage order.
    ResultsTable all;
    if (wants_method(cfg, "ec") && fs::exists(res_dir / "table_ec.csv"))
        all.append(parse_table_csv(read_text_file(res_dir / "table_ec.csv")));
    if (wants_method(cfg, "fewshot") && fs::exists(res_dir / "table_fewshot.csv"))
        all.append(parse_table_csv(read_text_file(res_dir / "table_fewshot.csv")));
    if (!bms.empty() && fs::exists(res_dir / "table_baseline.csv"))
        all.append(parse_table_csv(read_text_file(res_dir / "table_baseline.csv")));
    write_text_file(res_dir / "results_table.csv", table_csv(all));

    emit_report(res_dir, out / "report");
    say("report: " + (out / "report" / "report.txt").string());
    return ran;
}

}  // namespace ecomp
