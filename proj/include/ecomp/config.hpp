#pragma once

#include <cstdlib>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/bytes.hpp"
#include "ecomp/datagen.hpp"
#include "ecomp/hash.hpp"

namespace ecomp {

/// Everything a full experiment run needs, parsed from a flat key=value file.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "runs/default";

    DatagenConfig data;

    int per_expert = 3;
    int expert_epochs = 10;
    int expert_batch = 64;
    double expert_lr = 1e-3;
    int n_seeds = 3;

    bool oracle_occupancy = false;

    std::vector<int> fewshot_ks = {3, 5, 7};
    int fewshot_seeds = 5;
    int head_epochs = 50;
    double head_lr = 1e-3;
    std::string feature_mode = "whole";  // whole | quadrant

    /// Which evaluations run-all executes. "ec" and "fewshot" name the
    /// composition stages; the rest are continual baselines.
    std::vector<std::string> methods = {"ec", "fewshot", "finetune", "er", "ewc", "multitask"};
    int baseline_epochs = 8;
    int baseline_batch = 64;
    double baseline_lr = 1e-3;
    std::size_t buffer_capacity = 500;
    double ewc_lambda = 100.0;
    bool pretrained_backbone = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!trim(cur).empty()) out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: key '" + key + "' expects true/false, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T out;
    in >> out;
    if (in.fail() || !in.eof())
        throw std::invalid_argument("config: key '" + key + "' has malformed value '" + v + "'");
    return out;
}

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key or value");

        using detail::parse_bool;
        using detail::parse_num;
        if (key == "seed") cfg.seed = parse_num<std::uint64_t>(key, value);
        else if (key == "out") cfg.out = value;
        else if (key == "n_classes") cfg.data.n_classes = parse_num<int>(key, value);
        else if (key == "resolution") cfg.data.resolution = parse_num<int>(key, value);
        else if (key == "train_per_class") cfg.data.train_per_class = parse_num<int>(key, value);
        else if (key == "val_per_class") cfg.data.val_per_class = parse_num<int>(key, value);
        else if (key == "test_per_class") cfg.data.test_per_class = parse_num<int>(key, value);
        else if (key == "n_combos") cfg.data.n_combos = parse_num<int>(key, value);
        else if (key == "test_per_combo") cfg.data.test_per_combo = parse_num<int>(key, value);
        else if (key == "con_experiences") cfg.data.con_experiences = parse_num<int>(key, value);
        else if (key == "con_train_per_combo") cfg.data.con_train_per_combo = parse_num<int>(key, value);
        else if (key == "sys_episodes") cfg.data.sys_episodes = parse_num<int>(key, value);
        else if (key == "sys_way") cfg.data.sys_way = parse_num<int>(key, value);
        else if (key == "sys_shots") cfg.data.sys_shots = parse_num<int>(key, value);
        else if (key == "sys_queries") cfg.data.sys_queries = parse_num<int>(key, value);
        else if (key == "jitter_px") cfg.data.jitter_px = parse_num<int>(key, value);
        else if (key == "intensity_lo") cfg.data.intensity_lo = parse_num<double>(key, value);
        else if (key == "intensity_hi") cfg.data.intensity_hi = parse_num<double>(key, value);
        else if (key == "noise") cfg.data.noise = parse_num<double>(key, value);
        else if (key == "per_expert") cfg.per_expert = parse_num<int>(key, value);
        else if (key == "expert_epochs") cfg.expert_epochs = parse_num<int>(key, value);
        else if (key == "expert_batch") cfg.expert_batch = parse_num<int>(key, value);
        else if (key == "expert_lr") cfg.expert_lr = parse_num<double>(key, value);
        else if (key == "n_seeds") cfg.n_seeds = parse_num<int>(key, value);
        else if (key == "oracle_occupancy") cfg.oracle_occupancy = parse_bool(key, value);
        else if (key == "fewshot_ks") {
            cfg.fewshot_ks.clear();
            for (const std::string& item : detail::split_list(value))
                cfg.fewshot_ks.push_back(parse_num<int>(key, item));
            if (cfg.fewshot_ks.empty()) throw std::invalid_argument("config: fewshot_ks must not be empty");
        } else if (key == "fewshot_seeds") cfg.fewshot_seeds = parse_num<int>(key, value);
        else if (key == "head_epochs") cfg.head_epochs = parse_num<int>(key, value);
        else if (key == "head_lr") cfg.head_lr = parse_num<double>(key, value);
        else if (key == "feature_mode") {
            if (value != "whole" && value != "quadrant")
                throw std::invalid_argument("config: feature_mode must be 'whole' or 'quadrant'");
            cfg.feature_mode = value;
        } else if (key == "methods") {
            cfg.methods = detail::split_list(value);
            if (cfg.methods.empty()) throw std::invalid_argument("config: methods must not be empty");
            for (const std::string& m : cfg.methods)
                if (m != "ec" && m != "fewshot" && m != "finetune" && m != "er" && m != "ewc" && m != "multitask")
                    throw std::invalid_argument("config: unknown method '" + m + "'");
        } else if (key == "baseline_epochs") cfg.baseline_epochs = parse_num<int>(key, value);
        else if (key == "baseline_batch") cfg.baseline_batch = parse_num<int>(key, value);
        else if (key == "baseline_lr") cfg.baseline_lr = parse_num<double>(key, value);
        else if (key == "buffer_capacity") cfg.buffer_capacity = parse_num<std::size_t>(key, value);
        else if (key == "ewc_lambda") cfg.ewc_lambda = parse_num<double>(key, value);
        else if (key == "pretrained_backbone") cfg.pretrained_backbone = parse_bool(key, value);
        else throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (cfg.n_seeds < 1) throw std::invalid_argument("config: n_seeds must be >= 1");
    if (cfg.fewshot_seeds < 1) throw std::invalid_argument("config: fewshot_seeds must be >= 1");
    return cfg;
}

/// Loads a config file and applies the EC_SEED environment override.
inline RunConfig load_config(const std::string& path) {
    RunConfig cfg = parse_config(read_text_file(path));
    if (const char* env = std::getenv("EC_SEED")) {
        cfg.seed = detail::parse_num<std::uint64_t>("EC_SEED", env);
    }
    return cfg;
}

/// Canonical echo: fixed key order, normalized values. Feeds both the
/// persisted config.txt and the stage hashes.
inline std::string config_text(const RunConfig& c) {
    std::ostringstream out;
    using detail::fmt_double;
    out << "seed = " << c.seed << "\n";
    out << "out = " << c.out << "\n";
    out << "n_classes = " << c.data.n_classes << "\n";
    out << "resolution = " << c.data.resolution << "\n";
    out << "train_per_class = " << c.data.train_per_class << "\n";
    out << "val_per_class = " << c.data.val_per_class << "\n";
    out << "test_per_class = " << c.data.test_per_class << "\n";
    out << "n_combos = " << c.data.n_combos << "\n";
    out << "test_per_combo = " << c.data.test_per_combo << "\n";
    out << "con_experiences = " << c.data.con_experiences << "\n";
    out << "con_train_per_combo = " << c.data.con_train_per_combo << "\n";
    out << "sys_episodes = " << c.data.sys_episodes << "\n";
    out << "sys_way = " << c.data.sys_way << "\n";
    out << "sys_shots = " << c.data.sys_shots << "\n";
    out << "sys_queries = " << c.data.sys_queries << "\n";
    out << "jitter_px = " << c.data.jitter_px << "\n";
    out << "intensity_lo = " << fmt_double(c.data.intensity_lo) << "\n";
    out << "intensity_hi = " << fmt_double(c.data.intensity_hi) << "\n";
    out << "noise = " << fmt_double(c.data.noise) << "\n";
    out << "per_expert = " << c.per_expert << "\n";
    out << "expert_epochs = " << c.expert_epochs << "\n";
    out << "expert_batch = " << c.expert_batch << "\n";
    out << "expert_lr = " << fmt_double(c.expert_lr) << "\n";
    out << "n_seeds = " << c.n_seeds << "\n";
    out << "oracle_occupancy = " << (c.oracle_occupancy ? "true" : "false") << "\n";
    out << "fewshot_ks = ";
    for (std::size_t i = 0; i < c.fewshot_ks.size(); ++i) out << (i ? "," : "") << c.fewshot_ks[i];
    out << "\n";
    out << "fewshot_seeds = " << c.fewshot_seeds << "\n";
    out << "head_epochs = " << c.head_epochs << "\n";
    out << "head_lr = " << fmt_double(c.head_lr) << "\n";
    out << "feature_mode = " << c.feature_mode << "\n";
    out << "methods = ";
    for (std::size_t i = 0; i < c.methods.size(); ++i) out << (i ? "," : "") << c.methods[i];
    out << "\n";
    out << "baseline_epochs = " << c.baseline_epochs << "\n";
    out << "baseline_batch = " << c.baseline_batch << "\n";
    out << "baseline_lr = " << fmt_double(c.baseline_lr) << "\n";
    out << "buffer_capacity = " << c.buffer_capacity << "\n";
    out << "ewc_lambda = " << fmt_double(c.ewc_lambda) << "\n";
    out << "pretrained_backbone = " << (c.pretrained_backbone ? "true" : "false") << "\n";
    return out.str();
}

inline bool wants_method(const RunConfig& c, const std::string& name) {
    for (const std::string& m : c.methods)
        if (m == name) return true;
    return false;
}

/// The continual-learning subset of the methods list, in listed order.
inline std::vector<std::string> baseline_methods(const RunConfig& c) {
    std::vector<std::string> out;
    for (const std::string& m : c.methods)
        if (m != "ec" && m != "fewshot") out.push_back(m);
    return out;
}

/// Per-stage fingerprints. Each stage's hash covers exactly the keys that
/// influence its artifact plus its upstream hash, so unrelated config edits
/// leave finished stages reusable while relevant ones invalidate the chain.
struct StageHashes {
    std::string pack;
    std::string experts;
    std::string ec;
    std::string fewshot;
    std::string baseline;
};

/// Identity of a generated pack; computable from a loaded pack's manifest
/// alone, so standalone verbs can cross-check artifacts without a run config.
inline std::string pack_hash(const DatagenConfig& d, std::uint64_t seed) {
    using detail::fmt_double;
    std::ostringstream s;
    s << "datagen|seed=" << seed << "|K=" << d.n_classes << "|res=" << d.resolution << "|train=" << d.train_per_class
      << "|val=" << d.val_per_class << "|test=" << d.test_per_class << "|combos=" << d.n_combos
      << "|tpc=" << d.test_per_combo << "|conE=" << d.con_experiences << "|conT=" << d.con_train_per_combo
      << "|sysE=" << d.sys_episodes << "|way=" << d.sys_way << "|shots=" << d.sys_shots << "|queries=" << d.sys_queries
      << "|jit=" << d.jitter_px << "|ilo=" << fmt_double(d.intensity_lo) << "|ihi=" << fmt_double(d.intensity_hi)
      << "|noise=" << fmt_double(d.noise);
    return sha256_hex(s.str());
}

inline StageHashes stage_hashes(const RunConfig& c) {
    using detail::fmt_double;
    StageHashes h;
    h.pack = pack_hash(c.data, c.seed);
    {
        std::ostringstream s;
        s << "experts|" << h.pack << "|per=" << c.per_expert << "|epochs=" << c.expert_epochs
          << "|batch=" << c.expert_batch << "|lr=" << fmt_double(c.expert_lr) << "|seeds=" << c.n_seeds;
        h.experts = sha256_hex(s.str());
    }
    {
        std::ostringstream s;
        s << "ec|" << h.experts << "|oracle=" << (c.oracle_occupancy ? 1 : 0);
        h.ec = sha256_hex(s.str());
    }
    {
        std::ostringstream s;
        s << "fewshot|" << h.experts << "|ks=";
        for (std::size_t i = 0; i < c.fewshot_ks.size(); ++i) s << (i ? "," : "") << c.fewshot_ks[i];
        s << "|seeds=" << c.fewshot_seeds << "|epochs=" << c.head_epochs << "|lr=" << fmt_double(c.head_lr)
          << "|mode=" << c.feature_mode;
        h.fewshot = sha256_hex(s.str());
    }
    {
        const std::vector<std::string> methods = baseline_methods(c);
        std::ostringstream s;
        s << "baseline|" << h.experts << "|methods=";
        for (std::size_t i = 0; i < methods.size(); ++i) s << (i ? "," : "") << methods[i];
        s << "|epochs=" << c.baseline_epochs << "|batch=" << c.baseline_batch << "|lr=" << fmt_double(c.baseline_lr)
          << "|cap=" << c.buffer_capacity << "|lambda=" << fmt_double(c.ewc_lambda)
          << "|pre=" << (c.pretrained_backbone ? 1 : 0) << "|seeds=" << c.n_seeds;
        h.baseline = sha256_hex(s.str());
    }
    return h;
}

}  // namespace ecomp
