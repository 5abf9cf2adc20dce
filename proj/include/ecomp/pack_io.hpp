#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecomp/bytes.hpp"
#include "ecomp/datagen.hpp"
#include "ecomp/hash.hpp"

namespace ecomp {

namespace detail {

inline nlohmann::json config_to_json(const DatagenConfig& c) {
    return {{"n_classes", c.n_classes},
            {"resolution", c.resolution},
            {"train_per_class", c.train_per_class},
            {"val_per_class", c.val_per_class},
            {"test_per_class", c.test_per_class},
            {"n_combos", c.n_combos},
            {"test_per_combo", c.test_per_combo},
            {"con_experiences", c.con_experiences},
            {"con_train_per_combo", c.con_train_per_combo},
            {"sys_episodes", c.sys_episodes},
            {"sys_way", c.sys_way},
            {"sys_shots", c.sys_shots},
            {"sys_queries", c.sys_queries},
            {"jitter_px", c.jitter_px},
            {"intensity_lo", c.intensity_lo},
            {"intensity_hi", c.intensity_hi},
            {"noise", c.noise}};
}

inline DatagenConfig config_from_json(const nlohmann::json& j) {
    DatagenConfig c;
    c.n_classes = j.at("n_classes").get<int>();
    c.resolution = j.at("resolution").get<int>();
    c.train_per_class = j.at("train_per_class").get<int>();
    c.val_per_class = j.at("val_per_class").get<int>();
    c.test_per_class = j.at("test_per_class").get<int>();
    c.n_combos = j.at("n_combos").get<int>();
    c.test_per_combo = j.at("test_per_combo").get<int>();
    c.con_experiences = j.at("con_experiences").get<int>();
    c.con_train_per_combo = j.at("con_train_per_combo").get<int>();
    c.sys_episodes = j.at("sys_episodes").get<int>();
    c.sys_way = j.at("sys_way").get<int>();
    c.sys_shots = j.at("sys_shots").get<int>();
    c.sys_queries = j.at("sys_queries").get<int>();
    c.jitter_px = j.at("jitter_px").get<int>();
    c.intensity_lo = j.at("intensity_lo").get<double>();
    c.intensity_hi = j.at("intensity_hi").get<double>();
    c.noise = j.at("noise").get<double>();
    return c;
}

inline void put_composite(ByteWriter& w, const CompositeImage& comp) {
    w.u16(static_cast<std::uint16_t>(comp.label.lo));
    w.u16(static_cast<std::uint16_t>(comp.label.hi));
    w.u16(static_cast<std::uint16_t>(comp.quad_lo));
    w.u16(static_cast<std::uint16_t>(comp.quad_hi));
    w.f32_span(comp.image.data.data(), comp.image.numel());
}

inline CompositeImage take_composite(ByteReader& r, int res) {
    CompositeImage comp;
    comp.label.lo = r.u16();
    comp.label.hi = r.u16();
    comp.quad_lo = r.u16();
    comp.quad_hi = r.u16();
    comp.image = Tensor({1, 2 * res, 2 * res});
    r.f32_span(comp.image.data.data(), comp.image.numel());
    return comp;
}

inline std::vector<int> test_indices_for(const std::vector<CompositionLabel>& labels,
                                         const std::vector<CompositeImage>& comp_test) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < comp_test.size(); ++i)
        if (std::binary_search(labels.begin(), labels.end(), comp_test[i].label)) idx.push_back(static_cast<int>(i));
    return idx;
}

}  // namespace detail

/// Pack directory layout: manifest.json (config, seed, per-section offsets,
/// byte counts, CRC32s) + data.bin (sections back to back, each a u32 record
/// count followed by fixed-width records: u16 label fields, then f32 pixels).
inline void save_pack(const std::filesystem::path& dir, const BenchmarkPack& pack) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json sections = nlohmann::json::object();
    std::vector<std::uint8_t> file;
    auto add_section = [&](const std::string& name, ByteWriter&& w, std::size_t count) {
        sections[name] = {{"offset", file.size()},
                          {"bytes", w.buf.size()},
                          {"crc32", to_hex(crc32(w.buf.data(), w.buf.size()))},
                          {"count", count}};
        file.insert(file.end(), w.buf.begin(), w.buf.end());
    };
    auto object_section = [&](const std::vector<std::vector<Sample>>& split) {
        ByteWriter w;
        std::size_t count = 0;
        for (const auto& per_class : split) count += per_class.size();
        w.buf.reserve(4 + count * (2 + static_cast<std::size_t>(pack.config.resolution) *
                                           static_cast<std::size_t>(pack.config.resolution) * 4));
        w.u32(static_cast<std::uint32_t>(count));
        for (const auto& per_class : split)
            for (const auto& s : per_class) {
                w.u16(static_cast<std::uint16_t>(s.label));
                w.f32_span(s.image.data.data(), s.image.numel());
            }
        return w;
    };

    add_section("objects_train", object_section(pack.objects.train),
                static_cast<std::size_t>(pack.config.train_per_class) * pack.objects.train.size());
    add_section("objects_val", object_section(pack.objects.val),
                static_cast<std::size_t>(pack.config.val_per_class) * pack.objects.val.size());
    add_section("objects_test", object_section(pack.objects.test),
                static_cast<std::size_t>(pack.config.test_per_class) * pack.objects.test.size());

    const std::size_t comp_bytes = 8 + 4ull * static_cast<std::size_t>(pack.config.resolution) *
                                           static_cast<std::size_t>(pack.config.resolution) * 4;
    {
        ByteWriter w;
        w.buf.reserve(4 + pack.comp_test.size() * comp_bytes);
        w.u32(static_cast<std::uint32_t>(pack.comp_test.size()));
        for (const auto& c : pack.comp_test) detail::put_composite(w, c);
        add_section("comp_test", std::move(w), pack.comp_test.size());
    }
    {
        ByteWriter w;
        std::size_t count = 0;
        for (const auto& e : pack.con) count += e.train.size();
        w.buf.reserve(4 + count * (2 + comp_bytes));
        w.u32(static_cast<std::uint32_t>(count));
        for (const auto& e : pack.con)
            for (const auto& c : e.train) {
                w.u16(static_cast<std::uint16_t>(e.experience_id));
                detail::put_composite(w, c);
            }
        add_section("con_train", std::move(w), count);
    }
    auto sys_section = [&](bool support) {
        ByteWriter w;
        std::size_t count = 0;
        for (const auto& ep : pack.sys) count += (support ? ep.support : ep.query).size();
        w.buf.reserve(4 + count * (2 + comp_bytes));
        w.u32(static_cast<std::uint32_t>(count));
        for (const auto& ep : pack.sys)
            for (const auto& c : support ? ep.support : ep.query) {
                w.u16(static_cast<std::uint16_t>(ep.episode_id));
                detail::put_composite(w, c);
            }
        add_section(support ? "sys_support" : "sys_query", std::move(w), count);
    };
    sys_section(true);
    sys_section(false);

    nlohmann::json manifest;
    manifest["format"] = "ecomp-pack";
    manifest["version"] = 1;
    manifest["seed"] = pack.seed;
    manifest["config"] = detail::config_to_json(pack.config);
    nlohmann::json patterns = nlohmann::json::array();
    for (const auto& p : pack.patterns) patterns.push_back(p.bits);
    manifest["patterns"] = patterns;
    nlohmann::json combos = nlohmann::json::array();
    for (const auto& c : pack.combos) combos.push_back({c.lo, c.hi});
    manifest["combos"] = combos;
    nlohmann::json con_labels = nlohmann::json::array();
    for (const auto& e : pack.con) {
        nlohmann::json labels = nlohmann::json::array();
        for (const auto& l : e.labels) labels.push_back({l.lo, l.hi});
        con_labels.push_back(labels);
    }
    manifest["con_labels"] = con_labels;
    manifest["sections"] = sections;
    manifest["data_bytes"] = file.size();

    write_file(dir / "data.bin", file);
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline BenchmarkPack load_pack(const std::filesystem::path& dir) {
    const nlohmann::json manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    if (manifest.at("format") != "ecomp-pack")
        throw std::runtime_error((dir / "manifest.json").string() + ": not a pack manifest");

    BenchmarkPack pack;
    pack.seed = manifest.at("seed").get<std::uint64_t>();
    pack.config = detail::config_from_json(manifest.at("config"));
    const int res = pack.config.resolution;

    for (std::size_t i = 0; i < manifest.at("patterns").size(); ++i)
        pack.patterns.push_back({static_cast<int>(i), manifest.at("patterns")[i].get<std::uint32_t>()});
    for (const auto& j : manifest.at("combos")) pack.combos.push_back({j[0].get<int>(), j[1].get<int>()});

    const auto file = read_file(dir / "data.bin");
    if (file.size() != manifest.at("data_bytes").get<std::size_t>())
        throw std::runtime_error((dir / "data.bin").string() + ": size mismatch against manifest");

    auto open_section = [&](const std::string& name) {
        const auto& s = manifest.at("sections").at(name);
        const std::size_t off = s.at("offset").get<std::size_t>();
        const std::size_t bytes = s.at("bytes").get<std::size_t>();
        if (off + bytes > file.size())
            throw std::runtime_error("section " + name + " extends past end of data.bin");
        const std::string crc = to_hex(crc32(file.data() + off, bytes));
        if (crc != s.at("crc32").get<std::string>())
            throw std::runtime_error("section " + name + ": CRC mismatch (data " + crc + ", manifest " +
                                     s.at("crc32").get<std::string>() + ")");
        ByteReader r(file);
        r.pos = off;
        const std::size_t count = r.u32();
        if (count != s.at("count").get<std::size_t>())
            throw std::runtime_error("section " + name + ": record count mismatch");
        return std::pair<ByteReader, std::size_t>(r, count);
    };

    auto load_objects = [&](const std::string& name, int per_class) {
        auto [r, count] = open_section(name);
        std::vector<std::vector<Sample>> split(pack.patterns.size());
        for (std::size_t i = 0; i < count; ++i) {
            Sample s;
            s.label = r.u16();
            if (s.label < 0 || static_cast<std::size_t>(s.label) >= split.size())
                throw std::runtime_error("section " + name + ": class id out of range");
            s.image = Tensor({1, res, res});
            r.f32_span(s.image.data.data(), s.image.numel());
            split[static_cast<std::size_t>(s.label)].push_back(std::move(s));
        }
        for (const auto& per : split)
            if (static_cast<int>(per.size()) != per_class)
                throw std::runtime_error("section " + name + ": uneven class counts");
        return split;
    };
    pack.objects.train = load_objects("objects_train", pack.config.train_per_class);
    pack.objects.val = load_objects("objects_val", pack.config.val_per_class);
    pack.objects.test = load_objects("objects_test", pack.config.test_per_class);

    {
        auto [r, count] = open_section("comp_test");
        pack.comp_test.reserve(count);
        for (std::size_t i = 0; i < count; ++i) pack.comp_test.push_back(detail::take_composite(r, res));
    }
    {
        auto [r, count] = open_section("con_train");
        const auto& con_labels = manifest.at("con_labels");
        pack.con.resize(con_labels.size());
        for (std::size_t e = 0; e < con_labels.size(); ++e) {
            pack.con[e].experience_id = static_cast<int>(e);
            for (const auto& j : con_labels[e]) pack.con[e].labels.push_back({j[0].get<int>(), j[1].get<int>()});
            pack.con[e].test_indices = detail::test_indices_for(pack.con[e].labels, pack.comp_test);
        }
        for (std::size_t i = 0; i < count; ++i) {
            const int e = r.u16();
            if (e < 0 || static_cast<std::size_t>(e) >= pack.con.size())
                throw std::runtime_error("con_train: experience id out of range");
            pack.con[static_cast<std::size_t>(e)].train.push_back(detail::take_composite(r, res));
        }
    }
    auto load_sys = [&](const std::string& name, bool support) {
        auto [r, count] = open_section(name);
        for (std::size_t i = 0; i < count; ++i) {
            const int e = r.u16();
            if (e < 0 || e >= pack.config.sys_episodes)
                throw std::runtime_error(name + ": episode id out of range");
            if (static_cast<std::size_t>(e) >= pack.sys.size()) pack.sys.resize(static_cast<std::size_t>(e) + 1);
            pack.sys[static_cast<std::size_t>(e)].episode_id = e;
            auto& dst = support ? pack.sys[static_cast<std::size_t>(e)].support : pack.sys[static_cast<std::size_t>(e)].query;
            dst.push_back(detail::take_composite(r, res));
        }
    };
    load_sys("sys_support", true);
    load_sys("sys_query", false);
    for (auto& ep : pack.sys) {
        for (const auto& c : ep.support) ep.labels.push_back(c.label);
        std::sort(ep.labels.begin(), ep.labels.end());
        ep.labels.erase(std::unique(ep.labels.begin(), ep.labels.end()), ep.labels.end());
    }
    return pack;
}

/// Cheap stable digest of a pack: the manifest commits to every data byte
/// through the per-section CRCs.
inline std::string pack_digest(const std::filesystem::path& dir) {
    return sha256_hex(read_text_file(dir / "manifest.json"));
}

}  // namespace ecomp
