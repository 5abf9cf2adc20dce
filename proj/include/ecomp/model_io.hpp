#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecomp/bytes.hpp"
#include "ecomp/hash.hpp"
#include "ecomp/network.hpp"

namespace ecomp {

struct ModelMeta {
    std::string kind;  // "expert", "monolith", ...
    int expert_id = -1;
    std::uint64_t seed = 0;
    std::vector<int> class_ids;  // output index -> global class id (without any trailing reject output)
    std::string config_hash;
};

struct SavedModel {
    Network net;
    ModelMeta meta;
};

namespace detail {

inline nlohmann::json spec_to_json(const LayerSpec& s) {
    nlohmann::json j;
    j["kind"] = layer_kind_name(s.kind);
    if (s.kind == LayerKind::conv2d) {
        j["in_channels"] = s.in_channels;
        j["out_channels"] = s.out_channels;
    } else if (s.kind == LayerKind::dense) {
        j["in_dim"] = s.in_dim;
        j["out_dim"] = s.out_dim;
    }
    return j;
}

inline LayerSpec spec_from_json(const nlohmann::json& j) {
    LayerSpec s;
    s.kind = layer_kind_from(j.at("kind").get<std::string>());
    if (s.kind == LayerKind::conv2d) {
        s.in_channels = j.at("in_channels").get<int>();
        s.out_channels = j.at("out_channels").get<int>();
    } else if (s.kind == LayerKind::dense) {
        s.in_dim = j.at("in_dim").get<int>();
        s.out_dim = j.at("out_dim").get<int>();
    }
    return s;
}

}  // namespace detail

/// Writes <base>.json (manifest) and <base>.bin (little-endian f32 parameter
/// blob in layer order). The manifest records blob length and CRC32 so a
/// corrupt or mismatched blob is refused at load.
inline void save_model(const std::filesystem::path& base, Network& net, const ModelMeta& meta) {
    ByteWriter blob;
    auto flat = net.parameters_flat();
    blob.f32_span(flat.data(), flat.size());

    nlohmann::json manifest;
    manifest["format"] = "ecomp-model";
    manifest["version"] = 1;
    manifest["kind"] = meta.kind;
    manifest["expert_id"] = meta.expert_id;
    manifest["seed"] = meta.seed;
    manifest["class_ids"] = meta.class_ids;
    manifest["config_hash"] = meta.config_hash;
    manifest["input_shape"] = net.input_shape();
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& s : net.specs()) layers.push_back(detail::spec_to_json(s));
    manifest["layers"] = layers;
    manifest["blob_bytes"] = blob.buf.size();
    manifest["blob_crc32"] = to_hex(crc32(blob.buf.data(), blob.buf.size()));

    std::filesystem::path json_path = base;
    json_path += ".json";
    std::filesystem::path bin_path = base;
    bin_path += ".bin";
    write_text_file(json_path, manifest.dump(2) + "\n");
    write_file(bin_path, blob.buf);
}

inline SavedModel load_model(const std::filesystem::path& base) {
    std::filesystem::path json_path = base;
    json_path += ".json";
    std::filesystem::path bin_path = base;
    bin_path += ".bin";

    const nlohmann::json manifest = nlohmann::json::parse(read_text_file(json_path));
    if (manifest.at("format") != "ecomp-model")
        throw std::runtime_error(json_path.string() + ": not a model manifest");

    SavedModel out;
    out.meta.kind = manifest.at("kind").get<std::string>();
    out.meta.expert_id = manifest.at("expert_id").get<int>();
    out.meta.seed = manifest.at("seed").get<std::uint64_t>();
    out.meta.class_ids = manifest.at("class_ids").get<std::vector<int>>();
    out.meta.config_hash = manifest.at("config_hash").get<std::string>();

    std::vector<LayerSpec> specs;
    for (const auto& j : manifest.at("layers")) specs.push_back(detail::spec_from_json(j));
    out.net = Network(specs, manifest.at("input_shape").get<std::vector<int>>());

    const auto blob = read_file(bin_path);
    if (blob.size() != manifest.at("blob_bytes").get<std::size_t>())
        throw std::runtime_error(bin_path.string() + ": blob is " + std::to_string(blob.size()) +
                                 " bytes, manifest says " + manifest.at("blob_bytes").dump());
    const std::string crc = to_hex(crc32(blob.data(), blob.size()));
    if (crc != manifest.at("blob_crc32").get<std::string>())
        throw std::runtime_error(bin_path.string() + ": CRC mismatch (blob " + crc + ", manifest " +
                                 manifest.at("blob_crc32").get<std::string>() + ")");

    ByteReader r(blob);
    std::vector<float> flat(blob.size() / 4);
    r.f32_span(flat.data(), flat.size());
    out.net.set_parameters_flat(flat);
    return out;
}

/// Cryptographic digest of a network's parameters, used for freeze checks.
inline std::string parameter_hash(Network& net) {
    ByteWriter blob;
    auto flat = net.parameters_flat();
    blob.f32_span(flat.data(), flat.size());
    return sha256_hex(blob.buf.data(), blob.buf.size());
}

}  // namespace ecomp
