#pragma once

#include <json.hpp>

#include <cstdint>
#include <span>
#include <sstream>
#include <string>

#include "lifelong/io.hpp"
#include "lifelong/policy.hpp"

namespace lifelong::policy {

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

inline nlohmann::json dims_to_json(const PolicyDims& d) {
    return {{"image_side", d.image_side}, {"state_dim", d.state_dim}, {"embed", d.embed},
            {"window", d.window},         {"action_dim", d.action_dim}, {"hidden", d.hidden},
            {"gmm_components", d.gmm_components}, {"head", to_string(d.head)}};
}

inline PolicyDims dims_from_json(const nlohmann::json& j) {
    PolicyDims d;
    d.image_side = j.at("image_side").get<int>();
    d.state_dim = j.at("state_dim").get<int>();
    d.embed = j.at("embed").get<int>();
    d.window = j.at("window").get<int>();
    d.action_dim = j.at("action_dim").get<int>();
    d.hidden = j.at("hidden").get<int>();
    d.gmm_components = j.at("gmm_components").get<int>();
    d.head = head_mode_from_string(j.at("head").get<std::string>());
    return d;
}

// Parameter checkpoint: u64 length + JSON header (dims, seed, block shapes,
// frozen hash) followed by the float32 payload of every block, column-major,
// in block order.
inline io::Bytes serialize_params(const PolicyParams<float>& p, std::uint64_t seed) {
    nlohmann::json header;
    header["format"] = "lifelong-params";
    header["version"] = 1;
    header["dims"] = dims_to_json(p.dims);
    header["seed"] = seed;
    header["language_ids"] = p.language_ids;
    header["frozen_hash"] = hex64(p.frozen_hash());
    nlohmann::json blocks = nlohmann::json::array();
    for (int b = 0; b < kNumBlocks; ++b)
        blocks.push_back({{"name", block_info(b).name}, {"rows", p[b].rows()}, {"cols", p[b].cols()}});
    header["blocks"] = blocks;

    io::ByteWriter w;
    w.str(header.dump());
    for (int b = 0; b < kNumBlocks; ++b)
        w.f32s(std::span(p[b].data(), static_cast<std::size_t>(p[b].size())));
    return w.take();
}

inline nlohmann::json params_header(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    return nlohmann::json::parse(r.str());
}

inline PolicyParams<float> deserialize_params(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(std::string("bad parameter checkpoint header: ") + e.what());
    }
    require(header.value("format", "") == "lifelong-params", "not a parameter checkpoint");
    PolicyParams<float> p;
    p.dims = dims_from_json(header.at("dims"));
    p.language_ids = header.at("language_ids").get<std::vector<int>>();
    const auto& blocks = header.at("blocks");
    require(blocks.size() == static_cast<std::size_t>(kNumBlocks), "checkpoint block count mismatch");
    for (int b = 0; b < kNumBlocks; ++b) {
        const auto& jb = blocks[static_cast<std::size_t>(b)];
        require(jb.at("name").get<std::string>() == block_info(b).name, "checkpoint block order mismatch");
        p[b].resize(jb.at("rows").get<Eigen::Index>(), jb.at("cols").get<Eigen::Index>());
        r.f32s(std::span(p[b].data(), static_cast<std::size_t>(p[b].size())));
    }
    require(r.done(), "trailing bytes in parameter checkpoint");
    require(hex64(p.frozen_hash()) == header.at("frozen_hash").get<std::string>(),
            "frozen-block hash mismatch in parameter checkpoint");
    return p;
}

}  // namespace lifelong::policy
