#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "../error.hpp"
#include "config.hpp"
#include "parameters.hpp"

namespace equilcast::neural {

// Model file: 8-byte magic, u64 little-endian header length, JSON header,
// then float32 little-endian tensor payloads in header order (column-major).

inline constexpr std::array<char, 8> kModelMagic = {'E', 'Q', 'C', 'M', 'O', 'D', 'E', 'L'};
inline constexpr int kModelFormatVersion = 1;

struct ModelFile {
    NetworkParameters params;
    std::uint64_t seed = 0;
};

namespace detail {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f32_le(std::ostream& os, float f) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline void write_model(const std::filesystem::path& path, const NetworkParameters& params, std::uint64_t seed) {
    nlohmann::json header;
    header["format_version"] = kModelFormatVersion;
    header["network"] = to_json(params.config());
    header["seed"] = seed;
    header["dtype"] = "float32";
    header["byte_order"] = "little";
    header["storage"] = "column-major";
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : params.layout())
        tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", t.offset * 4}});
    header["tensors"] = tensors;
    const std::string text = header.dump();

    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), ErrorKind::IoError, "cannot write " + path.string());
    os.write(kModelMagic.data(), kModelMagic.size());
    detail::put_u64_le(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (Eigen::Index i = 0; i < params.size(); ++i) detail::put_f32_le(os, static_cast<float>(params.values()(i)));
    require(static_cast<bool>(os), ErrorKind::IoError, "write failed: " + path.string());
}

inline ModelFile read_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorKind::IoError, "cannot open " + path.string());
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    require(static_cast<bool>(is) && magic == kModelMagic, ErrorKind::ParseError, path.string() + ": not a model file");
    const std::uint64_t len = detail::get_u64_le(is);
    require(static_cast<bool>(is) && len < (1u << 26), ErrorKind::ParseError, path.string() + ": bad header length");
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    require(static_cast<bool>(is), ErrorKind::ParseError, path.string() + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, path.string() + ": " + e.what());
    }
    require(header.value("format_version", 0) == kModelFormatVersion, ErrorKind::ParseError,
            path.string() + ": unsupported format version");
    ModelFile out;
    out.params = NetworkParameters(network_config_from_json(header.at("network")));
    out.seed = header.value("seed", std::uint64_t{0});

    const auto& tensors = header.at("tensors");
    require(tensors.size() == out.params.layout().size(), ErrorKind::ParseError,
            path.string() + ": tensor count does not match network config");
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        const auto& t = out.params.layout()[k];
        const auto shape = tensors[k].at("shape").get<std::array<Eigen::Index, 2>>();
        require(tensors[k].at("name").get<std::string>() == t.name && shape[0] == t.rows && shape[1] == t.cols &&
                    tensors[k].at("offset").get<Eigen::Index>() == t.offset * 4,
                ErrorKind::ParseError, path.string() + ": tensor " + t.name + " does not match layout");
    }
    std::vector<unsigned char> payload(static_cast<std::size_t>(out.params.size()) * 4);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    require(static_cast<bool>(is), ErrorKind::ParseError, path.string() + ": truncated payload");
    for (Eigen::Index i = 0; i < out.params.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(payload[static_cast<std::size_t>(i) * 4 + b]) << (8 * b);
        out.params.values()(i) = static_cast<double>(std::bit_cast<float>(u));
    }
    require(out.params.all_finite(), ErrorKind::ParseError, path.string() + ": non-finite weights");
    return out;
}

}  // namespace equilcast::neural
