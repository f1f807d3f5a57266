#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>

#include "json.hpp"
#include "vpd/error.hpp"
#include "vpd/hash.hpp"
#include "vpd/nn/core.hpp"

namespace vpd::nn {

inline constexpr const char* kCheckpointMagic = "VPDCKPT 1";

/// Checkpoint layout: a magic line, one JSON header line (dims, config,
/// config hash, tensor table), then the tensors as little-endian IEEE-754
/// values in column-major order.
template <class T>
void save_checkpoint(const std::string& path, const std::string& kind, const nlohmann::json& config,
                     const ParamList<T>& params) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    nlohmann::json header;
    header["kind"] = kind;
    header["config"] = config;
    header["config_hash"] = sha256_hex(config.dump());
    header["scalar"] = std::is_same_v<T, float> ? "f32" : "f64";
    auto& table = header["tensors"] = nlohmann::json::array();
    for (const auto* p : params) table.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingArtifact("cannot write checkpoint " + path);
    out << kCheckpointMagic << '\n' << header.dump() << '\n';
    using U = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
    for (const auto* p : params) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            U bits = std::bit_cast<U>(p->value.data()[i]);
            char bytes[sizeof(U)];
            for (std::size_t b = 0; b < sizeof(U); ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
            out.write(bytes, sizeof(U));
        }
    }
}

/// Reads the header only.
inline nlohmann::json read_checkpoint_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingModel("checkpoint not found: " + path);
    std::string magic, line;
    if (!std::getline(in, magic) || magic != kCheckpointMagic || !std::getline(in, line))
        throw CorruptHeader("bad checkpoint header: " + path);
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw CorruptHeader("bad checkpoint header: " + path);
    }
}

/// Loads values into already-shaped parameters; names and shapes must match.
template <class T>
nlohmann::json load_checkpoint(const std::string& path, const ParamList<T>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingModel("checkpoint not found: " + path);
    std::string magic, line;
    if (!std::getline(in, magic) || magic != kCheckpointMagic || !std::getline(in, line))
        throw CorruptHeader("bad checkpoint header: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw CorruptHeader("bad checkpoint header: " + path);
    }
    const bool is_f32 = header.value("scalar", "") == "f32";
    if (is_f32 != std::is_same_v<T, float>) throw DimensionMismatch("checkpoint scalar type mismatch: " + path);
    const auto& table = header.at("tensors");
    if (table.size() != params.size()) throw DimensionMismatch("checkpoint tensor count mismatch: " + path);
    using U = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto* p = params[k];
        if (table[k].at("name") != p->name || table[k].at("rows") != p->value.rows() ||
            table[k].at("cols") != p->value.cols())
            throw DimensionMismatch("checkpoint tensor mismatch at " + p->name);
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            unsigned char bytes[sizeof(U)];
            if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw CorruptHeader("truncated checkpoint: " + path);
            U bits = 0;
            for (std::size_t b = 0; b < sizeof(U); ++b) bits |= static_cast<U>(bytes[b]) << (8 * b);
            p->value.data()[i] = std::bit_cast<T>(bits);
        }
    }
    return header;
}

}  // namespace vpd::nn
