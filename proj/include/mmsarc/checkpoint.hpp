#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmsarc/error.hpp"
#include "mmsarc/tensor.hpp"

namespace mmsarc {

namespace detail {

inline void write_f64_le(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double read_f64_le(const std::string& buf, std::size_t off) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline std::string shape_json(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace detail

/// Writes manifest.json (name/shape/byte-offset per tensor) and params.bin
/// (little-endian float64, manifest order) into `dir`.
inline void save_params(const std::filesystem::path& dir,
                        const std::vector<std::pair<std::string, Tensor>>& named) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = nlohmann::json::array();
    std::string blob;
    for (const auto& [name, t] : named) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["offset"] = blob.size();
        manifest.push_back(entry);
        for (double v : t.values()) detail::write_f64_le(blob, v);
    }
    {
        std::ofstream f(dir / "manifest.json");
        if (!f) throw CheckpointError("cannot write " + (dir / "manifest.json").string());
        f << manifest.dump(2) << "\n";
    }
    {
        std::ofstream f(dir / "params.bin", std::ios::binary);
        if (!f) throw CheckpointError("cannot write " + (dir / "params.bin").string());
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
}

/// Loads params.bin values into the given tensors; every tensor must match a
/// manifest entry by name and shape, and the manifest must contain nothing
/// else.
inline void load_params(const std::filesystem::path& dir,
                        const std::vector<std::pair<std::string, Tensor>>& named) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw CheckpointError("cannot read " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("bad manifest.json: " + std::string(e.what()));
    }
    std::ifstream bf(dir / "params.bin", std::ios::binary);
    if (!bf) throw CheckpointError("cannot read " + (dir / "params.bin").string());
    std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    struct Entry {
        Shape shape;
        std::size_t offset;
        bool used = false;
    };
    std::unordered_map<std::string, Entry> entries;
    for (const auto& e : manifest) {
        if (!e.contains("name") || !e.contains("shape") || !e.contains("offset"))
            throw CheckpointError("manifest entry missing name/shape/offset");
        entries[e["name"].get<std::string>()] =
            Entry{e["shape"].get<Shape>(), e["offset"].get<std::size_t>()};
    }

    for (const auto& [name, t] : named) {
        auto it = entries.find(name);
        if (it == entries.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        Entry& e = it->second;
        if (e.shape != t.shape())
            throw CheckpointError("shape mismatch for '" + name + "': checkpoint has " +
                                  detail::shape_json(e.shape) + ", model expects " +
                                  detail::shape_json(t.shape()));
        const std::size_t n = t.size();
        if (e.offset + 8 * n > blob.size())
            throw CheckpointError("params.bin truncated at tensor '" + name + "'");
        std::vector<double>& vals = t.impl()->values;
        for (std::size_t i = 0; i < n; ++i) vals[i] = detail::read_f64_le(blob, e.offset + 8 * i);
        e.used = true;
    }
    for (const auto& [name, e] : entries)
        if (!e.used) throw CheckpointError("checkpoint has unexpected tensor '" + name + "'");
}

}  // namespace mmsarc
