// Versioned checkpoint container: "pis-ckpt-v1". Little-endian throughout,
// single-precision payloads, byte-exact round trips.
//
// layout: magic "pis-ckpt-v1\n", u32 entry count, then per entry
//   u32 name length, name bytes, u32 ndim, u32 dims[ndim], f32 payload.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pis/hash.hpp"
#include "pis/params.hpp"

namespace pis {

inline constexpr const char* kCheckpointMagic = "pis-ckpt-v1\n";

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline uint32_t get_u32(const std::string& in, size_t& pos) {
    if (pos + 4 > in.size()) throw std::runtime_error("checkpoint: truncated file");
    uint32_t v = static_cast<uint8_t>(in[pos]) | (static_cast<uint8_t>(in[pos + 1]) << 8) |
                 (static_cast<uint8_t>(in[pos + 2]) << 16) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(in[pos + 3])) << 24);
    pos += 4;
    return v;
}

}  // namespace detail

inline std::string checkpoint_serialize(const ParameterGroup& params) {
    std::string out = kCheckpointMagic;
    detail::put_u32(out, static_cast<uint32_t>(params.entries.size()));
    for (const auto& [name, t] : params.entries) {
        detail::put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<uint32_t>(t.shape().size()));
        for (int e : t.shape()) detail::put_u32(out, static_cast<uint32_t>(e));
        for (float v : t.data()) detail::put_u32(out, std::bit_cast<uint32_t>(v));
    }
    return out;
}

inline void save_checkpoint(const ParameterGroup& params, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    const std::string bytes = checkpoint_serialize(params);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline ParameterGroup checkpoint_deserialize(const std::string& in) {
    const std::string magic = kCheckpointMagic;
    if (in.size() < magic.size() || in.compare(0, magic.size(), magic) != 0)
        throw std::runtime_error("checkpoint: bad or unsupported version header (want pis-ckpt-v1)");
    size_t pos = magic.size();
    const uint32_t count = detail::get_u32(in, pos);
    ParameterGroup pg;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = detail::get_u32(in, pos);
        if (pos + name_len > in.size()) throw std::runtime_error("checkpoint: truncated file");
        std::string name = in.substr(pos, name_len);
        pos += name_len;
        const uint32_t ndim = detail::get_u32(in, pos);
        std::vector<int> shape;
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape.push_back(static_cast<int>(detail::get_u32(in, pos)));
            numel *= shape.back();
        }
        std::vector<float> data(static_cast<size_t>(numel));
        for (auto& v : data) v = std::bit_cast<float>(detail::get_u32(in, pos));
        pg.add(name, Tensor::from(shape, std::move(data)));
    }
    return pg;
}

inline ParameterGroup load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return checkpoint_deserialize(bytes);
}

inline uint64_t checkpoint_hash(const ParameterGroup& params) {
    const std::string bytes = checkpoint_serialize(params);
    return fnv1a(bytes.data(), bytes.size());
}

// Hash of a single parameter's payload; used by the freeze-invariant checks.
inline uint64_t parameter_hash(const ParameterGroup& params, const std::string& name) {
    const Tensor& t = params.at(name);
    uint64_t h = fnv1a(name);
    return fnv1a(t.data().data(), t.data().size() * sizeof(float), h);
}

}  // namespace pis
