#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mslm/errors.hpp"
#include "mslm/model.hpp"
#include "mslm/rng.hpp"

namespace mslm {

// Checkpoint layout: magic "MSLM", u32 version, config block, then named
// tensors as little-endian f32 with a per-tensor element count and FNV-1a
// checksum over the payload bytes.
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

inline void put_i32(std::ostream& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

inline uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ValidationError("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t get_u64(std::istream& in) {
    uint64_t lo = get_u32(in);
    uint64_t hi = get_u32(in);
    return lo | (hi << 32);
}

inline int32_t get_i32(std::istream& in) { return static_cast<int32_t>(get_u32(in)); }

inline std::vector<unsigned char> f32_bytes_le(const std::vector<float>& v) {
    std::vector<unsigned char> bytes(v.size() * 4);
    for (size_t i = 0; i < v.size(); ++i) {
        uint32_t u;
        std::memcpy(&u, &v[i], 4);
        bytes[4 * i] = static_cast<unsigned char>(u);
        bytes[4 * i + 1] = static_cast<unsigned char>(u >> 8);
        bytes[4 * i + 2] = static_cast<unsigned char>(u >> 16);
        bytes[4 * i + 3] = static_cast<unsigned char>(u >> 24);
    }
    return bytes;
}

inline std::vector<float> f32_from_le(const std::vector<unsigned char>& bytes) {
    std::vector<float> v(bytes.size() / 4);
    for (size_t i = 0; i < v.size(); ++i) {
        uint32_t u = static_cast<uint32_t>(bytes[4 * i]) |
                     (static_cast<uint32_t>(bytes[4 * i + 1]) << 8) |
                     (static_cast<uint32_t>(bytes[4 * i + 2]) << 16) |
                     (static_cast<uint32_t>(bytes[4 * i + 3]) << 24);
        std::memcpy(&v[i], &u, 4);
    }
    return v;
}

} // namespace detail

inline void save_params(const ModelParams& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write("MSLM", 4);
    detail::put_u32(out, kCheckpointVersion);
    const ModelConfig& c = p.config;
    detail::put_i32(out, static_cast<int32_t>(c.kind));
    detail::put_i32(out, c.n_layers);
    detail::put_i32(out, c.d_model);
    detail::put_i32(out, c.d_ff);
    detail::put_i32(out, c.n_heads);
    detail::put_i32(out, c.max_positions);
    detail::put_i32(out, c.vocab_size);
    detail::put_i32(out, c.out_offset);
    detail::put_i32(out, c.out_size);
    detail::put_i32(out, c.n_streams);
    detail::put_i32(out, c.tie_output ? 1 : 0);
    detail::put_i32(out, c.stream_additive_emb ? 1 : 0);
    detail::put_u64(out, c.space_hash);
    detail::put_u32(out, static_cast<uint32_t>(p.tensors.size()));
    for (const auto& t : p.tensors) {
        detail::put_u32(out, static_cast<uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::put_i32(out, t.rows);
        detail::put_i32(out, t.cols);
        auto bytes = detail::f32_bytes_le(t.v);
        detail::put_u64(out, fnv1a(bytes.data(), bytes.size()));
        detail::put_u64(out, static_cast<uint64_t>(t.v.size()));
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

/// Loads a checkpoint. If `expected_space_hash` is given, a token-space
/// mismatch is rejected; if `expected_kind` is given, loading the wrong
/// model kind is rejected.
inline ModelParams load_params(const std::string& path,
                               std::optional<uint64_t> expected_space_hash = std::nullopt,
                               std::optional<ModelKind> expected_kind = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "MSLM")
        throw ValidationError(path + ": not an MSLM checkpoint (bad magic)");
    uint32_t version = detail::get_u32(in);
    if (version != kCheckpointVersion)
        throw ValidationError(path + ": unsupported checkpoint version " + std::to_string(version));
    ModelConfig c;
    c.kind = static_cast<ModelKind>(detail::get_i32(in));
    c.n_layers = detail::get_i32(in);
    c.d_model = detail::get_i32(in);
    c.d_ff = detail::get_i32(in);
    c.n_heads = detail::get_i32(in);
    c.max_positions = detail::get_i32(in);
    c.vocab_size = detail::get_i32(in);
    c.out_offset = detail::get_i32(in);
    c.out_size = detail::get_i32(in);
    c.n_streams = detail::get_i32(in);
    c.tie_output = detail::get_i32(in) != 0;
    c.stream_additive_emb = detail::get_i32(in) != 0;
    c.space_hash = detail::get_u64(in);

    if (expected_kind && c.kind != *expected_kind)
        throw ValidationError(path + ": checkpoint is a " + kind_name(c.kind) + " model, expected " +
                              kind_name(*expected_kind));
    if (expected_space_hash && c.space_hash != *expected_space_hash)
        throw ValidationError(path + ": token-space layout hash mismatch (checkpoint " +
                              std::to_string(c.space_hash) + ", current " +
                              std::to_string(*expected_space_hash) + ")");

    ModelParams p = ModelParams::shaped(c);
    uint32_t n_tensors = detail::get_u32(in);
    if (n_tensors != p.tensors.size())
        throw ValidationError(path + ": tensor count mismatch");
    for (auto& t : p.tensors) {
        uint32_t name_len = detail::get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in || name != t.name)
            throw ValidationError(path + ": unexpected tensor '" + name + "', wanted '" + t.name +
                                  "'");
        int32_t tensor_rows = detail::get_i32(in);
        int32_t tensor_cols = detail::get_i32(in);
        if (tensor_rows != t.rows || tensor_cols != t.cols)
            throw ValidationError(path + ": tensor '" + name + "' has shape " +
                                  std::to_string(tensor_rows) + "x" + std::to_string(tensor_cols) +
                                  ", wanted " + std::to_string(t.rows) + "x" +
                                  std::to_string(t.cols));
        uint64_t checksum = detail::get_u64(in);
        uint64_t count = detail::get_u64(in);
        if (count != t.count()) throw ValidationError(path + ": tensor '" + name + "' length mismatch");
        std::vector<unsigned char> bytes(count * 4);
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!in) throw ValidationError(path + ": checkpoint truncated in tensor '" + name + "'");
        if (fnv1a(bytes.data(), bytes.size()) != checksum)
            throw ValidationError(path + ": checksum mismatch in tensor '" + name + "'");
        t.v = detail::f32_from_le(bytes);
        for (float x : t.v)
            if (!std::isfinite(x))
                throw ValidationError(path + ": non-finite value in tensor '" + name + "'");
    }
    return p;
}

} // namespace mslm
