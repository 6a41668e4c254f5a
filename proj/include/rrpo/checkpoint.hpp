#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rrpo/array.hpp"

namespace rrpo {

// Binary checkpoint container shared by reward-model and policy weights:
// magic "RRPO-CKPT\0", version u16, three u32 dims, then each array as
// rank u32, dims u32[rank], payload little-endian f64.
constexpr char kCheckpointMagic[10] = {'R', 'R', 'P', 'O', '-', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T x) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> buf;
    std::memcpy(buf.data(), &x, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    os.write(reinterpret_cast<const char*>(buf.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    std::array<unsigned char, sizeof(T)> buf;
    is.read(reinterpret_cast<char*>(buf.data()), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated read");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    T x;
    std::memcpy(&x, buf.data(), sizeof(T));
    return x;
}

}  // namespace detail

struct CheckpointData {
    std::array<std::uint32_t, 3> dims{};
    std::vector<Array> arrays;
};

inline void save_checkpoint(const std::filesystem::path& path, const std::array<std::uint32_t, 3>& dims,
                            const std::vector<const Array*>& arrays) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_le<std::uint16_t>(os, kCheckpointVersion);
    for (std::uint32_t d : dims) detail::write_le<std::uint32_t>(os, d);
    for (const Array* a : arrays) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(a->shape.rank));
        for (int i = 0; i < a->shape.rank; ++i)
            detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(a->shape.dim[i]));
        for (double x : a->v) detail::write_le<double>(os, x);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed on " + path.string());
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[sizeof(kCheckpointMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    const auto version = detail::read_le<std::uint16_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    CheckpointData data;
    for (auto& d : data.dims) d = detail::read_le<std::uint32_t>(is);
    while (true) {
        is.peek();
        if (is.eof()) break;
        const auto rank = detail::read_le<std::uint32_t>(is);
        if (rank > 3) throw std::runtime_error("checkpoint: bad array rank " + std::to_string(rank));
        Shape s;
        s.rank = static_cast<int>(rank);
        for (std::uint32_t i = 0; i < rank; ++i) s.dim[i] = detail::read_le<std::uint32_t>(is);
        Array a(s);
        for (double& x : a.v) x = detail::read_le<double>(is);
        data.arrays.push_back(std::move(a));
    }
    return data;
}

}  // namespace rrpo
