#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ulab/errors.hpp"

namespace ulab::io {

// All binary artifacts are little-endian on disk regardless of host order.

inline void put_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64le(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64le(os, v);
}

inline std::uint32_t get_u32le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(is.good(), ErrorKind::Format, "truncated payload (u32)");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

inline std::uint64_t get_u64le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    require(is.good(), ErrorKind::Format, "truncated payload (u64)");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

inline double get_f64le(std::istream& is) {
    const std::uint64_t v = get_u64le(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

inline void put_f64_block(std::ostream& os, std::span<const double> vals) {
    for (double d : vals) put_f64le(os, d);
}

inline void get_f64_block(std::istream& is, std::span<double> out) {
    for (double& d : out) d = get_f64le(is);
}

// IDX headers are big-endian by format definition.
inline std::uint32_t get_u32be(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(is.good(), ErrorKind::Format, "truncated payload (u32be)");
    return std::uint32_t(b[0]) << 24 | std::uint32_t(b[1]) << 16 | std::uint32_t(b[2]) << 8 |
           std::uint32_t(b[3]);
}

inline void put_u32be(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

// FNV-1a, used for content digests and config fingerprints (integrity, not crypto).
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a(std::span<const double> vals, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(vals.data(), vals.size() * sizeof(double), h);
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline std::ofstream open_out(const std::string& path, bool binary = true) {
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    require(os.good(), ErrorKind::Io, "cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path, bool binary = true) {
    std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
    require(is.good(), ErrorKind::Io, "cannot open for reading: " + path);
    return is;
}

} // namespace ulab::io
