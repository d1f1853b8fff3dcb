#pragma once

// Little helpers for the fixed-endianness binary containers used by the
// library (IDX is big-endian, the internal containers are little-endian).

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "boltzdef/error.hpp"

namespace boltzdef::io {

namespace detail {

template <typename T>
T byteswap(T v) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

} // namespace detail

inline std::uint32_t read_be_u32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void append_be_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

/// Append-only little-endian encoder.
class Writer {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) { pod(v); }
    void u64(std::uint64_t v) { pod(v); }
    void f64(double v) { pod(v); }

    const std::vector<unsigned char>& bytes() const { return bytes_; }

private:
    template <typename T>
    void pod(T v) {
        if constexpr (std::endian::native == std::endian::big) v = detail::byteswap(v);
        unsigned char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        bytes_.insert(bytes_.end(), buf, buf + sizeof(T));
    }

    std::vector<unsigned char> bytes_;
};

/// Bounds-checked little-endian decoder; running off the end is an IoError.
class Reader {
public:
    Reader(const std::vector<unsigned char>& bytes, std::string source)
        : bytes_(bytes), source_(std::move(source)) {}

    bool magic(std::string_view m) {
        need(m.size());
        bool ok = std::memcmp(bytes_.data() + pos_, m.data(), m.size()) == 0;
        pos_ += m.size();
        return ok;
    }
    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() { return pod<std::uint32_t>(); }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    double f64() { return pod<double>(); }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError("truncated file " + source_);
    }

    template <typename T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        if constexpr (std::endian::native == std::endian::big) v = detail::byteswap(v);
        return v;
    }

    const std::vector<unsigned char>& bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

/// First four bytes of a file, or an empty string when shorter.
inline std::string peek_magic(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string m(4, '\0');
    in.read(m.data(), 4);
    if (in.gcount() != 4) return {};
    return m;
}

/// FNV-1a, used for config and history digests.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace boltzdef::io
