#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sift::detail {

inline constexpr std::array<std::uint32_t, 256> kCrc32Table = [] {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        }
        table[i] = c;
    }
    return table;
}();

/// CRC-32 (IEEE 802.3 polynomial, reflected).
inline std::uint32_t crc32(std::span<const std::uint8_t> data) {
    std::uint32_t c = 0xffffffffu;
    for (std::uint8_t b : data) {
        c = kCrc32Table[(c ^ b) & 0xffu] ^ (c >> 8);
    }
    return c ^ 0xffffffffu;
}

/// Appends little-endian fields to a byte buffer.
struct ByteWriter {
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }

    void u16(std::uint16_t v) {
        bytes.push_back(static_cast<std::uint8_t>(v));
        bytes.push_back(static_cast<std::uint8_t>(v >> 8));
    }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }

    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void raw(std::span<const std::uint8_t> data) {
        bytes.insert(bytes.end(), data.begin(), data.end());
    }

    /// u16 length prefix followed by the characters.
    void str(std::string_view s) {
        if (s.size() > 0xffff) {
            throw std::invalid_argument("ByteWriter::str: string too long");
        }
        u16(static_cast<std::uint16_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
};

/// Cursor over a byte buffer; throws on overrun so truncated files surface
/// as load errors instead of garbage values.
struct ByteReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    explicit ByteReader(std::span<const std::uint8_t> data) : bytes(data) {}

    std::size_t remaining() const { return bytes.size() - pos; }

    void need(std::size_t n) const {
        if (remaining() < n) {
            throw std::runtime_error("truncated input: expected " + std::to_string(n) +
                                     " more bytes, have " + std::to_string(remaining()));
        }
    }

    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }

    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(bytes[pos]) |
                          static_cast<std::uint16_t>(bytes[pos + 1]) << 8;
        pos += 2;
        return v;
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        }
        pos += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        }
        pos += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::span<const std::uint8_t> raw(std::size_t n) {
        need(n);
        auto out = bytes.subspan(pos, n);
        pos += n;
        return out;
    }

    std::string str() {
        const std::size_t n = u16();
        auto s = raw(n);
        return std::string(reinterpret_cast<const char*>(s.data()), s.size());
    }
};

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open for reading: " + path.string());
    }
    std::vector<std::uint8_t> bytes;
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    if (size < 0) {
        throw std::runtime_error("cannot determine size of: " + path.string());
    }
    bytes.resize(static_cast<std::size_t>(size));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) {
        throw std::runtime_error("read failed: " + path.string());
    }
    return bytes;
}

} // namespace sift::detail
