#pragma once

// Little-endian binary container helpers shared by the checkpoint and
// transcript writers.  Internal to the library.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "obf/errors.hpp"

namespace obf::binio {

struct Writer {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        for (int s = 0; s < 32; s += 8) buf.push_back(std::uint8_t(v >> s));
    }
    void u64(std::uint64_t v) {
        for (int s = 0; s < 64; s += 8) buf.push_back(std::uint8_t(v >> s));
    }
    void i64(std::int64_t v) { u64(std::uint64_t(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void str(const std::string& s) {
        u32(std::uint32_t(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    const std::uint8_t* p;
    std::size_t remaining;

    explicit Reader(const std::vector<std::uint8_t>& buf)
        : p(buf.data()), remaining(buf.size()) {}

    void need(std::size_t n) const {
        if (remaining < n) throw TruncatedFile("container payload shorter than header promises");
    }
    std::uint8_t u8() {
        need(1);
        --remaining;
        return *p++;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int s = 0; s < 32; s += 8) v |= std::uint32_t(*p++) << s;
        remaining -= 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int s = 0; s < 64; s += 8) v |= std::uint64_t(*p++) << s;
        remaining -= 8;
        return v;
    }
    std::int64_t i64() { return std::int64_t(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
    void bytes(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, p, n);
        p += n;
        remaining -= n;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        remaining -= n;
        return s;
    }
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path,
                       const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace obf::binio
