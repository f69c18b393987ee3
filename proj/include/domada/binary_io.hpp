#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>

#include "checksum.hpp"
#include "error.hpp"

namespace domada {

// Little-endian encoding independent of host byte order.
class BinaryWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(std::string_view bytes) { buf_.append(bytes); }
    void str32(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }
    /// Appends the FNV-1a digest of everything written so far.
    void seal() { u64(fnv1a64(buf_)); }

    const std::string& bytes() const noexcept { return buf_; }

private:
    std::string buf_;
};

class BinaryReader {
public:
    BinaryReader(std::string_view bytes, std::string what) : data_(bytes), what_(std::move(what)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() {
        auto b = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        auto b = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string_view raw(std::size_t n) { return take(n); }
    std::string str32() {
        auto n = u32();
        return std::string(take(n));
    }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    /// Verifies the trailing 8-byte checksum. Must be called when exactly the
    /// checksum remains.
    void verify_seal() {
        if (remaining() < 8) throw TruncatedError(what_ + ": missing checksum");
        auto body = data_.substr(0, pos_);
        auto stored = u64();
        if (remaining() != 0) throw FormatError(what_ + ": trailing bytes after checksum");
        if (stored != fnv1a64(body)) throw ChecksumError(what_ + ": checksum mismatch");
    }

private:
    std::string_view take(std::size_t n) {
        if (n > remaining()) throw TruncatedError(what_ + ": unexpected end of file");
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::string_view data_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace domada
