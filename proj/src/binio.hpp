#pragma once

// Little-endian byte encoding shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "unoranic/error.hpp"

namespace unoranic::binio {

template <typename U>
void put_le(std::ostream& os, U value) {
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
    os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

inline void put_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }

/// Reads with offset tracking so format errors can say where they happened.
class Reader {
public:
    Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

    template <typename U>
    U le(const char* field) {
        unsigned char bytes[sizeof(U)];
        raw(bytes, sizeof(U), field);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
        return v;
    }

    float f32(const char* field) { return std::bit_cast<float>(le<std::uint32_t>(field)); }

    void raw(void* dst, std::size_t n, const char* field) {
        is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        const auto got = static_cast<std::size_t>(is_.gcount());
        if (got != n) {
            throw FormatError(what_ + ": truncated while reading " + field + " at byte offset " +
                              std::to_string(offset_ + got) + " (needed " + std::to_string(n) + " bytes, got " +
                              std::to_string(got) + ")");
        }
        offset_ += n;
    }

    std::uint64_t offset() const noexcept { return offset_; }
    const std::string& what() const noexcept { return what_; }

private:
    std::istream& is_;
    std::string what_;
    std::uint64_t offset_ = 0;
};

}  // namespace unoranic::binio
