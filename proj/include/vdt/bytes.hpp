#pragma once

// Little-endian encode/decode helpers, independent of host byte order.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace vdt::bytes {

template <typename U>
void put_le(std::string& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
    }
}

inline void put_f32(std::string& out, float value) { put_le(out, std::bit_cast<std::uint32_t>(value)); }

template <typename U>
U get_le(std::string_view in, std::size_t offset) {
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        value |= static_cast<U>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    }
    return value;
}

inline float get_f32(std::string_view in, std::size_t offset) {
    return std::bit_cast<float>(get_le<std::uint32_t>(in, offset));
}

} // namespace vdt::bytes
