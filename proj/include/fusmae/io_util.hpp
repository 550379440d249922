#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fusmae/common.hpp"

namespace fusmae {

// Little-endian binary readers/writers. x86 is little-endian already, but
// the byte order is part of the file contracts, so it is made explicit.

inline void write_bytes(std::ostream& os, const void* data, size_t n) {
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!os) throw IoError("write failed");
}

template <class T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    write_bytes(os, buf, sizeof(T));
}

inline void read_bytes(std::istream& is, void* data, size_t n, const char* what) {
    is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw IoError(std::string("truncated file while reading ") + what);
}

template <class T>
T read_le(std::istream& is, const char* what) {
    unsigned char buf[sizeof(T)];
    read_bytes(is, buf, sizeof(T), what);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

inline void write_f32_array(std::ostream& os, const float* data, size_t n) {
    write_bytes(os, data, n * sizeof(float));
}

inline void read_f32_array(std::istream& is, float* data, size_t n, const char* what) {
    read_bytes(is, data, n * sizeof(float), what);
}

inline std::uint64_t fnv1a64_update(std::uint64_t state, const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        state ^= p[i];
        state *= 0x100000001B3ull;
    }
    return state;
}

inline std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace fusmae
