#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "umesh/errors.hpp"

namespace umesh {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are not supported");

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError(std::string("truncated file while reading ") + what);
    return v;
}

inline void write_bytes(std::ostream& os, const void* data, std::size_t len) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
}

inline void read_bytes(std::istream& is, void* data, std::size_t len, const char* what) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(len));
    if (!is) throw FormatError(std::string("truncated file while reading ") + what);
}

inline void expect_magic(std::istream& is, const char magic[4], const char* what) {
    char got[4];
    read_bytes(is, got, 4, what);
    if (std::memcmp(got, magic, 4) != 0)
        throw FormatError(std::string("bad magic, not a ") + what + " file");
}

}  // namespace umesh
