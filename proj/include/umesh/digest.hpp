#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace umesh {

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(const void* data, std::size_t len);
Sha256 sha256(const std::string& s);
std::string to_hex(const Sha256& d);

// Incremental hasher for streaming large blobs (model weights, tensors).
class Sha256Stream {
public:
    Sha256Stream();
    ~Sha256Stream();
    Sha256Stream(const Sha256Stream&) = delete;
    Sha256Stream& operator=(const Sha256Stream&) = delete;

    void update(const void* data, std::size_t len);
    Sha256 finish();

private:
    void* ctx_;
};

}  // namespace umesh
