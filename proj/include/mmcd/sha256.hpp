#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

namespace mmcd {

// Incremental SHA-256 (FIPS 180-4).
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }
    // Finalizes and returns the lowercase hex digest; the object must not be reused.
    std::string hex_digest();

    static std::string hash_hex(const void* data, std::size_t len);
    static std::string hash_hex(const std::string& s) { return hash_hex(s.data(), s.size()); }

private:
    void process_block(const std::uint8_t* p);

    std::uint32_t h_[8];
    std::uint8_t buf_[64];
    std::size_t buf_len_ = 0;
    std::uint64_t total_ = 0;
};

}  // namespace mmcd
