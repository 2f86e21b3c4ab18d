#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace pacl {

// CRC-32 (IEEE 802.3 polynomial, reflected), as used by zip/png.
uint32_t crc32(std::span<const uint8_t> data, uint32_t seed = 0);

// FIPS 180-4 SHA-256.
std::array<uint8_t, 32> sha256(std::span<const uint8_t> data);
std::string sha256_hex(std::span<const uint8_t> data);

}  // namespace pacl
