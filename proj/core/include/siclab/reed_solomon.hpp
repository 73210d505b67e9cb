#pragma once

// [255,239] Reed-Solomon code over GF(2^8), primitive polynomial 0x11D,
// generator roots alpha^1 .. alpha^16. Codewords are systematic: the 239
// message bytes come first, then 16 parity bytes. Byte 0 is the coefficient
// of the highest power of x.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace siclab::fec {

namespace gf256 {

inline constexpr unsigned kPrimitive = 0x11D;

std::uint8_t add(std::uint8_t a, std::uint8_t b);
std::uint8_t mul(std::uint8_t a, std::uint8_t b);
std::uint8_t div(std::uint8_t a, std::uint8_t b);
std::uint8_t inverse(std::uint8_t a);
/// alpha^e, e taken mod 255.
std::uint8_t exp(int e);
/// Discrete log; a must be nonzero.
int log(std::uint8_t a);

}  // namespace gf256

inline constexpr std::size_t kRsN = 255;
inline constexpr std::size_t kRsK = 239;
inline constexpr std::size_t kRsParity = kRsN - kRsK;
inline constexpr std::size_t kRsT = kRsParity / 2;

using Codeword = std::array<std::uint8_t, kRsN>;
using Message = std::array<std::uint8_t, kRsK>;

/// Generator polynomial, highest-degree coefficient first (degree 16, monic).
std::span<const std::uint8_t> generator_polynomial();

Codeword rs_encode(std::span<const std::uint8_t> message);

struct DecodeResult {
    Message message{};
    bool success = false;
    std::size_t corrected = 0;
};

/// Berlekamp-Massey / Chien / Forney decoding of up to 8 symbol errors.
/// success is false when the error locator is inconsistent; the message then
/// holds the uncorrected systematic bytes.
DecodeResult rs_decode(std::span<const std::uint8_t> received);

}  // namespace siclab::fec
