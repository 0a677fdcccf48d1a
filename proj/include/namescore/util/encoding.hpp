#pragma once

// Base64 and SHA-256 helpers backed by OpenSSL libcrypto.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "namescore/util/error.hpp"

namespace namescore::encoding {

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) return {};
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.empty()) return {};
    if (text.size() % 4 != 0) throw ParseError(0, "base64 payload length is not a multiple of 4");
    std::vector<std::uint8_t> out(3 * (text.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw ParseError(0, "invalid base64 payload");
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    std::size_t pad = 0;
    if (text.back() == '=') ++pad;
    if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
    SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest.data());
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * digest.size());
    for (unsigned char b : digest) {
        out.push_back(kHex[b >> 4]);
        out.push_back(kHex[b & 0xF]);
    }
    return out;
}

/// Little-endian byte image of an arithmetic array.
template <class T>
std::vector<std::uint8_t> to_le_bytes(std::span<const T> values) {
    static_assert(std::is_arithmetic_v<T>);
    std::vector<std::uint8_t> out(values.size() * sizeof(T));
    if constexpr (std::endian::native == std::endian::little) {
        if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto* p = reinterpret_cast<const std::uint8_t*>(&values[i]);
            for (std::size_t b = 0; b < sizeof(T); ++b) out[i * sizeof(T) + b] = p[sizeof(T) - 1 - b];
        }
    }
    return out;
}

template <class T>
std::vector<T> from_le_bytes(std::span<const std::uint8_t> bytes) {
    static_assert(std::is_arithmetic_v<T>);
    if (bytes.size() % sizeof(T) != 0) throw ParseError(0, "payload size is not a multiple of the element size");
    std::vector<T> out(bytes.size() / sizeof(T));
    if constexpr (std::endian::native == std::endian::little) {
        if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            auto* p = reinterpret_cast<std::uint8_t*>(&out[i]);
            for (std::size_t b = 0; b < sizeof(T); ++b) p[b] = bytes[i * sizeof(T) + sizeof(T) - 1 - b];
        }
    }
    return out;
}

}  // namespace namescore::encoding
