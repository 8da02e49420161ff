#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace centaur {

/// FNV-1a 64 over bytes. Used for provenance and data-identity checks, not security.
class Fnv1a {
public:
    Fnv1a& bytes(const void* data, std::size_t n) noexcept {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    Fnv1a& text(std::string_view s) noexcept { return bytes(s.data(), s.size()); }
    Fnv1a& u64(std::uint64_t v) noexcept { return bytes(&v, sizeof v); }
    Fnv1a& reals(std::span<const double> v) noexcept {
        for (double d : v) u64(std::bit_cast<std::uint64_t>(d));
        return *this;
    }
    std::uint64_t digest() const noexcept { return h_; }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
        return buf;
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace centaur
