#pragma once

#include <cstdint>
#include <string_view>

namespace domada {

/// 64-bit FNV-1a. Used as the trailing checksum of every persisted artifact.
class Fnv1a64 {
public:
    static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
    static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

    void update(std::string_view bytes) noexcept {
        for (unsigned char c : bytes) {
            state_ ^= c;
            state_ *= kPrime;
        }
    }
    std::uint64_t digest() const noexcept { return state_; }

private:
    std::uint64_t state_ = kOffset;
};

inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    Fnv1a64 h;
    h.update(bytes);
    return h.digest();
}

}  // namespace domada
