#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace hybridcap {

// 64-bit FNV-1a. Used to fingerprint vocabularies and feature indexes so
// checkpoints can refuse to load against mismatching artifacts.
class Fnv1a {
public:
    void update(std::string_view bytes) {
        for (unsigned char ch : bytes) {
            state_ ^= ch;
            state_ *= kPrime;
        }
    }

    void update(double value) {
        char buf[sizeof(double)];
        std::memcpy(buf, &value, sizeof(double));
        update(std::string_view(buf, sizeof(double)));
    }

    std::uint64_t digest() const { return state_; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        std::uint64_t v = state_;
        for (int i = 15; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = digits[v & 0xf];
            v >>= 4;
        }
        return out;
    }

private:
    static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
    static constexpr std::uint64_t kPrime = 0x100000001b3ULL;
    std::uint64_t state_ = kOffset;
};

}  // namespace hybridcap
