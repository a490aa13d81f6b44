#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedair/common.hpp"

namespace fedair {

/// Bit-packed buffer, MSB-first within each byte. The unit of exchange
/// between the parameter codec and the modem.
class BitBuffer {
public:
    BitBuffer() = default;
    explicit BitBuffer(std::size_t nbits) : bits_(nbits), bytes_((nbits + 7) / 8, 0) {}

    std::size_t size() const { return bits_; }
    bool empty() const { return bits_ == 0; }

    void append_bit(bool b) {
        const std::size_t i = bits_++;
        if (i / 8 >= bytes_.size()) bytes_.push_back(0);
        if (b) bytes_[i / 8] |= static_cast<std::uint8_t>(1u << (7 - i % 8));
    }

    /// Append the low `n` bits of `v`, most significant first.
    void append_bits(std::uint64_t v, int n) {
        for (int k = n - 1; k >= 0; --k) append_bit((v >> k) & 1u);
    }

    void append(const BitBuffer& other) {
        for (std::size_t i = 0; i < other.size(); ++i) append_bit(other.bit(i));
    }

    bool bit(std::size_t i) const {
        return (bytes_[i / 8] >> (7 - i % 8)) & 1u;
    }

    void set_bit(std::size_t i, bool b) {
        const std::uint8_t mask = static_cast<std::uint8_t>(1u << (7 - i % 8));
        if (b)
            bytes_[i / 8] |= mask;
        else
            bytes_[i / 8] &= static_cast<std::uint8_t>(~mask);
    }

    void flip_bit(std::size_t i) { set_bit(i, !bit(i)); }

    /// Read `n` bits starting at `pos`, returned right-aligned.
    std::uint64_t get_bits(std::size_t pos, int n) const {
        std::uint64_t v = 0;
        for (int k = 0; k < n; ++k) v = (v << 1) | (bit(pos + k) ? 1u : 0u);
        return v;
    }

    BitBuffer slice(std::size_t pos, std::size_t n) const {
        BitBuffer out;
        for (std::size_t i = 0; i < n; ++i) out.append_bit(bit(pos + i));
        return out;
    }

    /// Underlying storage; trailing pad bits of the last byte are zero.
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

    std::string to_hex() const {
        static const char* digits = "0123456789abcdef";
        std::string s;
        s.reserve((bits_ + 3) / 4);
        for (std::size_t pos = 0; pos < bits_; pos += 4) {
            const int n = static_cast<int>(std::min<std::size_t>(4, bits_ - pos));
            std::uint64_t v = get_bits(pos, n) << (4 - n);
            s.push_back(digits[v & 0xf]);
        }
        return s;
    }

    friend bool operator==(const BitBuffer& a, const BitBuffer& b) {
        if (a.bits_ != b.bits_) return false;
        for (std::size_t i = 0; i < a.bits_; ++i)
            if (a.bit(i) != b.bit(i)) return false;
        return true;
    }
    friend bool operator!=(const BitBuffer& a, const BitBuffer& b) { return !(a == b); }

private:
    std::size_t bits_ = 0;
    std::vector<std::uint8_t> bytes_;
};

} // namespace fedair
