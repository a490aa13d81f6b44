#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "fedair/bits.hpp"
#include "fedair/common.hpp"

namespace fedair::codec {

inline constexpr int kJacketBits = 16;
inline constexpr int kPayloadBits = 128;
inline constexpr int kCrcBits = 60;
inline constexpr int kPacketBits = kJacketBits + kPayloadBits + kCrcBits; // 204
inline constexpr int kFloatsPerPacket = kPayloadBits / 32;

// x^60 + x^59 + x^5 + x^2 + 1, MSB-first, init all-ones, no reflection, no
// final xor. The x^60 term is implicit in the shift-out.
inline constexpr std::uint64_t kCrcPoly = (1ull << 59) | (1ull << 5) | (1ull << 2) | 1ull;
inline constexpr std::uint64_t kCrcMask = (1ull << kCrcBits) - 1;
inline constexpr std::uint64_t kCrcInit = kCrcMask;

/// Bit-at-a-time reference implementation; works on any bit count.
inline std::uint64_t crc60(const BitBuffer& message) {
    std::uint64_t crc = kCrcInit;
    for (std::size_t i = 0; i < message.size(); ++i) {
        const std::uint64_t fb = ((crc >> 59) & 1ull) ^ (message.bit(i) ? 1ull : 0ull);
        crc = (crc << 1) & kCrcMask;
        if (fb) crc ^= kCrcPoly;
    }
    return crc;
}

namespace detail {

struct CrcTable {
    std::uint64_t entry[256];
    CrcTable() {
        for (int b = 0; b < 256; ++b) {
            std::uint64_t reg = std::uint64_t(b) << 52;
            for (int k = 0; k < 8; ++k) {
                const bool top = (reg >> 59) & 1ull;
                reg = (reg << 1) & kCrcMask;
                if (top) reg ^= kCrcPoly;
            }
            entry[b] = reg;
        }
    }
};

inline const CrcTable& crc_table() {
    static const CrcTable t;
    return t;
}

} // namespace detail

/// Byte-at-a-time table version, used on packet hot paths. Agrees with
/// crc60() whenever the message is a whole number of bytes.
inline std::uint64_t crc60_bytes(const std::vector<std::uint8_t>& bytes) {
    const auto& table = detail::crc_table();
    std::uint64_t crc = kCrcInit;
    for (std::uint8_t b : bytes) {
        const auto idx = std::uint8_t(((crc >> 52) & 0xFF) ^ b);
        crc = ((crc << 8) & kCrcMask) ^ table.entry[idx];
    }
    return crc;
}

/// Each parameter as IEEE-754 binary32, most significant byte first.
inline BitBuffer serialize_params(const std::vector<float>& values) {
    BitBuffer bits;
    for (float v : values) {
        if (!std::isfinite(v)) throw error("serialize_params: non-finite parameter");
        bits.append_bits(std::bit_cast<std::uint32_t>(v), 32);
    }
    return bits;
}

inline std::vector<float> deserialize_params(const BitBuffer& bits, std::size_t expected_count) {
    if (bits.size() != expected_count * 32)
        throw error("deserialize_params: got " + std::to_string(bits.size()) + " bits, expected " +
                    std::to_string(expected_count * 32));
    std::vector<float> out;
    out.reserve(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i)
        out.push_back(std::bit_cast<float>(std::uint32_t(bits.get_bits(i * 32, 32))));
    return out;
}

/// One 204-bit air unit: 16-bit sequence number ("jacket"), 128-bit payload,
/// 60-bit CRC over jacket+payload.
struct Packet {
    std::uint16_t jacket = 0;
    BitBuffer payload; // exactly kPayloadBits
    std::uint64_t crc = 0;

    BitBuffer to_bits() const {
        BitBuffer b;
        b.append_bits(jacket, kJacketBits);
        b.append(payload);
        b.append_bits(crc, kCrcBits);
        return b;
    }
};

inline std::uint64_t packet_crc(std::uint16_t jacket, const BitBuffer& payload) {
    BitBuffer header_and_payload;
    header_and_payload.append_bits(jacket, kJacketBits);
    header_and_payload.append(payload);
    return crc60_bytes(header_and_payload.bytes()); // 144 bits = 18 whole bytes
}

inline Packet make_packet(std::uint16_t jacket, BitBuffer payload) {
    if (payload.size() != kPayloadBits)
        throw error("make_packet: payload must be " + std::to_string(kPayloadBits) + " bits");
    Packet p;
    p.jacket = jacket;
    p.payload = std::move(payload);
    p.crc = packet_crc(p.jacket, p.payload);
    return p;
}

/// Parse 204 received bits. crc_ok is the only integrity signal; the payload
/// is returned either way so callers can count corrupted packets.
struct ParsedPacket {
    Packet packet;
    bool crc_ok = false;
};

inline ParsedPacket parse_packet(const BitBuffer& bits) {
    if (bits.size() != kPacketBits)
        throw error("parse_packet: got " + std::to_string(bits.size()) + " bits, expected " +
                    std::to_string(kPacketBits));
    ParsedPacket r;
    r.packet.jacket = std::uint16_t(bits.get_bits(0, kJacketBits));
    r.packet.payload = bits.slice(kJacketBits, kPayloadBits);
    r.packet.crc = bits.get_bits(kJacketBits + kPayloadBits, kCrcBits);
    r.crc_ok = (r.packet.crc == packet_crc(r.packet.jacket, r.packet.payload));
    return r;
}

/// Split a serialized parameter stream into numbered packets. The final
/// payload is zero-padded up to 128 bits.
inline std::vector<Packet> packetize(const BitBuffer& stream) {
    const std::size_t count = (stream.size() + kPayloadBits - 1) / kPayloadBits;
    if (count > 0x10000) throw error("packetize: stream needs more than 65536 packets");
    std::vector<Packet> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t start = k * kPayloadBits;
        const std::size_t n = std::min<std::size_t>(kPayloadBits, stream.size() - start);
        BitBuffer payload = stream.slice(start, n);
        for (std::size_t pad = n; pad < kPayloadBits; ++pad) payload.append_bit(false);
        out.push_back(make_packet(std::uint16_t(k), std::move(payload)));
    }
    return out;
}

inline std::size_t packet_count_for(std::size_t value_count) {
    return (value_count * 32 + kPayloadBits - 1) / kPayloadBits;
}

/// A full parameter transfer: consecutively numbered packets plus the count
/// of encoded 32-bit values (needed to strip the final packet's padding).
struct PacketTrain {
    std::vector<Packet> packets;
    std::size_t total_params = 0;
};

inline PacketTrain packetize_params(const std::vector<float>& values) {
    return {packetize(serialize_params(values)), values.size()};
}

/// What to substitute for a packet that never arrived or failed its CRC.
enum class GapPolicy {
    HoldPrevious, // keep the receiver's current copy of those parameters
    ZeroFill,
};

struct ReassemblyReport {
    std::vector<float> values;
    std::vector<std::uint16_t> received_ok; // valid packets, ascending jacket order
    std::vector<std::uint16_t> failed;      // CRC failures and never-received slots
    std::size_t replaced_values = 0;

    double failure_fraction(std::size_t packet_count) const {
        return packet_count ? double(failed.size()) / double(packet_count) : 0.0;
    }
};

/// Rebuild a parameter vector from parsed packets. Out-of-order arrival is
/// fine (jacket numbers define placement). Identical valid duplicates
/// collapse to one; valid duplicates with differing payloads are a protocol
/// error. Out-of-range jackets are a protocol error. HoldPrevious requires
/// `previous` with value_count entries.
inline ReassemblyReport reassemble(const std::vector<ParsedPacket>& received,
                                   std::size_t value_count, GapPolicy policy,
                                   const std::vector<float>* previous = nullptr) {
    const std::size_t packet_count = packet_count_for(value_count);
    if (policy == GapPolicy::HoldPrevious) {
        if (!previous) throw error("reassemble: HoldPrevious needs a previous parameter vector");
        if (previous->size() != value_count)
            throw error("reassemble: previous parameter vector has wrong length");
    }
    std::vector<const ParsedPacket*> slot(packet_count, nullptr);
    for (const auto& pp : received) {
        const std::size_t j = pp.packet.jacket;
        if (j >= packet_count)
            throw protocol_error("jacket < " + std::to_string(packet_count),
                                 "jacket " + std::to_string(j));
        if (!slot[j] || (!slot[j]->crc_ok && pp.crc_ok)) {
            slot[j] = &pp;
        } else if (slot[j]->crc_ok && pp.crc_ok &&
                   !(slot[j]->packet.payload == pp.packet.payload)) {
            throw protocol_error("at most one valid payload per jacket",
                                 "conflicting valid duplicates for jacket " + std::to_string(j));
        }
    }

    ReassemblyReport r;
    r.values.resize(value_count);
    for (std::size_t k = 0; k < packet_count; ++k) {
        const std::size_t first = k * kFloatsPerPacket;
        const std::size_t n = std::min<std::size_t>(kFloatsPerPacket, value_count - first);
        if (slot[k] && slot[k]->crc_ok) {
            r.received_ok.push_back(std::uint16_t(k));
            const auto& payload = slot[k]->packet.payload;
            for (std::size_t i = 0; i < n; ++i)
                r.values[first + i] =
                    std::bit_cast<float>(std::uint32_t(payload.get_bits(i * 32, 32)));
        } else {
            r.failed.push_back(std::uint16_t(k));
            for (std::size_t i = 0; i < n; ++i)
                r.values[first + i] =
                    (policy == GapPolicy::HoldPrevious) ? (*previous)[first + i] : 0.0f;
            r.replaced_values += n;
        }
    }
    return r;
}

/// "jjjj | 32 hex payload chars | 15 hex crc chars" — one packet per line.
inline std::string format_packet(const Packet& p) {
    char head[8];
    std::snprintf(head, sizeof head, "%04x", unsigned(p.jacket));
    char tail[20];
    std::snprintf(tail, sizeof tail, "%015llx", static_cast<unsigned long long>(p.crc));
    return std::string(head) + " | " + p.payload.to_hex() + " | " + tail;
}

} // namespace fedair::codec
