#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedair {

/// Base class for all errors raised by this library.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// Control-channel state machine violation (out-of-order message).
class protocol_error : public error {
public:
    protocol_error(const std::string& expected, const std::string& observed)
        : error("protocol violation: expected " + expected + ", observed " + observed),
          expected_(expected), observed_(observed) {}
    const std::string& expected() const { return expected_; }
    const std::string& observed() const { return observed_; }

private:
    std::string expected_;
    std::string observed_;
};

/// Receiver could not locate a frame preamble above the detection threshold.
class frame_not_found : public error {
public:
    explicit frame_not_found(double peak_metric)
        : error("frame not found: peak metric " + std::to_string(peak_metric) +
                " below detection threshold"),
          peak_metric_(peak_metric) {}
    double peak_metric() const { return peak_metric_; }

private:
    double peak_metric_;
};

/// splitmix64: cheap stateless mixer used to derive independent sub-seeds
/// (per packet, per link, per round) from one master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index = 0) {
    return splitmix64(master ^ splitmix64(stream + 0x51ed2701) ^ splitmix64(index * 0x9e3779b9 + 1));
}

} // namespace fedair
