#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fedair/bits.hpp"
#include "fedair/codec.hpp"
#include "fedair/common.hpp"

namespace fedair::phy {

struct PhyConfig {
    int symbol_rate = 6250;
    int samples_per_symbol = 8;
    double rrc_rolloff = 0.5;
    int rrc_span_symbols = 8;
    int pn_degree = 5;
    unsigned pn_taps = 0b00101; // x^5 + x^3 + 1: feedback = s[n-5] ^ s[n-3]
    unsigned pn_seed = 0b11111;
    int guard_symbols = 16;
    double tx_power_db = 20.0;
    double noise_floor_db = 10.0;
    double acquisition_time_s = 0.040;
    // Peak must exceed this multiple of the median |correlation| to declare a
    // frame. 4.0 lets through ~1.5% false alarms on pure noise; 4.5 measures
    // ~0.05% while the weakest usable frames still sync with ratio > 6.
    double sync_threshold_factor = 4.5;

    int sample_rate() const { return symbol_rate * samples_per_symbol; }
    int rrc_ntaps() const { return rrc_span_symbols * samples_per_symbol + 1; }
    int pn_length() const { return (1 << pn_degree) - 1; }
    double snr_db() const { return tx_power_db - noise_floor_db; }
    double amplitude() const { return std::pow(10.0, tx_power_db / 20.0); }

    // Symbols per frame: guard | PN | reference + data | guard.
    int frame_symbols(int nbits) const { return 2 * guard_symbols + pn_length() + nbits + 1; }
    int frame_samples(int nbits) const {
        return frame_symbols(nbits) * samples_per_symbol + rrc_ntaps() - 1;
    }
    double packet_airtime_s(int nbits) const { return double(frame_samples(nbits)) / sample_rate(); }

    void validate() const {
        if (symbol_rate <= 0 || samples_per_symbol <= 0) throw error("PhyConfig: rates must be positive");
        if (!(rrc_rolloff > 0.0 && rrc_rolloff <= 1.0)) throw error("PhyConfig: rolloff must be in (0,1]");
        if (rrc_span_symbols <= 0) throw error("PhyConfig: rrc span must be positive");
        if (pn_degree < 2 || pn_degree > 16) throw error("PhyConfig: pn degree out of range");
        if (guard_symbols < 0) throw error("PhyConfig: guard symbols must be >= 0");
        if (sync_threshold_factor <= 1.0) throw error("PhyConfig: sync threshold must exceed 1");
        if (acquisition_time_s <= 0) throw error("PhyConfig: acquisition time must be positive");
    }
};

/// Maximal-length LFSR (Fibonacci form), output taken from the LSB, mapped
/// {0 -> +1, 1 -> -1}.
inline std::vector<int> pn_sequence(int degree, unsigned taps, unsigned seed_state) {
    if (seed_state == 0) throw error("pn_sequence: zero seed state");
    const int n = (1 << degree) - 1;
    unsigned state = seed_state & unsigned((1 << degree) - 1);
    if (state == 0) throw error("pn_sequence: seed has no bits inside the register");
    std::vector<int> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const unsigned bit = state & 1u;
        unsigned fb = state & taps;
        fb ^= fb >> 16, fb ^= fb >> 8, fb ^= fb >> 4, fb ^= fb >> 2, fb ^= fb >> 1;
        state = (state >> 1) | ((fb & 1u) << (degree - 1));
        out.push_back(bit ? -1 : +1);
    }
    return out;
}

/// Root-raised-cosine taps, span*sps+1 long, normalized to unit energy.
inline std::vector<double> rrc_taps(double beta, int span_symbols, int sps) {
    const int n = span_symbols * sps + 1;
    std::vector<double> h(n);
    for (int i = 0; i < n; ++i) {
        const double t = (i - (n - 1) / 2.0) / sps; // in symbol periods
        if (std::abs(t) < 1e-12) {
            h[i] = 1.0 + beta * (4.0 / std::numbers::pi - 1.0);
        } else if (std::abs(std::abs(4.0 * beta * t) - 1.0) < 1e-9) {
            h[i] = (beta / std::sqrt(2.0)) *
                   ((1 + 2.0 / std::numbers::pi) * std::sin(std::numbers::pi / (4 * beta)) +
                    (1 - 2.0 / std::numbers::pi) * std::cos(std::numbers::pi / (4 * beta)));
        } else {
            const double num = std::sin(std::numbers::pi * t * (1 - beta)) +
                               4 * beta * t * std::cos(std::numbers::pi * t * (1 + beta));
            const double den = std::numbers::pi * t * (1 - 16 * beta * beta * t * t);
            h[i] = num / den;
        }
    }
    double energy = 0.0;
    for (double v : h) energy += v * v;
    const double scale = 1.0 / std::sqrt(energy);
    for (double& v : h) v *= scale;
    return h;
}

inline std::vector<double> hamming_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (n - 1));
    return w;
}

struct BasebandFrame {
    std::vector<std::complex<float>> samples;
    // test metadata
    int symbol_count = 0;
    int first_data_sample = 0;
};

struct ChannelModel {
    double snr_db = 10.0;
    double sigma2 = 0.0; // complex noise variance per sample
    bool noiseless = false;
    std::uint64_t seed = 0;
};

inline ChannelModel make_channel(const PhyConfig& cfg, std::uint64_t seed, bool noiseless = false) {
    ChannelModel m;
    m.snr_db = cfg.snr_db();
    m.sigma2 = std::pow(10.0, cfg.tx_power_db / 10.0) / std::pow(10.0, m.snr_db / 10.0);
    m.noiseless = noiseless;
    m.seed = seed;
    return m;
}

namespace detail {

/// Radix-2 iterative FFT, fixed power-of-two size. Forward uses
/// exp(-2*pi*i*k/n); inverse conjugates and scales by 1/n.
struct FftPlan {
    std::size_t n = 0;
    std::vector<std::uint32_t> rev;
    std::vector<std::complex<float>> tw; // tw[j] = exp(-2*pi*i*j/n), j < n/2

    explicit FftPlan(std::size_t size) : n(size) {
        if (n < 2 || (n & (n - 1)) != 0) throw error("FftPlan: size must be a power of two >= 2");
        int log2n = 0;
        while ((std::size_t(1) << log2n) < n) ++log2n;
        rev.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t r = 0;
            for (int b = 0; b < log2n; ++b)
                if (i & (std::size_t(1) << b)) r |= std::uint32_t(1) << (log2n - 1 - b);
            rev[i] = r;
        }
        tw.resize(n / 2);
        for (std::size_t j = 0; j < n / 2; ++j) {
            const double a = -2.0 * std::numbers::pi * double(j) / double(n);
            tw[j] = {float(std::cos(a)), float(std::sin(a))};
        }
    }
};

inline void fft(std::vector<std::complex<float>>& a, const FftPlan& p, bool inverse) {
    if (a.size() != p.n) throw error("fft: buffer size does not match plan");
    for (std::size_t i = 0; i < p.n; ++i)
        if (p.rev[i] > i) std::swap(a[i], a[p.rev[i]]);
    for (std::size_t len = 2; len <= p.n; len <<= 1) {
        const std::size_t half = len >> 1, step = p.n / len;
        for (std::size_t base = 0; base < p.n; base += len) {
            for (std::size_t j = 0; j < half; ++j) {
                std::complex<float> w = p.tw[j * step];
                if (inverse) w = std::conj(w);
                const auto u = a[base + j];
                const auto v = a[base + j + half] * w;
                a[base + j] = u + v;
                a[base + j + half] = u - v;
            }
        }
    }
    if (inverse) {
        const float s = 1.0f / float(p.n);
        for (auto& v : a) v *= s;
    }
}

inline std::size_t next_pow2(std::size_t v) {
    std::size_t n = 1;
    while (n < v) n <<= 1;
    return n;
}

} // namespace detail

/// Precomputed filter taps, sync template and FFT machinery for one PhyConfig.
/// Build once and reuse; everything here is read-only after construction.
struct PhyContext {
    PhyConfig cfg;
    std::vector<double> rrc;     // pulse-shaping taps, unit energy
    std::vector<double> mf;      // Hamming-windowed matched-filter taps
    std::vector<float> mf_f;
    std::vector<int> pn;
    std::vector<double> tpl; // PN preamble as seen after tx pulse + rx filter
    int default_nbits;
    detail::FftPlan plan;                     // sized for default_nbits frames
    std::vector<std::complex<float>> kernel; // FFT(mf) * conj(FFT(tpl)) at plan.n

    explicit PhyContext(PhyConfig config, int nbits = codec::kPacketBits)
        : cfg(config),
          rrc(rrc_taps(config.rrc_rolloff, config.rrc_span_symbols, config.samples_per_symbol)),
          pn(pn_sequence(config.pn_degree, config.pn_taps, config.pn_seed)),
          default_nbits(nbits),
          plan(fft_size_for(config, nbits)) {
        cfg.validate();
        const auto w = hamming_window(int(rrc.size()));
        mf.resize(rrc.size());
        for (std::size_t i = 0; i < rrc.size(); ++i) mf[i] = rrc[i] * w[i];
        mf_f.assign(mf.begin(), mf.end());

        // template = upsampled PN -> tx RRC -> windowed matched filter
        const int sps = cfg.samples_per_symbol;
        std::vector<double> up(std::size_t(pn.size()) * sps, 0.0);
        for (std::size_t k = 0; k < pn.size(); ++k) up[k * sps] = pn[k];
        auto conv = [](const std::vector<double>& a, const std::vector<double>& b) {
            std::vector<double> out(a.size() + b.size() - 1, 0.0);
            for (std::size_t i = 0; i < a.size(); ++i)
                for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
            return out;
        };
        tpl = conv(conv(up, rrc), mf);
        kernel = build_kernel(plan);
    }

    static std::size_t fft_size_for(const PhyConfig& c, int nbits) {
        const std::size_t mf_len = std::size_t(c.frame_samples(nbits)) + c.rrc_ntaps() - 1;
        const std::size_t tpl_len =
            std::size_t(c.pn_length()) * c.samples_per_symbol + 2 * (c.rrc_ntaps() - 1);
        return detail::next_pow2(mf_len + tpl_len);
    }

    /// Frequency-domain combination of matched filter and sync correlator:
    /// IFFT(FFT(x) * kernel) = cross-correlation of (x conv mf) with tpl.
    std::vector<std::complex<float>> build_kernel(const detail::FftPlan& p) const {
        std::vector<std::complex<float>> g(p.n), t(p.n);
        for (std::size_t i = 0; i < mf.size(); ++i) g[i] = {float(mf[i]), 0.0f};
        for (std::size_t i = 0; i < tpl.size(); ++i) t[i] = {float(tpl[i]), 0.0f};
        detail::fft(g, p, false);
        detail::fft(t, p, false);
        std::vector<std::complex<float>> k(p.n);
        for (std::size_t i = 0; i < p.n; ++i) k[i] = g[i] * std::conj(t[i]);
        return k;
    }
};

/// DBPSK + RRC pulse shaping. Frame layout in symbols:
/// [guard zeros | PN preamble | reference + differentially-encoded data | guard zeros].
/// Mean energy of the active symbols is 10^(tx_power_db/10).
inline BasebandFrame modulate(const BitBuffer& bits, const PhyContext& ctx) {
    if (bits.size() == 0) throw error("modulate: empty bit sequence");
    const auto& cfg = ctx.cfg;
    const int sps = cfg.samples_per_symbol;
    const int nsym = cfg.frame_symbols(int(bits.size()));

    std::vector<double> syms(nsym, 0.0);
    int s = cfg.guard_symbols;
    for (int v : ctx.pn) syms[s++] = v;
    double d = 1.0; // differential reference
    syms[s++] = d;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        d *= bits.bit(i) ? -1.0 : 1.0;
        syms[s++] = d;
    }

    const double amp = cfg.amplitude();
    BasebandFrame frame;
    frame.symbol_count = nsym;
    frame.first_data_sample = (cfg.guard_symbols + cfg.pn_length()) * sps;
    frame.samples.assign(std::size_t(nsym) * sps + ctx.rrc.size() - 1, {0.0f, 0.0f});
    for (int k = 0; k < nsym; ++k) {
        if (syms[k] == 0.0) continue;
        const double a = syms[k] * amp;
        const std::size_t base = std::size_t(k) * sps;
        for (std::size_t i = 0; i < ctx.rrc.size(); ++i)
            frame.samples[base + i] += std::complex<float>(float(a * ctx.rrc[i]), 0.0f);
    }
    return frame;
}

/// AWGN: adds i.i.d. circular complex Gaussian noise of total per-sample
/// variance sigma2 (sigma2/2 per quadrature). Deterministic in the seed.
inline BasebandFrame channel(const BasebandFrame& frame, const ChannelModel& model) {
    BasebandFrame out = frame;
    if (model.noiseless) return out;
    std::mt19937_64 rng(model.seed);
    std::normal_distribution<double> g(0.0, std::sqrt(model.sigma2 / 2.0));
    for (auto& v : out.samples) {
        const double re = g(rng), im = g(rng);
        v += std::complex<float>(float(re), float(im));
    }
    return out;
}

struct DemodResult {
    BitBuffer bits;
    std::size_t sync_offset = 0; // correlation peak sample index
    double peak_metric = 0.0;    // peak / median |correlation|
};

/// DC removal -> windowed matched filter -> PN correlation sync -> symbol
/// sampling -> differential decision Re(r_k * conj(r_{k-1})) < 0 => bit 1.
/// Throws frame_not_found when the correlation peak fails the threshold test.
inline DemodResult demodulate(const BasebandFrame& received, const PhyContext& ctx, int nbits) {
    const auto& cfg = ctx.cfg;
    const std::size_t n_in = received.samples.size();
    if (n_in == 0) throw frame_not_found(0.0);
    const int ntaps = cfg.rrc_ntaps();
    const std::size_t mf_len = n_in + ntaps - 1;
    const std::size_t tpl_len = ctx.tpl.size();
    if (mf_len <= tpl_len) throw frame_not_found(0.0);

    // DC removal
    std::complex<double> acc{0.0, 0.0};
    for (const auto& v : received.samples) acc += std::complex<double>(v);
    const std::complex<float> mean(float(acc.real() / double(n_in)), float(acc.imag() / double(n_in)));

    const std::size_t fft_n = detail::next_pow2(mf_len + tpl_len);
    const detail::FftPlan* plan = &ctx.plan;
    detail::FftPlan local_plan(2);
    std::vector<std::complex<float>> local_kernel;
    const std::vector<std::complex<float>>* kernel = &ctx.kernel;
    if (fft_n != ctx.plan.n) {
        local_plan = detail::FftPlan(fft_n);
        local_kernel = ctx.build_kernel(local_plan);
        plan = &local_plan;
        kernel = &local_kernel;
    }

    std::vector<std::complex<float>> buf(plan->n, {0.0f, 0.0f});
    for (std::size_t i = 0; i < n_in; ++i) buf[i] = received.samples[i] - mean;
    detail::fft(buf, *plan, false);
    for (std::size_t i = 0; i < plan->n; ++i) buf[i] *= (*kernel)[i];
    detail::fft(buf, *plan, true); // buf[k] = corr of matched-filtered x with tpl at lag k

    const std::size_t acq = std::size_t(std::lround(cfg.acquisition_time_s * cfg.sample_rate()));
    const std::size_t nlags = std::min(acq, mf_len - tpl_len);
    if (nlags < 8) throw frame_not_found(0.0);
    std::vector<float> mag2(nlags);
    for (std::size_t k = 0; k < nlags; ++k) mag2[k] = std::norm(buf[k]);
    const std::size_t peak = std::max_element(mag2.begin(), mag2.end()) - mag2.begin();
    std::vector<float> scratch(mag2);
    std::nth_element(scratch.begin(), scratch.begin() + nlags / 2, scratch.end());
    const double med2 = scratch[nlags / 2];
    const double peak2 = mag2[peak];
    const double metric = med2 > 0.0 ? std::sqrt(peak2 / med2) : 0.0;
    if (med2 <= 0.0 || peak2 <= cfg.sync_threshold_factor * cfg.sync_threshold_factor * med2)
        throw frame_not_found(metric);

    // Symbol centers in matched-filter coordinates: PN span plus the group
    // delay of both filters past the correlation peak.
    const int sps = cfg.samples_per_symbol;
    const std::size_t first = peak + std::size_t(cfg.pn_length()) * sps + (ntaps - 1);
    if (first + std::size_t(nbits) * sps >= mf_len) throw frame_not_found(metric);

    // Matched-filter output evaluated only at the needed points.
    const auto& g = ctx.mf_f;
    auto mf_at = [&](std::size_t c) -> std::complex<double> {
        double re = 0.0, im = 0.0;
        const std::size_t i_lo = c >= n_in ? c - n_in + 1 : 0;
        const std::size_t i_hi = std::min<std::size_t>(ntaps - 1, c);
        for (std::size_t i = i_lo; i <= i_hi; ++i) {
            const auto x = received.samples[c - i] - mean;
            re += g[i] * x.real();
            im += g[i] * x.imag();
        }
        return {re, im};
    };

    DemodResult r;
    r.sync_offset = peak;
    r.peak_metric = metric;
    std::complex<double> prev = mf_at(first);
    for (int m = 1; m <= nbits; ++m) {
        const std::complex<double> cur = mf_at(first + std::size_t(m) * sps);
        r.bits.append_bit((cur * std::conj(prev)).real() < 0.0);
        prev = cur;
    }
    return r;
}

struct TransmitOutcome {
    std::vector<codec::ParsedPacket> packets;
    double airtime_s = 0.0;
    std::size_t frames_not_found = 0;

    std::size_t corrupted_count() const {
        std::size_t n = 0;
        for (const auto& p : packets) n += p.crc_ok ? 0 : 1;
        return n;
    }
};

/// Push every packet of a train through modulate -> channel -> demodulate ->
/// CRC check. Per-packet noise seeds are derived from the channel seed, so
/// results do not depend on processing order. Sync failures are recorded as
/// corrupt packets, never thrown.
inline TransmitOutcome transmit_train(const codec::PacketTrain& train, const PhyContext& ctx,
                                      const ChannelModel& model) {
    TransmitOutcome out;
    out.packets.reserve(train.packets.size());
    for (std::size_t k = 0; k < train.packets.size(); ++k) {
        const BitBuffer tx_bits = train.packets[k].to_bits();
        const BasebandFrame frame = modulate(tx_bits, ctx);
        ChannelModel per_packet = model;
        per_packet.seed = derive_seed(model.seed, k);
        const BasebandFrame rx = channel(frame, per_packet);
        codec::ParsedPacket parsed;
        bool found = true;
        try {
            const DemodResult d = demodulate(rx, ctx, int(tx_bits.size()));
            parsed = codec::parse_packet(d.bits);
        } catch (const frame_not_found&) {
            found = false;
        }
        if (!found || !parsed.crc_ok) {
            // The TDMA schedule tells the receiver which slot this was, so a
            // failed packet is pinned to its slot index rather than trusting
            // corrupted header bits.
            codec::ParsedPacket failed;
            failed.packet.jacket = std::uint16_t(k);
            failed.packet.payload = BitBuffer(codec::kPayloadBits);
            failed.crc_ok = false;
            parsed = failed;
            if (!found) ++out.frames_not_found;
        }
        out.packets.push_back(std::move(parsed));
        out.airtime_s += ctx.cfg.packet_airtime_s(int(tx_bits.size()));
    }
    return out;
}

/// Interleaved 32-bit float I/Q, little-endian.
inline void dump_waveform(const BasebandFrame& frame, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw error("dump_waveform: cannot open " + path);
    for (const auto& v : frame.samples) {
        const float iq[2] = {v.real(), v.imag()};
        f.write(reinterpret_cast<const char*>(iq), sizeof iq);
    }
    if (!f) throw error("dump_waveform: write failed for " + path);
}

} // namespace fedair::phy
