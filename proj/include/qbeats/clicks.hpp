#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace qbeats {

// Detector time stamps in 164 ps ticks, one stream per APD channel.
inline constexpr double kTickSeconds = 164e-12;
inline constexpr uint64_t kTickFemtoseconds = 164000;

struct ClickRecord {
    uint8_t channel;  // 0 or 1
    uint64_t tick;
};

struct ClickStreams {
    std::vector<uint64_t> ch0, ch1;  // non-decreasing within each channel
    double duration = 0.0;           // s
    size_t total() const { return ch0.size() + ch1.size(); }
};

struct FluxTrace {
    double dt = 0.0;             // sample spacing, s
    std::vector<double> rate;    // photon rate at the H output, Hz
};

struct SynthesisOptions {
    double efficiency = 1.0;
    double dark_rate = 0.0;      // Hz per detector pair, split evenly
    double dead_time = 0.0;      // s, 0 = off
};

/// Thinned inhomogeneous Poisson detections from a piecewise-linear flux
/// trace, split 50/50 between two detectors and quantized to 164 ps ticks.
ClickStreams synthesize_clicks(const FluxTrace& flux, const SynthesisOptions& o,
                               uint64_t seed);

// Binary time-stamp file: 16-byte header (magic "QBTS", u16 version, u16
// reserved, u64 tick length in femtoseconds), then 9-byte records of
// (u8 channel, u64 tick), little-endian.  A plain-text two-column
// "channel tick" format is accepted for hand-made fixtures.
void write_clicks_binary(std::ostream& os, const ClickStreams& s);
void write_clicks_text(std::ostream& os, const ClickStreams& s);
ClickStreams parse_timestamps(std::istream& is);
ClickStreams load_timestamps(const std::string& path);

struct CoincidenceHistogram {
    double bin_width = 0.0;
    std::vector<double> tau;     // bin centers, -tau_max..tau_max
    std::vector<double> g2;      // normalized cross-correlation
    std::vector<double> g2_err;  // Poisson per-bin error
    std::vector<uint64_t> counts;
    double singles_rate0 = 0.0, singles_rate1 = 0.0;
    double duration = 0.0;
};

/// Cross-correlation histogram of channel 0 vs channel 1 over +-tau_max,
/// normalized by r0 r1 binwidth T.  Same-channel pairs are not counted.
CoincidenceHistogram estimate_g2(const ClickStreams& s, double bin_width,
                                 double tau_max);

std::string coincidence_csv(const CoincidenceHistogram& h,
                            const std::string& header_echo);

}  // namespace qbeats
