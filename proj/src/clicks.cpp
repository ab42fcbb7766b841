#include "qbeats/clicks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "qbeats/params.hpp"

namespace qbeats {

namespace {
inline uint64_t splitmix64(uint64_t& s) {
    uint64_t z = (s += 0x9E3779B97f4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}
inline double uni(uint64_t& s) { return (splitmix64(s) >> 11) * 0x1.0p-53; }
}  // namespace

ClickStreams synthesize_clicks(const FluxTrace& flux, const SynthesisOptions& o,
                               uint64_t seed) {
    if (o.efficiency <= 0 || o.efficiency > 1)
        throw config_error("synthesize_clicks: efficiency must be in (0,1]");
    ClickStreams out;
    size_t n = flux.rate.size();
    out.duration = n > 1 ? flux.dt * static_cast<double>(n - 1) : 0.0;
    if (n < 2) return out;

    uint64_t rng = seed ^ 0xA3C59AC2F0AED3E5ull;
    for (int i = 0; i < 4; ++i) splitmix64(rng);

    double rmax = 0;
    for (double r : flux.rate) {
        if (r < 0) throw config_error("synthesize_clicks: negative flux");
        rmax = std::max(rmax, r);
    }
    rmax = o.efficiency * rmax + o.dark_rate;
    double last0 = -1e300, last1 = -1e300;
    if (rmax > 0) {
        double t = 0;
        while (true) {
            t += -std::log(1.0 - uni(rng)) / rmax;
            if (t >= out.duration) break;
            // linear interpolation of the trace
            double x = t / flux.dt;
            auto k = static_cast<size_t>(x);
            double fr = x - static_cast<double>(k);
            double rate = flux.rate[k] * (1.0 - fr) + flux.rate[k + 1] * fr;
            rate = o.efficiency * rate + o.dark_rate;
            if (uni(rng) * rmax >= rate) continue;  // thinned away
            bool ch1 = uni(rng) < 0.5;
            if (o.dead_time > 0) {
                double& last = ch1 ? last1 : last0;
                if (t - last < o.dead_time) continue;
                last = t;
            }
            auto tick = static_cast<uint64_t>(t / kTickSeconds);
            (ch1 ? out.ch1 : out.ch0).push_back(tick);
        }
    }
    return out;
}

void write_clicks_binary(std::ostream& os, const ClickStreams& s) {
    char header[16] = {'Q', 'B', 'T', 'S'};
    uint16_t version = 1, reserved = 0;
    uint64_t tick_fs = kTickFemtoseconds;
    std::memcpy(header + 4, &version, 2);
    std::memcpy(header + 6, &reserved, 2);
    std::memcpy(header + 8, &tick_fs, 8);
    os.write(header, 16);
    // interleave by time so the file is a single chronological stream
    size_t i = 0, j = 0;
    auto put = [&](uint8_t ch, uint64_t tk) {
        char rec[9];
        rec[0] = static_cast<char>(ch);
        std::memcpy(rec + 1, &tk, 8);
        os.write(rec, 9);
    };
    while (i < s.ch0.size() || j < s.ch1.size()) {
        bool take0 = j >= s.ch1.size() ||
                     (i < s.ch0.size() && s.ch0[i] <= s.ch1[j]);
        if (take0)
            put(0, s.ch0[i++]);
        else
            put(1, s.ch1[j++]);
    }
}

void write_clicks_text(std::ostream& os, const ClickStreams& s) {
    size_t i = 0, j = 0;
    while (i < s.ch0.size() || j < s.ch1.size()) {
        bool take0 = j >= s.ch1.size() ||
                     (i < s.ch0.size() && s.ch0[i] <= s.ch1[j]);
        if (take0) {
            os << "0 " << s.ch0[i++] << "\n";
        } else {
            os << "1 " << s.ch1[j++] << "\n";
        }
    }
}

ClickStreams parse_timestamps(std::istream& is) {
    ClickStreams out;
    char magic[4];
    is.read(magic, 4);
    auto got = is.gcount();
    bool binary = got == 4 && std::memcmp(magic, "QBTS", 4) == 0;
    size_t index = 0;
    auto push = [&](int ch, uint64_t tick) {
        if (ch != 0 && ch != 1)
            throw config_error("timestamp record " + std::to_string(index) +
                               ": unknown channel " + std::to_string(ch));
        auto& v = ch == 0 ? out.ch0 : out.ch1;
        if (!v.empty() && tick < v.back())
            throw config_error("timestamp record " + std::to_string(index) +
                               ": tick regression on channel " +
                               std::to_string(ch));
        v.push_back(tick);
        ++index;
    };
    if (binary) {
        char rest[12];
        is.read(rest, 12);
        if (is.gcount() != 12)
            throw config_error("timestamp file: truncated header");
        uint64_t tick_fs;
        std::memcpy(&tick_fs, rest + 4, 8);
        if (tick_fs != kTickFemtoseconds)
            throw config_error("timestamp file: unexpected tick length " +
                               std::to_string(tick_fs) + " fs");
        char rec[9];
        while (is.read(rec, 9)) {
            uint64_t tick;
            std::memcpy(&tick, rec + 1, 8);
            push(static_cast<unsigned char>(rec[0]), tick);
        }
        if (is.gcount() != 0 && is.gcount() != 9)
            throw config_error("timestamp file: truncated record at index " +
                               std::to_string(index));
    } else {
        // text mode: re-read from the start including the probed bytes
        std::string content(magic, static_cast<size_t>(got));
        std::ostringstream rest;
        rest << is.rdbuf();
        content += rest.str();
        std::istringstream ls(content);
        std::string line;
        size_t lineno = 0;
        while (std::getline(ls, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ws(line);
            long long ch;
            unsigned long long tick;
            if (!(ws >> ch >> tick))
                throw config_error("timestamp text line " +
                                   std::to_string(lineno) + ": parse error");
            push(static_cast<int>(ch), tick);
        }
    }
    if (out.total() == 0)
        std::fprintf(stderr, "warning: empty timestamp stream\n");
    uint64_t last = 0;
    if (!out.ch0.empty()) last = std::max(last, out.ch0.back());
    if (!out.ch1.empty()) last = std::max(last, out.ch1.back());
    out.duration = static_cast<double>(last) * kTickSeconds;
    return out;
}

ClickStreams load_timestamps(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open timestamp file: " + path);
    return parse_timestamps(f);
}

CoincidenceHistogram estimate_g2(const ClickStreams& s, double bin_width,
                                 double tau_max) {
    if (s.ch0.empty() || s.ch1.empty())
        throw insufficient_data_error("estimate_g2: empty detector channel");
    if (bin_width <= 0 || tau_max < bin_width)
        throw config_error("estimate_g2: invalid binning");

    auto n_side = static_cast<int64_t>(std::floor(tau_max / bin_width));
    int64_t n_bins = 2 * n_side + 1;
    CoincidenceHistogram h;
    h.bin_width = bin_width;
    h.duration = s.duration;
    h.counts.assign(static_cast<size_t>(n_bins), 0);

    const double win = (static_cast<double>(n_side) + 0.5) * bin_width;
    auto win_ticks = static_cast<int64_t>(win / kTickSeconds);

    // sliding window over the sorted streams: tau = t1 - t0
    size_t lo = 0;
    for (uint64_t t0 : s.ch0) {
        while (lo < s.ch1.size() &&
               static_cast<int64_t>(s.ch1[lo]) <
                   static_cast<int64_t>(t0) - win_ticks)
            ++lo;
        for (size_t j = lo; j < s.ch1.size(); ++j) {
            int64_t dtick = static_cast<int64_t>(s.ch1[j]) -
                            static_cast<int64_t>(t0);
            if (dtick > win_ticks) break;
            double tau = static_cast<double>(dtick) * kTickSeconds;
            // round half away from zero so +-tau land in mirrored bins
            auto bin = std::llround(tau / bin_width) + n_side;
            if (bin >= 0 && bin < n_bins)
                ++h.counts[static_cast<size_t>(bin)];
        }
    }

    h.singles_rate0 = static_cast<double>(s.ch0.size()) / s.duration;
    h.singles_rate1 = static_cast<double>(s.ch1.size()) / s.duration;
    double norm = h.singles_rate0 * h.singles_rate1 * bin_width * s.duration;
    if (norm <= 0)
        throw insufficient_data_error("estimate_g2: zero normalization");
    h.tau.resize(static_cast<size_t>(n_bins));
    h.g2.resize(static_cast<size_t>(n_bins));
    h.g2_err.resize(static_cast<size_t>(n_bins));
    for (int64_t k = 0; k < n_bins; ++k) {
        auto kk = static_cast<size_t>(k);
        h.tau[kk] = static_cast<double>(k - n_side) * bin_width;
        h.g2[kk] = static_cast<double>(h.counts[kk]) / norm;
        h.g2_err[kk] = std::sqrt(static_cast<double>(h.counts[kk])) / norm;
    }
    return h;
}

std::string coincidence_csv(const CoincidenceHistogram& h,
                            const std::string& header_echo) {
    std::ostringstream os;
    os.precision(12);
    std::istringstream he(header_echo);
    std::string line;
    while (std::getline(he, line)) os << "# " << line << "\n";
    os << "tau_s,g2_total,g2_one_atom,g2_two_atom,g2_homodyne,g2_residual,"
          "stderr_total\n";
    for (size_t k = 0; k < h.tau.size(); ++k)
        os << h.tau[k] << ',' << h.g2[k] << ",0,0,0,0," << h.g2_err[k] << "\n";
    return os.str();
}

}  // namespace qbeats
