#include "qbeats/correlator.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "qbeats/params.hpp"

namespace qbeats {

CorrelationAccumulator::CorrelationAccumulator(int n_bins, double bin_width,
                                               int n_batches)
    : n_bins_(n_bins), bin_width_(bin_width), n_batches_(n_batches) {
    batches_.resize(static_cast<size_t>(n_batches_));
    for (auto& b : batches_) {
        b.total.resize(static_cast<size_t>(n_bins_));
        b.one_atom.resize(static_cast<size_t>(n_bins_));
        b.two_atom.resize(static_cast<size_t>(n_bins_));
        b.homodyne.resize(static_cast<size_t>(n_bins_));
        b.residual.resize(static_cast<size_t>(n_bins_));
        b.counts.assign(static_cast<size_t>(n_bins_), 0);
    }
}

void CorrelationAccumulator::count_sample(int reach) {
    auto& b = batches_[static_cast<size_t>(batch_)];
    for (int k = 0; k < reach && k < n_bins_; ++k) ++b.counts[static_cast<size_t>(k)];
}

void CorrelationAccumulator::add_sample_value(int bin, const SampleValue& v) {
    auto& b = batches_[static_cast<size_t>(batch_)];
    auto k = static_cast<size_t>(bin);
    b.total[k].add(v.total);
    b.one_atom[k].add(v.one_atom);
    b.two_atom[k].add(v.two_atom);
    b.homodyne[k].add(v.homodyne);
    b.residual[k].add(v.residual);
}

void CorrelationAccumulator::add_denominator(double d) {
    auto& b = batches_[static_cast<size_t>(batch_)];
    b.den.add(d);
    ++b.den_count;
}

void CorrelationAccumulator::merge(const CorrelationAccumulator& o) {
    if (o.n_bins_ != n_bins_ || o.n_batches_ != n_batches_)
        throw std::logic_error("accumulator merge: shape mismatch");
    for (int bb = 0; bb < n_batches_; ++bb) {
        auto& dst = batches_[static_cast<size_t>(bb)];
        const auto& src = o.batches_[static_cast<size_t>(bb)];
        for (int k = 0; k < n_bins_; ++k) {
            auto kk = static_cast<size_t>(k);
            dst.total[kk].merge(src.total[kk]);
            dst.one_atom[kk].merge(src.one_atom[kk]);
            dst.two_atom[kk].merge(src.two_atom[kk]);
            dst.homodyne[kk].merge(src.homodyne[kk]);
            dst.residual[kk].merge(src.residual[kk]);
            dst.counts[kk] += src.counts[kk];
        }
        dst.den.merge(src.den);
        dst.den_count += src.den_count;
    }
}

int64_t CorrelationAccumulator::samples_begun() const {
    int64_t n = 0;
    for (auto& b : batches_) n += b.counts.empty() ? 0 : b.counts[0];
    return n;
}

G2Curve CorrelationAccumulator::finalize() const {
    // pooled sums
    std::vector<double> num(n_bins_, 0), n1(n_bins_, 0), n2v(n_bins_, 0),
        nh(n_bins_, 0), nr(n_bins_, 0);
    std::vector<int64_t> cnt(n_bins_, 0);
    double den = 0;
    int64_t den_cnt = 0;
    for (auto& b : batches_) {
        for (int k = 0; k < n_bins_; ++k) {
            auto kk = static_cast<size_t>(k);
            num[kk] += b.total[kk].value();
            n1[kk] += b.one_atom[kk].value();
            n2v[kk] += b.two_atom[kk].value();
            nh[kk] += b.homodyne[kk].value();
            nr[kk] += b.residual[kk].value();
            cnt[kk] += b.counts[kk];
        }
        den += b.den.value();
        den_cnt += b.den_count;
    }
    if (den_cnt == 0 || cnt[0] == 0 || den <= 0)
        throw insufficient_data_error("correlator: zero accumulated weight");

    double den_mean = den / static_cast<double>(den_cnt);
    double norm = 1.0 / (den_mean * den_mean);

    // per-batch curves for the standard error (batch means)
    G2Curve c;
    c.plateau = den_mean;
    int n_out = 2 * n_bins_ - 1;
    c.tau.resize(static_cast<size_t>(n_out));
    c.total.resize(static_cast<size_t>(n_out));
    c.one_atom.resize(static_cast<size_t>(n_out));
    c.two_atom.resize(static_cast<size_t>(n_out));
    c.homodyne.resize(static_cast<size_t>(n_out));
    c.residual.resize(static_cast<size_t>(n_out));
    c.stderr_total.resize(static_cast<size_t>(n_out));

    double max_dev = 0;
    for (int k = 0; k < n_bins_; ++k) {
        auto kk = static_cast<size_t>(k);
        double m = cnt[kk] > 0 ? 1.0 / static_cast<double>(cnt[kk]) : 0.0;
        double g = num[kk] * m * norm;
        double parts = (n1[kk] + n2v[kk] + nh[kk] + nr[kk]) * m * norm;
        double dev = std::abs(g - parts) /
                     std::max(std::abs(g), 1e-30);
        max_dev = std::max(max_dev, dev);

        // batch spread
        double mean_sum = 0, sq_sum = 0;
        int nb_eff = 0;
        for (auto& b : batches_) {
            if (b.counts[kk] == 0 || b.den_count == 0) continue;
            double dm = b.den.value() / static_cast<double>(b.den_count);
            if (dm <= 0) continue;
            double gb = b.total[kk].value() /
                        static_cast<double>(b.counts[kk]) / (dm * dm);
            mean_sum += gb;
            sq_sum += gb * gb;
            ++nb_eff;
        }
        double se = 0;
        if (nb_eff > 1) {
            double mb = mean_sum / nb_eff;
            double var = (sq_sum / nb_eff - mb * mb) / (nb_eff - 1);
            se = var > 0 ? std::sqrt(var) : 0.0;
        }

        int pos = n_bins_ - 1 + k, neg = n_bins_ - 1 - k;
        for (int at : {pos, neg}) {
            auto aa = static_cast<size_t>(at);
            c.tau[aa] = (at - (n_bins_ - 1)) * bin_width_;
            c.total[aa] = g;
            c.one_atom[aa] = n1[kk] * m * norm;
            c.two_atom[aa] = n2v[kk] * m * norm;
            c.homodyne[aa] = nh[kk] * m * norm;
            c.residual[aa] = nr[kk] * m * norm;
            c.stderr_total[aa] = se;
        }
    }
    c.decomposition_max_rel_dev = max_dev;
    return c;
}

std::string g2_csv(const G2Curve& c, const std::string& header_echo) {
    std::ostringstream os;
    os.precision(12);
    std::istringstream he(header_echo);
    std::string line;
    while (std::getline(he, line)) os << "# " << line << "\n";
    os << "tau_s,g2_total,g2_one_atom,g2_two_atom,g2_homodyne,g2_residual,"
          "stderr_total\n";
    for (size_t k = 0; k < c.tau.size(); ++k)
        os << c.tau[k] << ',' << c.total[k] << ',' << c.one_atom[k] << ','
           << c.two_atom[k] << ',' << c.homodyne[k] << ',' << c.residual[k]
           << ',' << c.stderr_total[k] << "\n";
    return os.str();
}

BeatFrequency beat_frequency(const std::vector<double>& tau,
                             const std::vector<double>& curve, double f_min) {
    BeatFrequency out;
    if (tau.size() < 8 || tau.size() != curve.size())
        throw insufficient_data_error("beat_frequency: curve too short");
    // use the non-negative-tau half (the curve is symmetric by construction)
    size_t first = 0;
    for (size_t i = 0; i < tau.size(); ++i)
        if (tau[i] >= -1e-15) {
            first = i;
            break;
        }
    std::vector<double> y(curve.begin() + static_cast<long>(first), curve.end());
    size_t n = y.size();
    if (n < 8) throw insufficient_data_error("beat_frequency: curve too short");
    double dt = tau[first + 1] - tau[first];

    double mean = 0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi *
                                        static_cast<double>(i) /
                                        static_cast<double>(n - 1));
        y[i] = (y[i] - mean) * w;
    }

    size_t nfft = 1;
    while (nfft < 8 * n) nfft <<= 1;
    std::vector<double> in(nfft, 0.0);
    std::copy(y.begin(), y.end(), in.begin());
    std::vector<fftw_complex> spec(nfft / 2 + 1);
    fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(nfft), in.data(),
                                          spec.data(), FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);

    double df = 1.0 / (static_cast<double>(nfft) * dt);
    size_t k_min = static_cast<size_t>(std::ceil(f_min / df));
    k_min = std::max<size_t>(k_min, 2);
    size_t k_hi = nfft / 2;
    std::vector<double> mag(k_hi + 1, 0.0);
    for (size_t k = 0; k <= k_hi; ++k)
        mag[k] = std::hypot(spec[k][0], spec[k][1]);

    size_t k_pk = k_min;
    for (size_t k = k_min; k < k_hi; ++k)
        if (mag[k] > mag[k_pk]) k_pk = k;

    // noise floor: median magnitude over the search band
    std::vector<double> band(mag.begin() + static_cast<long>(k_min),
                             mag.begin() + static_cast<long>(k_hi));
    std::nth_element(band.begin(), band.begin() + static_cast<long>(band.size() / 2),
                     band.end());
    double floor_mag = band[band.size() / 2];

    out.significant = mag[k_pk] >= 3.0 * floor_mag && mag[k_pk] > 0;

    // quadratic interpolation on log-magnitude
    double delta = 0.0, curv = 0.0;
    if (k_pk > 0 && k_pk < k_hi && mag[k_pk] > 0) {
        double la = std::log(std::max(mag[k_pk - 1], 1e-300));
        double lb = std::log(mag[k_pk]);
        double lc = std::log(std::max(mag[k_pk + 1], 1e-300));
        double denom = la - 2 * lb + lc;
        if (denom < 0) {
            delta = 0.5 * (la - lc) / denom;
            curv = -denom;
        }
    }
    out.frequency_hz = (static_cast<double>(k_pk) + delta) * df;
    // uncertainty from peak curvature and the noise-to-peak ratio; fall back
    // to one padded-grid bin
    if (curv > 0 && mag[k_pk] > 0) {
        double snr = mag[k_pk] / std::max(floor_mag, 1e-300);
        out.uncertainty_hz = df * std::max(0.5, 1.0 / (std::sqrt(curv) *
                                                        std::max(snr, 1.0)));
        out.uncertainty_hz = std::max(out.uncertainty_hz, df);
    } else {
        out.uncertainty_hz = df;
    }
    return out;
}

}  // namespace qbeats
