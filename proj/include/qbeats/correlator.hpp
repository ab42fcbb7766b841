#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qbeats/engine.hpp"

namespace qbeats {

// Neumaier compensated sum; merging adds (s, c) components in call order.
struct CompSum {
    double s = 0.0, c = 0.0;
    void add(double x) {
        double t = s + x;
        if (std::abs(s) >= std::abs(x))
            c += (s - t) + x;
        else
            c += (x - t) + s;
        s = t;
    }
    void merge(const CompSum& o) {
        add(o.s);
        add(o.c);
    }
    double value() const { return s + c; }
};

struct G2Curve {
    std::vector<double> tau;  // symmetric, -tau_max..tau_max
    std::vector<double> total, one_atom, two_atom, homodyne, residual;
    std::vector<double> stderr_total;
    double decomposition_max_rel_dev = 0.0;
    double plateau = 0.0;  // mean denominator (unconditional <D+D>)
};

/// Time-binned numerator/denominator sums for g2(tau), with the one-atom /
/// two-atom / homodyne / residual split.  Bins are spaced by bin_width and
/// sums are kept per batch so merged ensembles yield batch-mean errors.
class CorrelationAccumulator {
  public:
    CorrelationAccumulator(int n_bins, double bin_width, int n_batches = 16);

    int n_bins() const { return n_bins_; }
    double bin_width() const { return bin_width_; }
    int n_batches() const { return n_batches_; }

    void set_batch(int b) { batch_ = b % n_batches_; }

    virtual ~CorrelationAccumulator() = default;

    /// A sample was begun that can reach bins [0, reach).
    virtual void count_sample(int reach);
    virtual void add_sample_value(int bin, const SampleValue& v);
    virtual void add_denominator(double d);

    /// Exact summation merge; merge order must be canonical for bit-exact
    /// reproducibility (the ensemble runner merges in batch order).
    void merge(const CorrelationAccumulator& o);

    /// Normalized curves with symmetric extension to negative delays.
    /// Throws insufficient_data_error when no weight was accumulated.
    G2Curve finalize() const;

    int64_t samples_begun() const;

  private:
    struct Batch {
        std::vector<CompSum> total, one_atom, two_atom, homodyne, residual;
        std::vector<int64_t> counts;
        CompSum den;
        int64_t den_count = 0;
    };
    int n_bins_;
    double bin_width_;
    int n_batches_;
    int batch_ = 0;
    std::vector<Batch> batches_;
};

std::string g2_csv(const G2Curve& c, const std::string& header_echo);

struct BeatFrequency {
    double frequency_hz = 0.0;
    double uncertainty_hz = 0.0;
    bool significant = false;  // peak >= 3x spectral noise floor
};

/// Dominant spectral peak of the mean-subtracted, Hann-tapered curve via FFT
/// with quadratic peak interpolation.  Frequencies below f_min are treated
/// as envelope background and excluded from the search.
BeatFrequency beat_frequency(const std::vector<double>& tau,
                             const std::vector<double>& curve,
                             double f_min = 0.5e6);

}  // namespace qbeats
