#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "qbeats/params.hpp"

namespace qbeats {

using cplx = std::complex<double>;

// One (ground, excited) amplitude pair at a single Zeeman manifold.
struct AmpPair {
    cplx g{0.0, 0.0};
    cplx e{0.0, 0.0};
};

// Block shapes, manifolds relative to the atom's center m_i:
//   a  : {c}              0 H photons
//   a1 : {c-1, c+1}       1 H photon   (index 0 -> c-1, 1 -> c+1)
//   a2 : {c-2, c, c+2}    2 H photons  (index 0 -> c-2, 1 -> c, 2 -> c+2)
//   a3 : {c-3,c-1,c+1,c+3} 3 H photons, only when h_truncation = 3
// b1/b2 are the conditional counterparts of a1/a2, one set per live sample.
struct AtomInstance {
    int64_t id = 0;
    std::array<double, 3> position{};  // x: cavity axis, y,z: transverse; beam along z
    std::array<double, 3> velocity{};
    int m_center = 0;
    int sigma_ledger = 0;  // initial m + (#sigma-) - (#sigma+), checked per jump

    AmpPair a;
    std::array<AmpPair, 2> a1;
    std::array<AmpPair, 3> a2;
    std::array<AmpPair, 4> a3;

    // conditional blocks, indexed by sample slot
    std::vector<std::array<AmpPair, 2>> b1;
    std::vector<std::array<AmpPair, 3>> b2;

    double coupling = 0.0;  // g_i at current position (signed), rad/s
};

struct JumpEvent {
    enum class Kind {
        spontaneous_pi,
        spontaneous_sigma_plus,
        spontaneous_sigma_minus,
        cavity_H_emission
    };
    Kind kind;
    std::optional<int64_t> atom_id;  // present iff spontaneous
    double time = 0.0;
};

// Per-step emission probabilities, one entry per open channel.
struct ChannelProbabilities {
    struct Entry {
        JumpEvent::Kind kind;
        int atom_index;  // -1 for cavity
        double probability;
    };
    std::vector<Entry> entries;
    double total = 0.0;
};

// Norm bookkeeping of the non-Hermitian generator, all in 1/s relative to
// the current normalized state:
//   d(norm^2)/dt = -(gamma_loss + cavity_loss - source_feed) * norm^2
struct NormRates {
    double gamma_loss = 0.0;   // sum of spontaneous channel rates
    double cavity_loss = 0.0;  // 2 kappa <b+b>
    double source_feed = 0.0;  // norm gain of the triangular H-mode source
    double total_loss() const { return gamma_loss + cavity_loss - source_feed; }
};

struct SectorNorms {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;  // squared sector norms
    double total() const { return s0 + s1 + s2 + s3; }
    double photons() const { return s1 + 2 * s2 + 3 * s3; }
};

// Per-sample channel contributions of || (b + beta) S ||^2.
struct SampleValue {
    double one_atom = 0.0;
    double two_atom = 0.0;
    double homodyne = 0.0;
    double residual = 0.0;
    double total = 0.0;  // accumulated as ((one+two)+homo)+res per evaluation
};

class CorrelationAccumulator;

struct TickRecord {
    double time;
    double h_photons;     // <b+b>
    double det_rate;      // <D+D> = <b+b> + |beta|^2, dimensionless
    double v_photons;     // |alpha_V|^2
    int n_atoms;
};

/// Monte-Carlo quantum trajectory over the truncated atom (x) H-mode
/// expansion.  Strictly sequential and deterministic for a given seed.
class TrajectoryEngine {
  public:
    TrajectoryEngine(const Params& p, uint64_t seed);

    // --- low-level pieces, used directly by tests ---

    /// Insert an atom by hand (bypasses the beam).  Ground state |g_m>.
    AtomInstance& place_atom(std::array<double, 3> pos,
                             std::array<double, 3> vel, int m);

    /// One RK4 step of the non-Hermitian evolution (no jump draw).  Returns
    /// the per-channel emission probabilities for the elapsed step.
    ChannelProbabilities evolve_step(double dt);

    /// Apply a jump.  For spontaneous kinds atom_index selects the atom and
    /// the manifold shift follows m -> m - q.  Renormalizes the state.
    void apply_jump(JumpEvent::Kind kind, int atom_index);

    /// Beam bookkeeping over dt: motion is handled by evolve_step; this
    /// processes departures and Poisson arrivals.
    void beam_update(double dt);

    // --- full trajectory ---

    /// Run for params.run.duration, accumulating into corr (may be null)
    /// after params.run.warmup.  Tick observer and event log optional.
    void run(CorrelationAccumulator* corr,
             const std::function<void(const TickRecord&)>& observer = {},
             std::ostream* event_log = nullptr);

    // --- introspection ---
    SectorNorms sector_norms() const;
    NormRates norm_rates() const;
    double norm2() const;              // squared norm of the stored state
    double h_photons() const;          // <b+b> of the normalized state
    double det_rate() const;           // <D+D> with the background included
    double v_photons() const { return std::norm(v_amplitude_); }
    cplx v_amplitude() const { return v_amplitude_; }
    double time() const { return time_; }
    const std::vector<AtomInstance>& atoms() const { return atoms_; }
    std::vector<AtomInstance>& atoms_mutable() { return atoms_; }
    int64_t dropped_arrivals() const { return dropped_arrivals_; }
    int64_t total_arrivals() const { return total_arrivals_; }

    /// Refresh couplings and the quasi-static V amplitude (called by
    /// evolve_step; exposed for tests that build states by hand).
    void refresh_drive();

    /// Divide the physical state by scale; a jump's normalization is
    /// attributed to the jumped atom, drift renormalization is spread evenly.
    void renormalize(double scale, int atom_index = -1);

    // sample machinery, used by the correlator and by tests
    int n_sample_slots() const { return n_slots_; }
    void begin_sample_in_slot(int slot);
    SampleValue evaluate_sample(int slot) const;
    double sample_weight(int slot) const { return slot_weight_[slot]; }
    bool sample_live(int slot) const { return slot_live_[slot]; }
    void kill_sample(int slot);
    void propagate_samples(double T);  // frozen-coefficient advance of b-blocks

    uint64_t rng_uniform_count() const { return rng_calls_; }

  private:
    struct Mat2 {  // 2x2 complex
        cplx m00, m01, m10, m11;
    };
    struct AtomScratch {
        // per-manifold generators, manifold m = c + d at index d+3, plus the
        // sigma source weights of the photon chain
        std::array<Mat2, 7> gen;
        std::array<double, 2> w1{};
        std::array<double, 4> w2{};
        std::array<double, 6> w3{};
        double g_mid = 0.0;
    };

    double uniform();
    double normal();

    void rebuild_couplings(double at_offset);
    void update_v_amplitude();
    Mat2 manifold_generator(const AtomInstance& at, int m_abs, cplx omega) const;
    void derivative(const AtomInstance& at, const AtomScratch& sc,
                    const std::vector<AmpPair>& y, std::vector<AmpPair>& dy) const;

    void compute_overlaps() const;   // per-atom scalars into scratch
    void spont_channel_rates(std::vector<ChannelProbabilities::Entry>& out) const;
    void apply_spontaneous(int atom_index, int q);
    void apply_cavity_emission();
    void process_departures(std::ostream* event_log);
    void process_arrivals(std::ostream* event_log);
    void log_event(std::ostream* log, const char* kind, int64_t id) const;

    const Params p_;
    LevelScheme scheme_;
    double kappa_, gamma_, delta_g_, delta_e_, detuning_, bire_;
    cplx beta_;
    double E_drive_;  // kappa * sqrt(v_photons_empty)
    int trunc_;
    double sw_k_;  // 2 pi / lambda, 0 when standing wave disabled

    std::vector<AtomInstance> atoms_;
    cplx v_amplitude_{0.0, 0.0};
    double time_ = 0.0;
    int64_t next_id_ = 1;

    uint64_t rng_state_;
    uint64_t rng_calls_ = 0;
    double next_arrival_ = -1.0;
    double arrival_rate_ = 0.0;
    int64_t dropped_arrivals_ = 0;
    int64_t total_arrivals_ = 0;

    // sample ring
    int n_slots_ = 0;
    std::vector<char> slot_live_;
    std::vector<double> slot_weight_;   // w at sample start
    std::vector<double> slot_dead_w_;   // frozen departed-atom weight
    std::vector<cplx> slot_beta0_;      // background amplitude at start
    std::vector<int> slot_age_bins_;

    // scratch for overlap machinery, cached between state mutations
    mutable bool ov_valid_ = false;
    mutable std::vector<double> ov_n_, ov_p_, ov_q_, ov_r3_;
    mutable std::vector<cplx> ov_v_, ov_y_;
    double last_norm2_ = -1.0;

    friend class CorrelationAccumulator;
    friend struct EngineTestAccess;
};

}  // namespace qbeats
