#pragma once

#include <complex>
#include <vector>

namespace qbeats {

// Closed-form single-atom model of the two-path ground-state beat: one atom
// pumped to |g_m>, one H photon detected, the |g_{m-1}>,|g_{m+1}> coherence
// precessing and re-excited by the pi drive.  Used as an analytic reference
// for the full simulation's one-atom channel.
struct IdealBeatParams {
    double delta_g = 0.0;   // rad/s
    double delta_e = 0.0;   // rad/s
    double Delta = 0.0;     // delta_e - delta_g
    double gamma = 0.0;     // rad/s
    double cg_minus = 1.0;  // effective weight of the m-1 path
    double cg_plus = 1.0;   // effective weight of the m+1 path
    int m = 0;              // center sublevel
    double detuning = 0.0;  // drive-atom detuning, rad/s
};

/// Larmor phase phi(tau) = delta_g * tau.
double precession_phase(double tau, double delta_g);

/// The sustained excited-state pair
///   ( cg_minus e^{+i delta_g tau} / (gamma - i ((m-1)Delta + detuning)),
///     cg_plus  e^{-i delta_g tau} / (gamma + i ((m+1)Delta + detuning)) )
std::pair<std::complex<double>, std::complex<double>>
excited_superposition(double tau, const IdealBeatParams& p);

struct IdealCurve {
    std::vector<double> tau;
    std::vector<double> one_atom;  // envelope * (1 + V cos(2 delta_g tau + theta))
    double visibility = 0.0;
    double theta = 0.0;
};

/// Same-atom coincidence shape on the given grid: Gaussian transit envelope
/// times the two-path interference of the common-ground-state channel.
/// This is the small-nbar limit of the full simulation's one-atom channel.
IdealCurve ideal_g2_shape(const std::vector<double>& tau_grid,
                          const IdealBeatParams& p, double transit_sigma);

}  // namespace qbeats
