#pragma once

#include <array>
#include <stdexcept>

namespace qbeats {

// Bohr magneton over Planck constant, MHz per gauss.
inline constexpr double mu_B_over_h_MHz_per_G = 1.399624;

/// Clebsch-Gordan coefficient <j1 m1; j2 m2 | J M> in the Condon-Shortley
/// convention.  Arguments are twice the angular momenta / projections so
/// half-integer values are exact (e.g. j = 3/2 -> two_j = 3).
/// Returns 0 for any combination violating the selection rules.
double clebsch_gordan_2j(int two_j1, int two_m1, int two_j2, int two_m2,
                         int two_J, int two_M);

/// <Fg m; 1 q | Fe m+q> for a dipole transition between integer F manifolds.
/// q in {-1, 0, +1}.  Throws std::domain_error for invalid quantum numbers
/// (negative F, |m| > Fg, |Fe-Fg| > 1); returns 0 when |m+q| > Fe.
double clebsch_gordan(int Fg, int m, int q, int Fe);

/// Lande g-factor of a hyperfine level F built from electronic J and nuclear
/// spin I, neglecting the nuclear magneton term:
///   gF = gJ [F(F+1) + J(J+1) - I(I+1)] / [2 F(F+1)]
/// J and I may be half-integer.  Throws std::domain_error for F = 0 or a
/// violated triangle rule.
double lande_gF(int F, double J, double I, double gJ);

struct LevelScheme {
    int Fg = 3;
    int Fe = 4;
    int two_I = 5;               // nuclear spin x2
    double gF_ground = 0.0;      // dimensionless Lande factors
    double gF_excited = 0.0;

    // cg_raw(m, q): bare <Fg m; 1 q | Fe m+q>, used for spontaneous-emission
    // branching.  cg_norm = cg_raw / cg_raw(0,0), used for mode couplings so
    // the quoted g applies directly to the m=0 -> m'=0 pi transition.
    double cg_raw(int m, int q) const {
        if (m < -Fg || m > Fg) return 0.0;
        return raw_[static_cast<size_t>(m + Fg)][static_cast<size_t>(q + 1)];
    }
    double cg_norm(int m, int q) const {
        if (m < -Fg || m > Fg) return 0.0;
        return norm_[static_cast<size_t>(m + Fg)][static_cast<size_t>(q + 1)];
    }

    int n_ground() const { return 2 * Fg + 1; }
    int n_excited() const { return 2 * Fe + 1; }

    static LevelScheme make(int Fg, int Fe, int two_I, double gJ_ground,
                            double gJ_excited);

  private:
    // tables indexed [m + Fg][q + 1]
    std::array<std::array<double, 3>, 11> raw_{};
    std::array<std::array<double, 3>, 11> norm_{};
    double raw00_ = 1.0;
};

struct ZeemanSplitting {
    double delta_g = 0.0;  // rad/s per unit m, ground manifold
    double delta_e = 0.0;  // rad/s per unit m, excited manifold
    double Delta = 0.0;    // delta_e - delta_g
};

/// Zeeman detunings for a magnetic field B (gauss).  Linear Zeeman only.
ZeemanSplitting zeeman_detunings(double B_gauss, const LevelScheme& s);

}  // namespace qbeats
