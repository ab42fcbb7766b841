#include "qbeats/angmom.hpp"

#include <cmath>
#include <numbers>

namespace qbeats {

namespace {

// Exact factorials up to 20! fit in double without rounding.
double factorial(int n) {
    static const auto table = [] {
        std::array<double, 33> t{};
        t[0] = 1.0;
        for (int i = 1; i < 33; ++i) t[i] = t[i - 1] * i;
        return t;
    }();
    return table[static_cast<size_t>(n)];
}

}  // namespace

double clebsch_gordan_2j(int two_j1, int two_m1, int two_j2, int two_m2,
                         int two_J, int two_M) {
    if (two_j1 < 0 || two_j2 < 0 || two_J < 0) return 0.0;
    if (two_m1 + two_m2 != two_M) return 0.0;
    if (std::abs(two_m1) > two_j1 || std::abs(two_m2) > two_j2 ||
        std::abs(two_M) > two_J)
        return 0.0;
    if (two_J < std::abs(two_j1 - two_j2) || two_J > two_j1 + two_j2)
        return 0.0;
    // parity: j and m must be both integer or both half-integer
    if ((two_j1 + two_m1) % 2 != 0 || (two_j2 + two_m2) % 2 != 0 ||
        (two_J + two_M) % 2 != 0)
        return 0.0;
    if ((two_j1 + two_j2 + two_J) % 2 != 0) return 0.0;
    // stretched states are exactly 1
    if (two_J == two_j1 + two_j2 &&
        (two_M == two_J || two_M == -two_J) &&
        std::abs(two_m1) == two_j1 && std::abs(two_m2) == two_j2)
        return 1.0;

    // Racah's closed form.  All arguments below are true integers.
    const int a = (two_j1 + two_j2 - two_J) / 2;
    const int b = (two_j1 - two_j2 + two_J) / 2;
    const int c = (-two_j1 + two_j2 + two_J) / 2;
    const int d = (two_j1 + two_j2 + two_J) / 2 + 1;

    const int j1pm1 = (two_j1 + two_m1) / 2;
    const int j1nm1 = (two_j1 - two_m1) / 2;
    const int j2pm2 = (two_j2 + two_m2) / 2;
    const int j2nm2 = (two_j2 - two_m2) / 2;
    const int JpM = (two_J + two_M) / 2;
    const int JnM = (two_J - two_M) / 2;

    const double pref = std::sqrt(
        (two_J + 1.0) * factorial(a) * factorial(b) * factorial(c) /
        factorial(d) * factorial(j1pm1) * factorial(j1nm1) *
        factorial(j2pm2) * factorial(j2nm2) * factorial(JpM) * factorial(JnM));

    const int k1 = (two_j1 + two_j2 - two_J) / 2;            // a
    const int k2 = j1nm1;                                     // j1 - m1
    const int k3 = j2pm2;                                     // j2 + m2
    const int k4 = (two_J - two_j2 + two_m1) / 2;             // J - j2 + m1
    const int k5 = (two_J - two_j1 - two_m2) / 2;             // J - j1 - m2

    int kmin = std::max(0, std::max(-k4, -k5));
    int kmax = std::min(k1, std::min(k2, k3));
    double sum = 0.0;
    for (int k = kmin; k <= kmax; ++k) {
        double term = factorial(k) * factorial(k1 - k) * factorial(k2 - k) *
                      factorial(k3 - k) * factorial(k4 + k) * factorial(k5 + k);
        sum += ((k % 2) ? -1.0 : 1.0) / term;
    }
    return pref * sum;
}

double clebsch_gordan(int Fg, int m, int q, int Fe) {
    if (Fg < 0 || Fe < 0 || std::abs(m) > Fg)
        throw std::domain_error("clebsch_gordan: invalid quantum numbers");
    if (std::abs(Fe - Fg) > 1 || (Fg == 0 && Fe == 0))
        throw std::domain_error("clebsch_gordan: |Fe-Fg| must be <= 1 and not 0->0");
    if (q < -1 || q > 1)
        throw std::domain_error("clebsch_gordan: q must be in {-1,0,+1}");
    if (std::abs(m + q) > Fe) return 0.0;
    return clebsch_gordan_2j(2 * Fg, 2 * m, 2, 2 * q, 2 * Fe, 2 * (m + q));
}

double lande_gF(int F, double J, double I, double gJ) {
    if (F == 0)
        throw std::domain_error("lande_gF: F=0 has no per-m Zeeman splitting");
    if (F < 0 || J < 0 || I < 0)
        throw std::domain_error("lande_gF: negative angular momentum");
    if (F < std::abs(J - I) - 1e-9 || F > J + I + 1e-9)
        throw std::domain_error("lande_gF: F violates triangle rule with J, I");
    const double ff = F * (F + 1.0);
    return gJ * (ff + J * (J + 1.0) - I * (I + 1.0)) / (2.0 * ff);
}

LevelScheme LevelScheme::make(int Fg, int Fe, int two_I, double gJ_ground,
                              double gJ_excited) {
    if (Fg < 0 || Fe < 0 || std::abs(Fe - Fg) > 1 || (Fg == 0 && Fe == 0))
        throw std::domain_error("LevelScheme: invalid Fg/Fe");
    if (Fg > 5 || Fe > 5)
        throw std::domain_error("LevelScheme: F > 5 not supported");
    LevelScheme s;
    s.Fg = Fg;
    s.Fe = Fe;
    s.two_I = two_I;
    const double I = two_I / 2.0;
    // Fg and Fe are assumed to come from J = 1/2 (ground) and J = 3/2
    // (excited) alkali D2 manifolds when gJ values are supplied.  F = 0 has
    // a single sublevel and no per-m splitting.
    s.gF_ground = Fg == 0 ? 0.0 : lande_gF(Fg, 0.5, I, gJ_ground);
    s.gF_excited = Fe == 0 ? 0.0 : lande_gF(Fe, 1.5, I, gJ_excited);
    for (int m = -Fg; m <= Fg; ++m)
        for (int q = -1; q <= 1; ++q)
            s.raw_[static_cast<size_t>(m + Fg)][static_cast<size_t>(q + 1)] =
                (std::abs(m + q) > Fe)
                    ? 0.0
                    : clebsch_gordan_2j(2 * Fg, 2 * m, 2, 2 * q, 2 * Fe,
                                        2 * (m + q));
    s.raw00_ = s.cg_raw(0, 0);
    if (s.raw00_ == 0.0)
        throw std::domain_error("LevelScheme: m=0 -> m'=0 pi transition vanishes");
    for (int m = -Fg; m <= Fg; ++m)
        for (int q = -1; q <= 1; ++q)
            s.norm_[static_cast<size_t>(m + Fg)][static_cast<size_t>(q + 1)] =
                s.raw_[static_cast<size_t>(m + Fg)][static_cast<size_t>(q + 1)] /
                s.raw00_;
    return s;
}

ZeemanSplitting zeeman_detunings(double B_gauss, const LevelScheme& s) {
    if (B_gauss < 0)
        throw std::domain_error("zeeman_detunings: B must be >= 0");
    const double two_pi = 2.0 * std::numbers::pi;
    ZeemanSplitting z;
    z.delta_g = two_pi * s.gF_ground * mu_B_over_h_MHz_per_G * 1e6 * B_gauss;
    z.delta_e = two_pi * s.gF_excited * mu_B_over_h_MHz_per_G * 1e6 * B_gauss;
    z.Delta = z.delta_e - z.delta_g;
    return z;
}

}  // namespace qbeats
