#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles/cg_recursion.hpp"
#include "qbeats/angmom.hpp"

using namespace qbeats;

TEST_CASE("clebsch_gordan: stretched state and selection rules") {
    CHECK(clebsch_gordan(3, 3, +1, 4) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(clebsch_gordan(3, 0, 0, 4) ==
          doctest::Approx(std::sqrt(4.0 / 7.0)).epsilon(1e-13));
    CHECK(clebsch_gordan(3, 3, +1, 3) == 0.0);  // |m+q| > Fe
    CHECK_THROWS_AS(clebsch_gordan(3, 4, 0, 4), std::domain_error);
    CHECK_THROWS_AS(clebsch_gordan(-1, 0, 0, 0), std::domain_error);
    CHECK_THROWS_AS(clebsch_gordan(3, 0, 0, 5), std::domain_error);
}

TEST_CASE("clebsch_gordan matches ladder-recursion oracle for all F <= 5") {
    for (int Fg = 0; Fg <= 5; ++Fg) {
        for (int Fe = std::max(0, Fg - 1); Fe <= std::min(5, Fg + 1); ++Fe) {
            if (Fg == 0 && Fe == 0) continue;
            for (int m = -Fg; m <= Fg; ++m) {
                for (int q = -1; q <= 1; ++q) {
                    if (std::abs(m + q) > Fe) continue;
                    double lib = clebsch_gordan(Fg, m, q, Fe);
                    double ora = cg_oracle::cg(2 * Fg, 2 * m, 2, 2 * q, 2 * Fe,
                                               2 * (m + q));
                    CHECK(lib == doctest::Approx(ora).epsilon(1e-12));
                }
            }
        }
    }
    // spot-check half-integer support of the general routine
    double v = clebsch_gordan_2j(1, 1, 1, -1, 2, 0);  // <1/2 1/2;1/2 -1/2|1 0>
    CHECK(v == doctest::Approx(std::sqrt(0.5)).epsilon(1e-14));
}

TEST_CASE("clebsch_gordan reflection symmetry") {
    for (int Fg = 1; Fg <= 5; ++Fg) {
        for (int Fe = Fg - 1; Fe <= std::min(5, Fg + 1); ++Fe) {
            if (Fe < 0) continue;
            double sign = ((Fg + 1 - Fe) % 2 == 0) ? 1.0 : -1.0;
            for (int m = -Fg; m <= Fg; ++m)
                for (int q = -1; q <= 1; ++q) {
                    if (std::abs(m + q) > Fe) continue;
                    CHECK(clebsch_gordan(Fg, -m, -q, Fe) ==
                          doctest::Approx(sign * clebsch_gordan(Fg, m, q, Fe))
                              .epsilon(1e-12));
                }
        }
    }
}

TEST_CASE("closed-transition branching ratios sum to one") {
    auto s = LevelScheme::make(3, 4, 5, 2.002, 4.0 / 3.0);
    for (int me = -4; me <= 4; ++me) {
        double sum = 0.0;
        for (int q = -1; q <= 1; ++q) {
            int mg = me - q;
            if (std::abs(mg) > 3) continue;
            double c = s.cg_raw(mg, q);
            sum += c * c;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("lande_gF known values") {
    // 85Rb 5S1/2 F=3: gJ = 2.002 -> ~1/3
    CHECK(lande_gF(3, 0.5, 2.5, 2.002) ==
          doctest::Approx(2.002 / 6.0).epsilon(1e-12));
    // 85Rb 5P3/2 F'=4: gJ = 4/3 -> 1/2
    CHECK(lande_gF(4, 1.5, 2.5, 4.0 / 3.0) ==
          doctest::Approx(0.5).epsilon(1e-12));
    // F = J, I = 0, gJ = 2 -> 2
    CHECK(lande_gF(2, 2.0, 0.0, 2.0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK_THROWS_AS(lande_gF(0, 0.5, 0.5, 2.0), std::domain_error);
    CHECK_THROWS_AS(lande_gF(5, 0.5, 2.5, 2.0), std::domain_error);
}

TEST_CASE("zeeman_detunings values and linearity") {
    auto s = LevelScheme::make(3, 4, 5, 2.0, 4.0 / 3.0);  // gF_ground = 1/3
    CHECK(s.gF_ground == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(s.gF_excited == doctest::Approx(0.5).epsilon(1e-12));

    auto z0 = zeeman_detunings(0.0, s);
    CHECK(z0.delta_g == 0.0);
    CHECK(z0.delta_e == 0.0);
    CHECK(z0.Delta == 0.0);

    auto z5 = zeeman_detunings(5.0, s);
    double two_pi = 2 * std::numbers::pi;
    CHECK(z5.delta_g / two_pi / 1e6 ==
          doctest::Approx(2.3327).epsilon(1e-3));  // ~2.333 MHz
    CHECK(2 * z5.delta_g / two_pi / 1e6 ==
          doctest::Approx(4.6654).epsilon(1e-3));  // beat prediction

    auto z4 = zeeman_detunings(4.0, s);
    CHECK(z4.delta_g / two_pi / 1e6 == doctest::Approx(1.8662).epsilon(1e-3));

    auto z10 = zeeman_detunings(10.0, s);
    CHECK(z10.delta_g == doctest::Approx(2 * z5.delta_g).epsilon(1e-15));
    CHECK(z10.delta_e == doctest::Approx(2 * z5.delta_e).epsilon(1e-15));
    CHECK(z10.Delta == doctest::Approx(2 * z5.Delta).epsilon(1e-15));
    CHECK(z5.Delta == doctest::Approx(z5.delta_e - z5.delta_g).epsilon(1e-15));

    CHECK_THROWS_AS(zeeman_detunings(-1.0, s), std::domain_error);
}

TEST_CASE("cg table normalization convention") {
    auto s = LevelScheme::make(3, 4, 5, 2.002, 4.0 / 3.0);
    CHECK(s.cg_norm(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.cg_raw(0, 0) ==
          doctest::Approx(std::sqrt(4.0 / 7.0)).epsilon(1e-13));
    // amplitudes with |m+q| > Fe vanish
    CHECK(s.cg_raw(3, 1) == doctest::Approx(clebsch_gordan(3, 3, 1, 4)));
    CHECK(s.cg_raw(-3, -1) == doctest::Approx(clebsch_gordan(3, -3, -1, 4)));
}
