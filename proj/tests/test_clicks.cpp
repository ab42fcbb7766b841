#include <doctest.h>

#include <cmath>
#include <sstream>

#include "qbeats/clicks.hpp"
#include "qbeats/params.hpp"

using namespace qbeats;

TEST_CASE("synthesize: zero flux gives empty streams") {
    FluxTrace f;
    f.dt = 1e-8;
    f.rate.assign(1000, 0.0);
    auto s = synthesize_clicks(f, {}, 42);
    CHECK(s.ch0.empty());
    CHECK(s.ch1.empty());
    CHECK(s.duration == doctest::Approx(999e-8));
}

TEST_CASE("synthesize: constant flux gives Poisson counts at the right rate") {
    FluxTrace f;
    f.dt = 1e-7;
    double R = 2e6;
    double T = 0.05;
    f.rate.assign(static_cast<size_t>(T / f.dt) + 1, R);
    SynthesisOptions o;
    o.efficiency = 1.0;
    auto s = synthesize_clicks(f, o, 7);
    double expected = R * s.duration;
    double tol = 3 * std::sqrt(expected);
    CHECK(std::abs(static_cast<double>(s.total()) - expected) < tol);
    // halves split evenly
    CHECK(std::abs(static_cast<double>(s.ch0.size()) -
                   static_cast<double>(s.ch1.size())) <
          3 * std::sqrt(expected));
    // efficiency thins linearly
    o.efficiency = 0.25;
    auto s2 = synthesize_clicks(f, o, 7);
    CHECK(std::abs(static_cast<double>(s2.total()) - 0.25 * expected) <
          3 * std::sqrt(0.25 * expected));
    // monotone ticks within channels
    for (size_t k = 1; k < s.ch0.size(); ++k) CHECK(s.ch0[k] >= s.ch0[k - 1]);
}

TEST_CASE("binary and text round trips with validation") {
    ClickStreams s;
    s.ch0 = {100, 250, 250, 900};
    s.ch1 = {50, 400};
    s.duration = 900 * kTickSeconds;

    SUBCASE("binary") {
        std::ostringstream os(std::ios::binary);
        write_clicks_binary(os, s);
        std::istringstream is(os.str(), std::ios::binary);
        auto r = parse_timestamps(is);
        CHECK(r.ch0 == s.ch0);
        CHECK(r.ch1 == s.ch1);
    }
    SUBCASE("text") {
        std::ostringstream os;
        write_clicks_text(os, s);
        std::istringstream is(os.str());
        auto r = parse_timestamps(is);
        CHECK(r.ch0 == s.ch0);
        CHECK(r.ch1 == s.ch1);
    }
    SUBCASE("crafted three-click text file") {
        std::istringstream is("0 10\n1 20\n0 30\n");
        auto r = parse_timestamps(is);
        REQUIRE(r.ch0.size() == 2);
        REQUIRE(r.ch1.size() == 1);
        CHECK(r.ch0[0] == 10);
        CHECK(r.ch1[0] == 20);
        CHECK(r.ch0[1] == 30);
    }
    SUBCASE("tick regression is a format error naming the record") {
        std::istringstream is("0 10\n0 5\n");
        CHECK_THROWS_WITH_AS(parse_timestamps(is),
                             doctest::Contains("regression"), config_error);
    }
    SUBCASE("unknown channel") {
        std::istringstream is("3 10\n");
        CHECK_THROWS_WITH_AS(parse_timestamps(is),
                             doctest::Contains("channel"), config_error);
    }
    SUBCASE("empty file parses to empty streams") {
        std::istringstream is("");
        auto r = parse_timestamps(is);
        CHECK(r.total() == 0);
    }
}

TEST_CASE("estimate_g2: independent Poisson streams are flat at 1") {
    FluxTrace f;
    f.dt = 1e-7;
    f.rate.assign(200001, 1e6);  // 20 ms at 1 MHz
    auto s = synthesize_clicks(f, {}, 99);
    auto h = estimate_g2(s, 20e-9, 1e-6);
    REQUIRE(h.tau.size() >= 50);
    double mean = 0;
    for (size_t k = 0; k < h.g2.size(); ++k) {
        mean += h.g2[k];
        CHECK(std::abs(h.g2[k] - 1.0) < 4 * std::max(h.g2_err[k], 1e-3));
    }
    mean /= static_cast<double>(h.g2.size());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("estimate_g2: periodic pulse train gives a comb") {
    // clicks at exact multiples of T in both channels
    ClickStreams s;
    uint64_t period_ticks = 6098;  // ~1 us
    double T = static_cast<double>(period_ticks) * kTickSeconds;
    int n = 20000;
    for (int k = 0; k < n; ++k) {
        s.ch0.push_back(static_cast<uint64_t>(k) * period_ticks);
        s.ch1.push_back(static_cast<uint64_t>(k) * period_ticks);
    }
    s.duration = static_cast<double>(n) * T;
    auto h = estimate_g2(s, 50e-9, 3.2e-6);
    // peaks at multiples of T including tau = 0, zero elsewhere
    for (size_t k = 0; k < h.tau.size(); ++k) {
        double frac = std::abs(std::remainder(h.tau[k], T));
        if (frac < 25e-9) {
            CHECK(h.counts[k] > 0);
        } else {
            CHECK(h.counts[k] == 0);
        }
    }
    // analytic comb height: bin at lag j*T holds n - |j| coincidences
    auto mid = h.counts.size() / 2;
    CHECK(h.counts[mid] == static_cast<uint64_t>(n));
}

TEST_CASE("estimate_g2: channel swap reflects the histogram") {
    FluxTrace f;
    f.dt = 1e-7;
    f.rate.assign(50001, 2e6);
    auto s = synthesize_clicks(f, {}, 5);
    auto h = estimate_g2(s, 40e-9, 0.8e-6);
    ClickStreams swapped;
    swapped.ch0 = s.ch1;
    swapped.ch1 = s.ch0;
    swapped.duration = s.duration;
    auto h2 = estimate_g2(swapped, 40e-9, 0.8e-6);
    size_t n = h.counts.size();
    for (size_t k = 0; k < n; ++k) CHECK(h.counts[k] == h2.counts[n - 1 - k]);
}

TEST_CASE("estimate_g2 error paths") {
    ClickStreams s;
    s.ch0 = {1, 2};
    s.duration = 1.0;
    CHECK_THROWS_AS(estimate_g2(s, 1e-8, 1e-6), insufficient_data_error);
    s.ch1 = {3};
    CHECK_THROWS_AS(estimate_g2(s, 0.0, 1e-6), config_error);
}

TEST_CASE("synthesized bunched source: estimator converges to the input g2") {
    // flux with exponential bursts has a known g2 enhancement; instead of an
    // analytic curve, check estimator consistency across durations: the
    // deviation from the long-run estimate shrinks like 1/sqrt(T)
    auto make_flux = [&](double T) {
        FluxTrace f;
        f.dt = 5e-8;
        size_t n = static_cast<size_t>(T / f.dt) + 1;
        f.rate.resize(n);
        for (size_t k = 0; k < n; ++k) {
            double t = static_cast<double>(k) * f.dt;
            f.rate[k] = 1.5e6 * (1.0 + 0.8 * std::sin(2e6 * t) *
                                           std::sin(1.3e5 * t));
        }
        return f;
    };
    auto g2_at = [&](double T, uint64_t seed, double tau) {
        auto s = synthesize_clicks(make_flux(T), {}, seed);
        auto h = estimate_g2(s, 50e-9, 2e-6);
        size_t mid = h.tau.size() / 2;
        auto bin = mid + static_cast<size_t>(std::llround(tau / 50e-9));
        return h.g2[bin];
    };
    double ref = g2_at(2.0, 1, 0.0);
    double d_short = 0, d_long = 0;
    int reps = 4;
    for (int r = 0; r < reps; ++r) {
        d_short += std::pow(g2_at(0.02, 100 + static_cast<uint64_t>(r), 0.0) - ref, 2);
        d_long += std::pow(g2_at(0.32, 200 + static_cast<uint64_t>(r), 0.0) - ref, 2);
    }
    d_short = std::sqrt(d_short / reps);
    d_long = std::sqrt(d_long / reps);
    // 16x duration -> ~4x smaller scatter; allow generous slack
    CHECK(d_long < 0.6 * d_short);
}
