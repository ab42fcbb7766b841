#pragma once

#include <complex>
#include <map>
#include <stdexcept>
#include <string>

#include "qbeats/angmom.hpp"

namespace qbeats {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct insufficient_data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TransitionParams {
    int Fg = 3;
    int Fe = 4;
    int two_I = 5;
    double gJ_ground = 2.002;
    double gJ_excited = 4.0 / 3.0;
    double lambda = 780.241e-9;  // m
};

struct CavityParams {
    double kappa = 0.0;               // field decay rate of H mode, rad/s
    double gamma = 0.0;               // excited-state linewidth, rad/s
    double g_max = 0.0;               // max dipole coupling, rad/s
    double waist = 0.0;               // TEM00 mode waist, m
    double length = 0.0;              // cavity length, m
    double birefringence_split = 0.0; // polarization mode splitting, rad/s
};

struct BeamParams {
    double mean_speed = 22.0;     // m/s
    double speed_sigma = 0.0;     // m/s, 0 = monochromatic
    double nbar = 0.2;            // effective maximally coupled atom number
    double tilt = 0.0;            // rad
    double pump_fidelity = 1.0;
    double entry_halfwidth = 3.0; // transverse entry half-width, waists
    double exit_halflength = 3.0; // axial (beam direction) half-span, waists
    bool standing_wave = true;
};

struct FieldParams {
    double B_gauss = 5.0;
    double sigma_asymmetry = 0.0;  // detection-ellipticity knob (misalignment)
};

struct DriveParams {
    double v_photons_empty = 2.5;   // mean V photons, empty cavity
    double detuning = 0.0;          // laser - atom, rad/s
    bool absorption_feedback = true;
    double background_fraction = 0.0;  // |beta| / sqrt(<b+b>_est)
    double background_phase = 0.0;     // rad
    bool background_follows_drive = false;
};

struct RunParams {
    double duration = 60e-6;        // s
    double warmup = 12e-6;          // s
    double dt_safety = 50.0;        // dt <= (1/safety) min(1/rates)
    double bin_width = 10e-9;       // s
    double sample_interval = 100e-9;// s
    double tau_max = 4e-6;          // s
    int h_truncation = 2;           // H-photon basis cutoff (2 or 3)
    int max_atoms = 32;
    std::string event_log;          // path, empty = off
};

struct Params {
    TransitionParams transition;
    CavityParams cavity;
    BeamParams beam;
    FieldParams field;
    DriveParams drive;
    RunParams run;

    LevelScheme scheme;       // built at load
    ZeemanSplitting zeeman;   // built at load

    /// |beta| in sqrt(intracavity H photon number) units, from
    /// background_fraction and the analytic flux estimate.
    std::complex<double> beta() const;
    /// Crude steady-state estimate of the H-mode photon number, used only to
    /// scale the configured background fraction.
    double h_photons_estimate() const;
};

double cooperativity(const CavityParams& c);
double saturation_photon_number(const CavityParams& c);
double transit_time(const CavityParams& c, const BeamParams& b);

/// Poisson arrival rate solved so that the time average of
/// sum_i (g_i/g_max)^2 equals nbar for the configured entry geometry.
double arrival_rate(const Params& p);

/// Integration step: bin_width divided into an integer number of steps, each
/// below (1/dt_safety) min(1/kappa, 1/gamma, 1/delta_e_max, 1/Omega_max).
double integration_dt(const Params& p);

struct DerivedQuantities {
    double C1, n0, transit, delta_g, delta_e, Delta;
    double beat_prediction_hz;  // 2 delta_g / 2pi
    double arrival_rate_hz;
    double dt;
};
DerivedQuantities derived_quantities(const Params& p);
std::string derived_csv(const DerivedQuantities& d);

/// Parse configuration text (flat key = value with [sections], '#' comments).
/// Unknown or malformed keys raise config_error naming the key and line.
Params parse_config(const std::string& text);
Params load_config(const std::string& path);
/// Canonical full echo of every key (parses back to an identical set).
std::string serialize_config(const Params& p);

}  // namespace qbeats
