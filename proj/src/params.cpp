#include "qbeats/params.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <vector>

namespace qbeats {

namespace {
constexpr double two_pi = 2.0 * std::numbers::pi;

double erf_window_mean(double halfwidth_waists) {
    // mean of exp(-2 y^2 / w^2) over y uniform in [-Y, Y], Y in waist units
    if (halfwidth_waists <= 0) return 1.0;
    double Y = halfwidth_waists;
    return std::sqrt(std::numbers::pi / 2.0) * std::erf(std::sqrt(2.0) * Y) /
           (2.0 * Y);
}
}  // namespace

double cooperativity(const CavityParams& c) {
    return c.g_max * c.g_max / (c.gamma * c.kappa);
}

double saturation_photon_number(const CavityParams& c) {
    if (c.g_max <= 0)
        throw std::domain_error("saturation_photon_number: g_max must be > 0");
    return c.gamma * c.gamma / (3.0 * c.g_max * c.g_max);
}

double transit_time(const CavityParams& c, const BeamParams& b) {
    if (b.mean_speed <= 0)
        throw std::domain_error("transit_time: mean_speed must be > 0");
    return c.waist / b.mean_speed;
}

double arrival_rate(const Params& p) {
    // nbar = R * E_entry[ integral (g/g_max)^2 dt ]
    //      = R * G_y * G_sw * G_z * waist sqrt(pi/2) / v_z
    double G_y = erf_window_mean(p.beam.entry_halfwidth);
    double G_sw = p.beam.standing_wave ? 0.5 : 1.0;
    // z-window truncation of the coupling-squared transit integral
    double G_z = std::erf(std::sqrt(2.0) * p.beam.exit_halflength);
    double v_z = p.beam.mean_speed * std::cos(p.beam.tilt);
    return p.beam.nbar * v_z /
           (p.cavity.waist * std::sqrt(std::numbers::pi / 2.0) * G_y * G_sw *
            G_z);
}

double integration_dt(const Params& p) {
    double de_max = std::abs(p.zeeman.delta_e) * p.transition.Fe;
    double dg_max = std::abs(p.zeeman.delta_g) * p.transition.Fg;
    double omega_max =
        p.cavity.g_max * std::sqrt(std::max(p.drive.v_photons_empty, 1e-12));
    double rate = std::max({p.cavity.kappa, p.cavity.gamma, de_max, dg_max,
                            omega_max, std::abs(p.drive.detuning)});
    double bound = 1.0 / (p.run.dt_safety * rate);
    int n = std::max(1, static_cast<int>(std::ceil(p.run.bin_width / bound)));
    return p.run.bin_width / n;
}

double Params::h_photons_estimate() const {
    // weak-field steady state for one maximally coupled atom, scaled by nbar:
    // e ~ Omega/(gamma/2), a' ~ g cg_sigma e / kappa, <n> ~ nbar sum |a'|^2
    double omega = cavity.g_max * std::sqrt(drive.v_photons_empty);
    double e_amp = omega / std::hypot(0.5 * cavity.gamma, drive.detuning);
    e_amp = std::min(e_amp, 1.0 / std::sqrt(2.0));  // saturate
    double cg2 = 0.0;
    for (int q : {-1, +1}) {
        double c = scheme.cg_norm(-q, q);  // e_0 -> g_{-q}
        cg2 += 0.5 * c * c;                // 1/2: linear-polarization split
    }
    double aprime2 = cg2 * std::pow(cavity.g_max * e_amp / cavity.kappa, 2);
    return std::max(beam.nbar, 1e-12) * aprime2;
}

std::complex<double> Params::beta() const {
    if (drive.background_fraction == 0.0) return {0.0, 0.0};
    double mag = drive.background_fraction * std::sqrt(h_photons_estimate());
    return std::polar(mag, drive.background_phase);
}

DerivedQuantities derived_quantities(const Params& p) {
    DerivedQuantities d{};
    d.C1 = cooperativity(p.cavity);
    d.n0 = saturation_photon_number(p.cavity);
    d.transit = transit_time(p.cavity, p.beam);
    d.delta_g = p.zeeman.delta_g;
    d.delta_e = p.zeeman.delta_e;
    d.Delta = p.zeeman.Delta;
    d.beat_prediction_hz = 2.0 * p.zeeman.delta_g / two_pi;
    d.arrival_rate_hz = arrival_rate(p);
    d.dt = integration_dt(p);
    return d;
}

std::string derived_csv(const DerivedQuantities& d) {
    std::ostringstream os;
    os.precision(10);
    os << "quantity,value,unit\n"
       << "C1," << d.C1 << ",dimensionless\n"
       << "n0," << d.n0 << ",photons\n"
       << "transit_time," << d.transit << ",s\n"
       << "delta_g_over_2pi," << d.delta_g / two_pi << ",Hz\n"
       << "delta_e_over_2pi," << d.delta_e / two_pi << ",Hz\n"
       << "Delta_over_2pi," << d.Delta / two_pi << ",Hz\n"
       << "beat_prediction," << d.beat_prediction_hz << ",Hz\n"
       << "arrival_rate," << d.arrival_rate_hz << ",Hz\n"
       << "dt," << d.dt << ",s\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// config parsing

namespace {

struct KeySpec {
    std::function<void(Params&, double)> set_num;
    std::function<void(Params&, bool)> set_bool;
    std::function<void(Params&, const std::string&)> set_str;
};

std::map<std::string, KeySpec> key_table() {
    std::map<std::string, KeySpec> t;
    auto num = [&](const std::string& k, auto fn) { t[k].set_num = fn; };
    auto boolean = [&](const std::string& k, auto fn) { t[k].set_bool = fn; };
    auto str = [&](const std::string& k, auto fn) { t[k].set_str = fn; };

    num("transition.Fg", [](Params& p, double v) { p.transition.Fg = int(v); });
    num("transition.Fe", [](Params& p, double v) { p.transition.Fe = int(v); });
    num("transition.I2", [](Params& p, double v) { p.transition.two_I = int(v); });
    num("transition.gJ_ground", [](Params& p, double v) { p.transition.gJ_ground = v; });
    num("transition.gJ_excited", [](Params& p, double v) { p.transition.gJ_excited = v; });
    num("transition.lambda_nm", [](Params& p, double v) { p.transition.lambda = v * 1e-9; });

    num("cavity.kappa_mhz", [](Params& p, double v) { p.cavity.kappa = two_pi * v * 1e6; });
    num("cavity.gamma_mhz", [](Params& p, double v) { p.cavity.gamma = two_pi * v * 1e6; });
    num("cavity.g_mhz", [](Params& p, double v) { p.cavity.g_max = two_pi * v * 1e6; });
    num("cavity.waist_um", [](Params& p, double v) { p.cavity.waist = v * 1e-6; });
    num("cavity.length_mm", [](Params& p, double v) { p.cavity.length = v * 1e-3; });
    num("cavity.birefringence_khz", [](Params& p, double v) { p.cavity.birefringence_split = two_pi * v * 1e3; });

    num("beam.speed_mps", [](Params& p, double v) { p.beam.mean_speed = v; });
    num("beam.speed_sigma_mps", [](Params& p, double v) { p.beam.speed_sigma = v; });
    num("beam.nbar", [](Params& p, double v) { p.beam.nbar = v; });
    num("beam.tilt_deg", [](Params& p, double v) { p.beam.tilt = v * std::numbers::pi / 180.0; });
    num("beam.pump_fidelity", [](Params& p, double v) { p.beam.pump_fidelity = v; });
    num("beam.entry_halfwidth_waists", [](Params& p, double v) { p.beam.entry_halfwidth = v; });
    num("beam.exit_halflength_waists", [](Params& p, double v) { p.beam.exit_halflength = v; });
    boolean("beam.standing_wave", [](Params& p, bool v) { p.beam.standing_wave = v; });

    num("field.B_gauss", [](Params& p, double v) { p.field.B_gauss = v; });
    num("field.sigma_asymmetry", [](Params& p, double v) { p.field.sigma_asymmetry = v; });

    num("drive.v_photons", [](Params& p, double v) { p.drive.v_photons_empty = v; });
    num("drive.detuning_mhz", [](Params& p, double v) { p.drive.detuning = two_pi * v * 1e6; });
    boolean("drive.absorption_feedback", [](Params& p, bool v) { p.drive.absorption_feedback = v; });
    num("drive.background_fraction", [](Params& p, double v) { p.drive.background_fraction = v; });
    num("drive.background_phase_deg", [](Params& p, double v) { p.drive.background_phase = v * std::numbers::pi / 180.0; });
    boolean("drive.background_follows_drive", [](Params& p, bool v) { p.drive.background_follows_drive = v; });

    num("run.duration_us", [](Params& p, double v) { p.run.duration = v * 1e-6; });
    num("run.warmup_us", [](Params& p, double v) { p.run.warmup = v * 1e-6; });
    num("run.dt_safety", [](Params& p, double v) { p.run.dt_safety = v; });
    num("run.bin_ns", [](Params& p, double v) { p.run.bin_width = v * 1e-9; });
    num("run.sample_interval_ns", [](Params& p, double v) { p.run.sample_interval = v * 1e-9; });
    num("run.tau_max_us", [](Params& p, double v) { p.run.tau_max = v * 1e-6; });
    num("run.h_truncation", [](Params& p, double v) { p.run.h_truncation = int(v); });
    num("run.max_atoms", [](Params& p, double v) { p.run.max_atoms = int(v); });
    str("run.event_log", [](Params& p, const std::string& v) { p.run.event_log = v; });
    return t;
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw config_error("config: " + key + " " + what);
}

void validate(Params& p) {
    require(p.transition.Fg >= 0 && p.transition.Fg <= 5, "transition.Fg", "must be in 0..5");
    require(p.transition.Fe >= 0 && p.transition.Fe <= 5, "transition.Fe", "must be in 0..5");
    require(std::abs(p.transition.Fe - p.transition.Fg) <= 1 &&
                !(p.transition.Fg == 0 && p.transition.Fe == 0),
            "transition.Fe", "must satisfy |Fe-Fg| <= 1, not 0->0");
    require(p.transition.lambda > 0, "transition.lambda_nm", "must be > 0");
    require(p.cavity.kappa > 0, "cavity.kappa_mhz", "must be > 0");
    require(p.cavity.gamma > 0, "cavity.gamma_mhz", "must be > 0");
    require(p.cavity.g_max > 0, "cavity.g_mhz", "must be > 0");
    require(p.cavity.waist > 0, "cavity.waist_um", "must be > 0");
    require(p.cavity.length > 0, "cavity.length_mm", "must be > 0");
    require(p.cavity.birefringence_split >= 0, "cavity.birefringence_khz", "must be >= 0");
    require(p.beam.mean_speed > 0, "beam.speed_mps", "must be > 0");
    require(p.beam.speed_sigma >= 0, "beam.speed_sigma_mps", "must be >= 0");
    require(p.beam.nbar >= 0, "beam.nbar", "must be >= 0");
    require(p.beam.pump_fidelity >= 0 && p.beam.pump_fidelity <= 1,
            "beam.pump_fidelity", "must be in [0,1]");
    require(p.beam.entry_halfwidth > 0 && p.beam.entry_halfwidth <= 3.0,
            "beam.entry_halfwidth_waists", "must be in (0,3]");
    require(p.beam.exit_halflength > 0 && p.beam.exit_halflength <= 3.0,
            "beam.exit_halflength_waists", "must be in (0,3]");
    require(p.field.B_gauss >= 0, "field.B_gauss", "must be >= 0");
    require(p.drive.v_photons_empty >= 0, "drive.v_photons", "must be >= 0");
    require(p.drive.background_fraction >= 0, "drive.background_fraction", "must be >= 0");
    require(p.run.duration >= 0, "run.duration_us", "must be >= 0");
    require(p.run.warmup >= 0 && p.run.warmup <= p.run.duration + 1e-12,
            "run.warmup_us", "must be >= 0 and <= duration");
    require(p.run.dt_safety >= 50.0, "run.dt_safety", "must be >= 50");
    require(p.run.bin_width > 0, "run.bin_ns", "must be > 0");
    require(p.run.sample_interval >= p.run.bin_width, "run.sample_interval_ns",
            "must be >= bin width");
    require(std::abs(p.run.sample_interval / p.run.bin_width -
                     std::round(p.run.sample_interval / p.run.bin_width)) < 1e-9,
            "run.sample_interval_ns", "must be an integer multiple of bin_ns");
    require(p.run.tau_max >= p.run.bin_width, "run.tau_max_us", "must cover >= 1 bin");
    require(p.run.h_truncation == 2 || p.run.h_truncation == 3,
            "run.h_truncation", "must be 2 or 3");
    require(p.run.max_atoms >= 1 && p.run.max_atoms <= 32, "run.max_atoms",
            "must be in 1..32 (hard cap 32)");

    if (p.cavity.birefringence_split > two_pi * 200e3)
        std::fprintf(stderr,
                     "warning: cavity.birefringence_khz above the 200 kHz "
                     "apparatus bound\n");

    p.scheme = LevelScheme::make(p.transition.Fg, p.transition.Fe,
                                 p.transition.two_I, p.transition.gJ_ground,
                                 p.transition.gJ_excited);
    p.zeeman = zeeman_detunings(p.field.B_gauss, p.scheme);
}

}  // namespace

Params parse_config(const std::string& text) {
    Params p;
    auto table = key_table();
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw config_error("config line " + std::to_string(lineno) +
                                   ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) +
                               ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        std::string full = section.empty() ? key : section + "." + key;
        auto it = table.find(full);
        if (it == table.end())
            throw config_error("config line " + std::to_string(lineno) +
                               ": unknown key '" + full + "'");
        const KeySpec& ks = it->second;
        if (ks.set_str) {
            ks.set_str(p, val);
        } else if (ks.set_bool) {
            if (val == "true" || val == "1") ks.set_bool(p, true);
            else if (val == "false" || val == "0") ks.set_bool(p, false);
            else
                throw config_error("config line " + std::to_string(lineno) +
                                   ": key '" + full + "' expects true/false");
        } else {
            try {
                size_t pos = 0;
                double v = std::stod(val, &pos);
                if (pos != val.size()) throw std::invalid_argument(val);
                ks.set_num(p, v);
            } catch (const std::exception&) {
                throw config_error("config line " + std::to_string(lineno) +
                                   ": key '" + full + "' expects a number, got '" +
                                   val + "'");
            }
        }
    }
    validate(p);
    return p;
}

Params load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const Params& p) {
    std::ostringstream os;
    os.precision(17);
    os << "[transition]\n"
       << "Fg = " << p.transition.Fg << "\n"
       << "Fe = " << p.transition.Fe << "\n"
       << "I2 = " << p.transition.two_I << "\n"
       << "gJ_ground = " << p.transition.gJ_ground << "\n"
       << "gJ_excited = " << p.transition.gJ_excited << "\n"
       << "lambda_nm = " << p.transition.lambda * 1e9 << "\n"
       << "[cavity]\n"
       << "kappa_mhz = " << p.cavity.kappa / two_pi / 1e6 << "\n"
       << "gamma_mhz = " << p.cavity.gamma / two_pi / 1e6 << "\n"
       << "g_mhz = " << p.cavity.g_max / two_pi / 1e6 << "\n"
       << "waist_um = " << p.cavity.waist * 1e6 << "\n"
       << "length_mm = " << p.cavity.length * 1e3 << "\n"
       << "birefringence_khz = " << p.cavity.birefringence_split / two_pi / 1e3 << "\n"
       << "[beam]\n"
       << "speed_mps = " << p.beam.mean_speed << "\n"
       << "speed_sigma_mps = " << p.beam.speed_sigma << "\n"
       << "nbar = " << p.beam.nbar << "\n"
       << "tilt_deg = " << p.beam.tilt * 180.0 / std::numbers::pi << "\n"
       << "pump_fidelity = " << p.beam.pump_fidelity << "\n"
       << "entry_halfwidth_waists = " << p.beam.entry_halfwidth << "\n"
       << "exit_halflength_waists = " << p.beam.exit_halflength << "\n"
       << "standing_wave = " << (p.beam.standing_wave ? "true" : "false") << "\n"
       << "[field]\n"
       << "B_gauss = " << p.field.B_gauss << "\n"
       << "sigma_asymmetry = " << p.field.sigma_asymmetry << "\n"
       << "[drive]\n"
       << "v_photons = " << p.drive.v_photons_empty << "\n"
       << "detuning_mhz = " << p.drive.detuning / two_pi / 1e6 << "\n"
       << "absorption_feedback = " << (p.drive.absorption_feedback ? "true" : "false") << "\n"
       << "background_fraction = " << p.drive.background_fraction << "\n"
       << "background_phase_deg = " << p.drive.background_phase * 180.0 / std::numbers::pi << "\n"
       << "background_follows_drive = " << (p.drive.background_follows_drive ? "true" : "false") << "\n"
       << "[run]\n"
       << "duration_us = " << p.run.duration * 1e6 << "\n"
       << "warmup_us = " << p.run.warmup * 1e6 << "\n"
       << "dt_safety = " << p.run.dt_safety << "\n"
       << "bin_ns = " << p.run.bin_width * 1e9 << "\n"
       << "sample_interval_ns = " << p.run.sample_interval * 1e9 << "\n"
       << "tau_max_us = " << p.run.tau_max * 1e6 << "\n"
       << "h_truncation = " << p.run.h_truncation << "\n"
       << "max_atoms = " << p.run.max_atoms << "\n"
       << "event_log = " << p.run.event_log << "\n";
    return os.str();
}

}  // namespace qbeats
