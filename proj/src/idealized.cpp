#include "qbeats/idealized.hpp"

#include <cmath>
#include <stdexcept>

namespace qbeats {

double precession_phase(double tau, double delta_g) { return delta_g * tau; }

std::pair<std::complex<double>, std::complex<double>>
excited_superposition(double tau, const IdealBeatParams& p) {
    if (p.gamma <= 0) throw std::domain_error("excited_superposition: gamma <= 0");
    const std::complex<double> i(0.0, 1.0);
    double phi = precession_phase(tau, p.delta_g);
    std::complex<double> lo =
        p.cg_minus * std::exp(i * phi) /
        std::complex<double>(p.gamma, -((p.m - 1) * p.Delta + p.detuning));
    std::complex<double> hi =
        p.cg_plus * std::exp(-i * phi) /
        std::complex<double>(p.gamma, ((p.m + 1) * p.Delta + p.detuning));
    return {lo, hi};
}

IdealCurve ideal_g2_shape(const std::vector<double>& tau_grid,
                          const IdealBeatParams& p, double transit_sigma) {
    if (transit_sigma <= 0)
        throw std::domain_error("ideal_g2_shape: transit_sigma <= 0");
    IdealCurve c;
    c.tau = tau_grid;
    c.one_atom.resize(tau_grid.size());

    auto [z_minus, z_plus] = excited_superposition(0.0, p);
    double a = std::abs(z_minus), b = std::abs(z_plus);
    double denom = a * a + b * b;
    c.visibility = denom > 0 ? 2.0 * a * b / denom : 0.0;
    c.theta = std::arg(z_minus) - std::arg(z_plus);

    for (size_t k = 0; k < tau_grid.size(); ++k) {
        double tau = tau_grid[k];
        double env = std::exp(-tau * tau / (transit_sigma * transit_sigma));
        double osc =
            1.0 + c.visibility * std::cos(2.0 * p.delta_g * tau + c.theta);
        c.one_atom[k] = env * osc;
    }
    return c;
}

}  // namespace qbeats
