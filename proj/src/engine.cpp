#include "qbeats/engine.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <numbers>

#include "qbeats/correlator.hpp"

namespace qbeats {

namespace {

constexpr double kPi = std::numbers::pi;

// splitmix64: portable, deterministic, good enough for Monte-Carlo use here
inline uint64_t splitmix64(uint64_t& s) {
    uint64_t z = (s += 0x9E3779B97f4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

struct Mat2x2 {
    cplx a00{}, a01{}, a10{}, a11{};
};

inline Mat2x2 operator*(const Mat2x2& A, const Mat2x2& B) {
    return {A.a00 * B.a00 + A.a01 * B.a10, A.a00 * B.a01 + A.a01 * B.a11,
            A.a10 * B.a00 + A.a11 * B.a10, A.a10 * B.a01 + A.a11 * B.a11};
}

inline AmpPair apply(const Mat2x2& A, const AmpPair& v) {
    return {A.a00 * v.g + A.a01 * v.e, A.a10 * v.g + A.a11 * v.e};
}

// exp(M T) for 2x2 complex M via the trace/deviator closed form; robust at
// degenerate eigenvalues (sinh(x)/x handled by series).
Mat2x2 expm2(const Mat2x2& M, double T) {
    cplx mu = 0.5 * (M.a00 + M.a11);
    cplx a = M.a00 - mu, b = M.a01, c = M.a10;
    cplx nu2 = a * a + b * c;
    cplx nu = std::sqrt(nu2);
    cplx ch, shn;  // cosh(nu T), sinh(nu T)/nu
    if (std::abs(nu) * T < 1e-6) {
        cplx x2 = nu2 * T * T;
        ch = 1.0 + 0.5 * x2;
        shn = T * (1.0 + x2 / 6.0);
    } else {
        ch = std::cosh(nu * T);
        shn = std::sinh(nu * T) / nu;
    }
    cplx s = std::exp(mu * T);
    return {s * (ch + shn * a), s * (shn * b), s * (shn * c),
            s * (ch - shn * a)};
}

struct Eigen2 {
    cplx lam0, lam1;
    Mat2x2 V, Vinv;
    bool ok = false;  // false -> (near-)defective, use fallback
};

Eigen2 eigen2(const Mat2x2& M) {
    Eigen2 e;
    cplx mu = 0.5 * (M.a00 + M.a11);
    cplx a = M.a00 - mu, b = M.a01, c = M.a10;
    cplx nu = std::sqrt(a * a + b * c);
    e.lam0 = mu + nu;
    e.lam1 = mu - nu;
    double scale = std::abs(a) + std::abs(b) + std::abs(c);
    if (std::abs(nu) < 1e-9 * std::max(scale, 1e-300)) return e;  // defective
    // eigenvectors of the deviator [[a,b],[c,-a]]
    cplx v0g, v0e, v1g, v1e;
    if (std::abs(b) >= std::abs(c)) {
        v0g = b; v0e = nu - a;
        v1g = b; v1e = -nu - a;
    } else {
        v0g = nu + a; v0e = c;
        v1g = -nu + a; v1e = c;
    }
    cplx det = v0g * v1e - v0e * v1g;
    if (std::abs(det) < 1e-14 * std::max(scale * scale, 1e-300)) return e;
    e.V = {v0g, v1g, v0e, v1e};
    e.Vinv = {v1e / det, -v1g / det, -v0e / det, v0g / det};
    e.ok = true;
    return e;
}

inline cplx phi_integral(cplx p, cplx q, double T, cplx ep, cplx eq) {
    // integral_0^T e^{p (T-s)} e^{q s} ds = (e^{pT} - e^{qT}) / (p - q)
    cplx d = p - q;
    if (std::abs(d) * T < 1e-8) return T * ep * (1.0 - 0.5 * d * T);
    return (ep - eq) / d;
}

}  // namespace

// ---------------------------------------------------------------------------

TrajectoryEngine::TrajectoryEngine(const Params& p, uint64_t seed)
    : p_(p), scheme_(p.scheme) {
    kappa_ = p_.cavity.kappa;
    gamma_ = p_.cavity.gamma;
    delta_g_ = p_.zeeman.delta_g;
    delta_e_ = p_.zeeman.delta_e;
    detuning_ = p_.drive.detuning;
    bire_ = p_.cavity.birefringence_split;
    beta_ = p_.beta();
    E_drive_ = kappa_ * std::sqrt(p_.drive.v_photons_empty);
    trunc_ = p_.run.h_truncation;
    sw_k_ = p_.beam.standing_wave ? 2.0 * kPi / p_.transition.lambda : 0.0;
    v_amplitude_ = E_drive_ / kappa_;  // empty-cavity steady state

    rng_state_ = seed ^ 0xD1B54A32D192ED03ull;
    // decorrelate nearby seeds
    for (int i = 0; i < 4; ++i) splitmix64(rng_state_);

    arrival_rate_ = p_.beam.nbar > 0 ? arrival_rate(p_) : 0.0;

    n_slots_ = std::max(
        1, static_cast<int>(std::round(p_.run.tau_max / p_.run.sample_interval)));
    slot_live_.assign(n_slots_, 0);
    slot_weight_.assign(n_slots_, 0.0);
    slot_dead_w_.assign(n_slots_, 0.0);
    slot_beta0_.assign(n_slots_, cplx(0, 0));
    slot_age_bins_.assign(n_slots_, 0);
}

double TrajectoryEngine::uniform() {
    ++rng_calls_;
    return (splitmix64(rng_state_) >> 11) * 0x1.0p-53;
}

double TrajectoryEngine::normal() {
    double u1 = std::max(uniform(), 1e-300), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

AtomInstance& TrajectoryEngine::place_atom(std::array<double, 3> pos,
                                           std::array<double, 3> vel, int m) {
    if (static_cast<int>(atoms_.size()) >= p_.run.max_atoms)
        throw config_error(
            "atom cap of " + std::to_string(p_.run.max_atoms) +
            " exceeded; lower beam.nbar or shrink the entry region");
    AtomInstance at;
    at.id = next_id_++;
    at.position = pos;
    at.velocity = vel;
    at.m_center = m;
    at.sigma_ledger = m;
    at.a.g = 1.0;
    at.b1.assign(n_slots_, {});
    at.b2.assign(n_slots_, {});
    atoms_.push_back(std::move(at));
    ov_valid_ = false;
    refresh_drive();
    return atoms_.back();
}

void TrajectoryEngine::rebuild_couplings(double at_offset) {
    const double w = p_.cavity.waist;
    for (auto& at : atoms_) {
        double x = at.position[0] + at.velocity[0] * at_offset;
        double y = at.position[1] + at.velocity[1] * at_offset;
        double z = at.position[2] + at.velocity[2] * at_offset;
        double rho2 = (y * y + z * z) / (w * w);
        double g = p_.cavity.g_max * std::exp(-rho2);
        if (sw_k_ != 0.0) g *= std::cos(sw_k_ * x);
        at.coupling = g;
    }
}

void TrajectoryEngine::update_v_amplitude() {
    cplx chi_sum(0.0, 0.0);
    if (p_.drive.absorption_feedback) {
        const double hg = 0.5 * gamma_;
        for (const auto& at : atoms_) {
            double g2 = at.coupling * at.coupling;
            if (g2 == 0.0) continue;
            cplx chi(0.0, 0.0);
            auto add = [&](int m, cplx amp) {
                double pop = std::norm(amp);
                if (pop == 0.0) return;
                double cg = scheme_.cg_norm(m, 0);
                if (cg == 0.0) return;
                chi += pop * cg * cg /
                       cplx(hg, m * p_.zeeman.Delta - detuning_);
            };
            int c = at.m_center;
            add(c, at.a.g);
            add(c - 1, at.a1[0].g);
            add(c + 1, at.a1[1].g);
            add(c - 2, at.a2[0].g);
            add(c, at.a2[1].g);
            add(c + 2, at.a2[2].g);
            chi_sum += g2 * chi;
        }
    }
    v_amplitude_ = E_drive_ / (kappa_ + chi_sum);
}

void TrajectoryEngine::refresh_drive() {
    rebuild_couplings(0.0);
    update_v_amplitude();
}

TrajectoryEngine::Mat2 TrajectoryEngine::manifold_generator(
    const AtomInstance& at, int m_abs, cplx omega) const {
    // d/dt (g, e) = M (g, e):
    //   g' = -i m delta_g g - i conj(Omega) cg e
    //   e' = -i Omega cg g + (-i (m delta_e - detuning) - gamma/2) e
    double cg = scheme_.cg_norm(m_abs, 0);
    cplx drive = cplx(0, -1) * omega * cg;  // e <- g entry of -iH
    return {cplx(0, -m_abs * delta_g_), -std::conj(drive), drive,
            cplx(0, -(m_abs * delta_e_ - detuning_)) - 0.5 * gamma_};
}

// polarization projection of the H mode on the sigma-q transition reaching
// ground manifold m_g; 1/sqrt(2) from the linear polarization split, the
// asymmetry knob stands in for field misalignment.
static inline double pol_weight(int q, double eps) {
    return (1.0 + q * eps) / std::sqrt(2.0 * (1.0 + eps * eps));
}

void TrajectoryEngine::derivative(const AtomInstance& at, const AtomScratch& sc,
                                  const std::vector<AmpPair>& y,
                                  std::vector<AmpPair>& dy) const {
    // layout: [0]=a, [1..2]=a1, [3..5]=a2, [6..9]=a3 (trunc 3)
    const cplx ik(0.0, -1.0);
    const cplx kap(kappa_, bire_);
    const double g = sc.g_mid;

    auto mul = [](const Mat2& m, const AmpPair& v) -> AmpPair {
        return {m.m00 * v.g + m.m01 * v.e, m.m10 * v.g + m.m11 * v.e};
    };

    dy[0] = mul(sc.gen[3], y[0]);

    // a1 <- a via sigma channels: ground at c+d from excited at c, q = -d
    for (int k = 0; k < 2; ++k) {
        int d = k == 0 ? -1 : +1;
        dy[1 + k] = mul(sc.gen[d + 3], y[1 + k]);
        dy[1 + k].g -= kap * y[1 + k].g;
        dy[1 + k].e -= kap * y[1 + k].e;
        dy[1 + k].g += ik * g * sc.w1[static_cast<size_t>(k)] * y[0].e;
    }

    // a2 <- a1: (d, dj) in {(-1,-2),(-1,0),(+1,0),(+1,+2)}, q = d - dj
    for (int j = 0; j < 3; ++j) {
        int dj = 2 * (j - 1);
        dy[3 + j] = mul(sc.gen[dj + 3], y[3 + j]);
        dy[3 + j].g -= 2.0 * kap * y[3 + j].g;
        dy[3 + j].e -= 2.0 * kap * y[3 + j].e;
    }
    static constexpr int map2[4][2] = {{0, 0}, {0, 1}, {1, 1}, {1, 2}};
    for (int t = 0; t < 4; ++t) {
        int k = map2[t][0], j = map2[t][1];
        dy[3 + j].g += ik * g * sc.w2[static_cast<size_t>(t)] * y[1 + k].e;
    }

    if (trunc_ >= 3) {
        static constexpr int dl_of[4] = {-3, -1, 1, 3};
        for (int l = 0; l < 4; ++l) {
            dy[6 + l] = mul(sc.gen[dl_of[l] + 3], y[6 + l]);
            dy[6 + l].g -= 3.0 * kap * y[6 + l].g;
            dy[6 + l].e -= 3.0 * kap * y[6 + l].e;
        }
        static constexpr int map3[6][2] = {{0, 0}, {0, 1}, {1, 1},
                                           {1, 2}, {2, 2}, {2, 3}};
        for (int t = 0; t < 6; ++t) {
            int j = map3[t][0], l = map3[t][1];
            dy[6 + l].g += ik * g * sc.w3[static_cast<size_t>(t)] * y[3 + j].e;
        }
    }
}

// ---------------------------------------------------------------------------
// overlap machinery

void TrajectoryEngine::compute_overlaps() const {
    if (ov_valid_) return;
    size_t N = atoms_.size();
    ov_n_.resize(N);
    ov_p_.resize(N);
    ov_q_.resize(N);
    ov_r3_.resize(N);
    ov_v_.resize(N);
    ov_y_.resize(N);
    for (size_t i = 0; i < N; ++i) {
        const auto& at = atoms_[i];
        ov_n_[i] = std::norm(at.a.g) + std::norm(at.a.e);
        double p = 0, q = 0, r3 = 0;
        for (auto& v : at.a1) p += std::norm(v.g) + std::norm(v.e);
        for (auto& v : at.a2) q += std::norm(v.g) + std::norm(v.e);
        if (trunc_ >= 3)
            for (auto& v : at.a3) r3 += std::norm(v.g) + std::norm(v.e);
        ov_p_[i] = p;
        ov_q_[i] = q;
        ov_r3_[i] = r3;
        ov_v_[i] = std::conj(at.a.g) * at.a2[1].g + std::conj(at.a.e) * at.a2[1].e;
        cplx y(0, 0);
        if (trunc_ >= 3) {
            y += std::conj(at.a1[0].g) * at.a3[1].g +
                 std::conj(at.a1[0].e) * at.a3[1].e;
            y += std::conj(at.a1[1].g) * at.a3[2].g +
                 std::conj(at.a1[1].e) * at.a3[2].e;
        }
        ov_y_[i] = y;
    }
    ov_valid_ = true;
}

namespace {
// Leave-out products over atom zero-photon norms.  An atom whose center
// manifold emptied (edge sigma jumps) has n_i = 0; products are tracked with
// explicit zero counting so every exclusion product stays finite.
struct Prods {
    std::vector<double> n;
    double Pnz = 1.0;  // product over entries above eps
    int zc = 0;
    static constexpr double eps = 1e-120;
    void init(const std::vector<double>& nv) {
        n = nv;
        Pnz = 1.0;
        zc = 0;
        for (double x : n) {
            if (x > eps)
                Pnz *= x;
            else
                ++zc;
        }
    }
    bool zero(size_t i) const { return !(n[i] > eps); }
    double P() const { return zc == 0 ? Pnz : 0.0; }
    double L(size_t i) const {
        if (!zero(i)) return zc == 0 ? Pnz / n[i] : 0.0;
        return zc == 1 ? Pnz : 0.0;
    }
    double L2(size_t i, size_t j) const {
        int zin = (zero(i) ? 1 : 0) + (zero(j) ? 1 : 0);
        if (zc != zin) return 0.0;
        double v = Pnz;
        if (!zero(i)) v /= n[i];
        if (!zero(j)) v /= n[j];
        return v;
    }
};
}  // namespace

SectorNorms TrajectoryEngine::sector_norms() const {
    compute_overlaps();
    size_t N = atoms_.size();
    Prods pr;
    pr.init(ov_n_);
    SectorNorms s;
    s.s0 = pr.P();
    for (size_t i = 0; i < N; ++i) s.s1 += ov_p_[i] * pr.L(i);
    double pairs = 0, qsum = 0, vcross = 0;
    for (size_t i = 0; i < N; ++i) {
        qsum += ov_q_[i] * pr.L(i);
        for (size_t j = i + 1; j < N; ++j) {
            double l2 = pr.L2(i, j);
            if (l2 == 0.0) continue;
            pairs += ov_p_[i] * ov_p_[j] * l2;
            vcross += 2.0 * std::real(std::conj(ov_v_[i]) * ov_v_[j]) * l2;
        }
    }
    s.s2 = 2.0 * (pairs + qsum + vcross);
    if (trunc_ >= 3) {
        // sector 3: sqrt(6) [ triples a'a'a' + sum_{i!=j} a''_i a'_j + a''' ]
        double triples = 0, mixed = 0, r3sum = 0, cross_yv = 0, vv_corr = 0;
        for (size_t i = 0; i < N; ++i) {
            r3sum += ov_r3_[i] * pr.L(i);
            for (size_t k = 0; k < N; ++k) {
                if (k == i) continue;
                double l2 = pr.L2(i, k);
                mixed += ov_q_[i] * ov_p_[k] * l2;
                // <a'''_i A_i | a''_k a'_i A_ki> pairs y_i against v_k
                cross_yv += 2.0 * std::real(std::conj(ov_y_[i]) * ov_v_[k]) * l2;
            }
            for (size_t j = i + 1; j < N; ++j)
                for (size_t k = j + 1; k < N; ++k) {
                    double l3;
                    if (pr.zc == 0)
                        l3 = pr.Pnz / (ov_n_[i] * ov_n_[j] * ov_n_[k]);
                    else {
                        l3 = pr.L2(i, j);
                        l3 = 0.0;  // triples with a zero atom outside {i,j,k}
                        int zin = (pr.zero(i) ? 1 : 0) + (pr.zero(j) ? 1 : 0) +
                                  (pr.zero(k) ? 1 : 0);
                        if (zin == pr.zc) {
                            l3 = pr.Pnz;
                            if (!pr.zero(i)) l3 /= ov_n_[i];
                            if (!pr.zero(j)) l3 /= ov_n_[j];
                            if (!pr.zero(k)) l3 /= ov_n_[k];
                        }
                    }
                    triples += ov_p_[i] * ov_p_[j] * ov_p_[k] * l3;
                }
        }
        // mixed-mixed (a''_i a'_j) vs (a''_k a'_j) with shared spectator j
        for (size_t j = 0; j < N; ++j)
            for (size_t i = 0; i < N; ++i)
                for (size_t k = 0; k < N; ++k) {
                    if (i == j || k == j || i == k) continue;
                    int zin = (pr.zero(i) ? 1 : 0) + (pr.zero(j) ? 1 : 0) +
                              (pr.zero(k) ? 1 : 0);
                    if (zin != pr.zc) continue;
                    double l3 = pr.Pnz;
                    if (!pr.zero(i)) l3 /= ov_n_[i];
                    if (!pr.zero(j)) l3 /= ov_n_[j];
                    if (!pr.zero(k)) l3 /= ov_n_[k];
                    vv_corr += std::real(std::conj(ov_v_[i]) * ov_v_[k]) *
                               ov_p_[j] * l3;
                }
        s.s3 = 6.0 * (triples + mixed + r3sum + cross_yv + vv_corr);
        s.s3 = std::max(s.s3, 0.0);
    }
    return s;
}

double TrajectoryEngine::norm2() const { return sector_norms().total(); }

double TrajectoryEngine::h_photons() const {
    auto s = sector_norms();
    return s.photons() / s.total();
}

double TrajectoryEngine::det_rate() const {
    return h_photons() + std::norm(beta_);
}

// ---------------------------------------------------------------------------
// per-step evolution

ChannelProbabilities TrajectoryEngine::evolve_step(double dt) {
    // channel probabilities for the elapsed step, from the pre-step state
    ChannelProbabilities probs;
    probs.entries.reserve(3 * atoms_.size() + 1);
    spont_channel_rates(probs.entries);  // entries hold rates here
    auto sn = sector_norms();
    double n2 = sn.total();
    double cav = 2.0 * kappa_ * sn.photons() / n2;
    if (cav > 0)
        probs.entries.push_back({JumpEvent::Kind::cavity_H_emission, -1, cav});
    double tot = 0;
    for (auto& e : probs.entries) {
        e.probability *= dt;
        tot += e.probability;
    }
    probs.total = tot;
    if (tot > 0.05)
        throw numerical_error(
            "evolve_step: total jump probability " + std::to_string(tot) +
            " exceeds 0.05 at dt=" + std::to_string(dt));

    // frozen-coefficient RK4 over the step, Omega at mid-step positions
    rebuild_couplings(0.5 * dt);
    update_v_amplitude();

    size_t nb = trunc_ >= 3 ? 10 : 6;
    static thread_local std::vector<AmpPair> y, k1, k2, k3, k4, tmp;
    y.resize(nb);
    k1.resize(nb);
    k2.resize(nb);
    k3.resize(nb);
    k4.resize(nb);
    tmp.resize(nb);

    const double eps_asym = p_.field.sigma_asymmetry;
    for (auto& at : atoms_) {
        AtomScratch sc;
        sc.g_mid = at.coupling;
        cplx omega = at.coupling * v_amplitude_;
        int c = at.m_center;
        for (int d = -3; d <= 3; ++d)
            sc.gen[d + 3] = manifold_generator(at, c + d, omega);
        // sigma-channel source weights down the photon chain
        for (int k = 0; k < 2; ++k) {
            int d = k == 0 ? -1 : +1;
            sc.w1[static_cast<size_t>(k)] =
                pol_weight(-d, eps_asym) * scheme_.cg_norm(c + d, -d);
        }
        static constexpr int pairs2[4][2] = {{-1, -2}, {-1, 0}, {1, 0}, {1, 2}};
        for (int t = 0; t < 4; ++t) {
            int d = pairs2[t][0], dj = pairs2[t][1];
            sc.w2[static_cast<size_t>(t)] =
                pol_weight(d - dj, eps_asym) * scheme_.cg_norm(c + dj, d - dj);
        }
        if (trunc_ >= 3) {
            static constexpr int pairs3[6][2] = {{-2, -3}, {-2, -1}, {0, -1},
                                                 {0, 1},   {2, 1},   {2, 3}};
            for (int t = 0; t < 6; ++t) {
                int dj = pairs3[t][0], dl = pairs3[t][1];
                sc.w3[static_cast<size_t>(t)] =
                    pol_weight(dj - dl, eps_asym) * scheme_.cg_norm(c + dl, dj - dl);
            }
        }

        y[0] = at.a;
        y[1] = at.a1[0];
        y[2] = at.a1[1];
        for (int j = 0; j < 3; ++j) y[3 + j] = at.a2[j];
        if (trunc_ >= 3)
            for (int l = 0; l < 4; ++l) y[6 + l] = at.a3[l];

        derivative(at, sc, y, k1);
        for (size_t i = 0; i < nb; ++i) {
            tmp[i].g = y[i].g + 0.5 * dt * k1[i].g;
            tmp[i].e = y[i].e + 0.5 * dt * k1[i].e;
        }
        derivative(at, sc, tmp, k2);
        for (size_t i = 0; i < nb; ++i) {
            tmp[i].g = y[i].g + 0.5 * dt * k2[i].g;
            tmp[i].e = y[i].e + 0.5 * dt * k2[i].e;
        }
        derivative(at, sc, tmp, k3);
        for (size_t i = 0; i < nb; ++i) {
            tmp[i].g = y[i].g + dt * k3[i].g;
            tmp[i].e = y[i].e + dt * k3[i].e;
        }
        derivative(at, sc, tmp, k4);
        for (size_t i = 0; i < nb; ++i) {
            y[i].g += dt / 6.0 *
                      (k1[i].g + 2.0 * k2[i].g + 2.0 * k3[i].g + k4[i].g);
            y[i].e += dt / 6.0 *
                      (k1[i].e + 2.0 * k2[i].e + 2.0 * k3[i].e + k4[i].e);
        }

        at.a = y[0];
        at.a1[0] = y[1];
        at.a1[1] = y[2];
        for (int j = 0; j < 3; ++j) at.a2[j] = y[3 + j];
        if (trunc_ >= 3)
            for (int l = 0; l < 4; ++l) at.a3[l] = y[6 + l];
    }
    ov_valid_ = false;

    // instability guard: the norm of the damped evolution may never grow;
    // checked against the pre-step value computed for the channel rates
    if (last_norm2_ > 0 && n2 > last_norm2_ * (1.0 + 1e-7))
        throw numerical_error("evolve_step: norm increased beyond tolerance "
                              "(integrator unstable at dt=" +
                              std::to_string(dt) + " s)");
    last_norm2_ = n2;
    time_ += dt;
    return probs;
}

void TrajectoryEngine::spont_channel_rates(
    std::vector<ChannelProbabilities::Entry>& out) const {
    compute_overlaps();
    size_t N = atoms_.size();
    if (N == 0) return;
    Prods pr;
    pr.init(ov_n_);
    auto sn = sector_norms();
    double n2 = sn.total();
    if (!(n2 > 0)) throw numerical_error("state norm vanished");

    for (size_t i = 0; i < N; ++i) {
        const auto& at = atoms_[i];
        int c = at.m_center;
        double Li = pr.L(i);

        // spectator aggregates with atom i excluded (exact in the zero-free
        // case; with an emptied atom norm the exclusion products handle it)
        double spx = 0, sqx = 0, pairx = 0, vcrossx = 0;
        cplx svx_w(0, 0);  // sum_k v_k L2(i,k)
        for (size_t k = 0; k < N; ++k) {
            if (k == i) continue;
            double l2 = pr.L2(i, k);
            spx += ov_p_[k] * l2;
            sqx += ov_q_[k] * l2;
            svx_w += ov_v_[k] * l2;
            for (size_t l = k + 1; l < N; ++l) {
                if (l == i) continue;
                int zin = (pr.zero(i) ? 1 : 0) + (pr.zero(k) ? 1 : 0) +
                          (pr.zero(l) ? 1 : 0);
                if (zin != pr.zc) continue;
                double l3 = pr.Pnz;
                if (!pr.zero(i)) l3 /= ov_n_[i];
                if (!pr.zero(k)) l3 /= ov_n_[k];
                if (!pr.zero(l)) l3 /= ov_n_[l];
                pairx += ov_p_[k] * ov_p_[l] * l3;
                vcrossx +=
                    2.0 * std::real(std::conj(ov_v_[k]) * ov_v_[l]) * l3;
            }
        }

        for (int q = -1; q <= 1; ++q) {
            double cga = scheme_.cg_raw(c - q, q);
            double sa = cga * cga * std::norm(at.a.e);
            double sp_img = 0;
            for (int k = 0; k < 2; ++k) {
                int d = k == 0 ? -1 : 1;
                double cg = scheme_.cg_raw(c + d - q, q);
                sp_img += cg * cg * std::norm(at.a1[k].e);
            }
            double sq_img = 0;
            for (int j = 0; j < 3; ++j) {
                int dj = 2 * (j - 1);
                double cg = scheme_.cg_raw(c + dj - q, q);
                sq_img += cg * cg * std::norm(at.a2[j].e);
            }
            double s3_img = 0;
            if (trunc_ >= 3) {
                static constexpr int dl_of[4] = {-3, -1, 1, 3};
                for (int l = 0; l < 4; ++l) {
                    double cg = scheme_.cg_raw(c + dl_of[l] - q, q);
                    s3_img += cg * cg * std::norm(at.a3[l].e);
                }
            }
            cplx cx = cga * cga * std::conj(at.a2[1].e) * at.a.e;

            double r = sa * (Li + spx + 2.0 * (pairx + sqx + vcrossx)) +
                       sp_img * (Li + 2.0 * spx) + 2.0 * sq_img * Li +
                       4.0 * std::real(cx * svx_w) + 6.0 * s3_img * Li;

            double rate = gamma_ * std::max(r, 0.0) / n2;
            if (rate > 0) {
                JumpEvent::Kind kind =
                    q == 0 ? JumpEvent::Kind::spontaneous_pi
                           : (q > 0 ? JumpEvent::Kind::spontaneous_sigma_plus
                                    : JumpEvent::Kind::spontaneous_sigma_minus);
                out.push_back({kind, static_cast<int>(i), rate});
            }
        }
    }
}

NormRates TrajectoryEngine::norm_rates() const {
    NormRates nr;
    std::vector<ChannelProbabilities::Entry> sp;
    spont_channel_rates(sp);
    for (auto& e : sp) nr.gamma_loss += e.probability;  // entries hold rates
    auto sn = sector_norms();
    double n2 = sn.total();
    nr.cavity_loss = 2.0 * kappa_ * sn.photons() / n2;

    // source feed: 2 sum_i g_i Im[ <a'_i|S_H a_i> (L_i + 2 sum_{k!=i} p_k L_ik)
    //                              + 2 <a''_i|S_H a'_i> L_i ] / n2
    compute_overlaps();
    size_t N = atoms_.size();
    if (N == 0) return nr;
    Prods pr;
    pr.init(ov_n_);
    const double eps = p_.field.sigma_asymmetry;
    double feed = 0;
    for (size_t i = 0; i < N; ++i) {
        const auto& at = atoms_[i];
        int c = at.m_center;
        cplx ov1(0, 0);
        for (int k = 0; k < 2; ++k) {
            int d = k == 0 ? -1 : 1;
            double w = pol_weight(-d, eps) * scheme_.cg_norm(c + d, -d);
            ov1 += std::conj(at.a1[k].g) * (w * at.a.e);
        }
        static constexpr int pairs2[4][2] = {{-1, -2}, {-1, 0}, {1, 0}, {1, 2}};
        cplx ov2(0, 0);
        for (auto& prr : pairs2) {
            int d = prr[0], dj = prr[1];
            int k = d < 0 ? 0 : 1, j = dj / 2 + 1;
            double w = pol_weight(d - dj, eps) * scheme_.cg_norm(c + dj, d - dj);
            ov2 += std::conj(at.a2[j].g) * (w * at.a1[k].e);
        }
        double spx = 0;
        for (size_t k = 0; k < N; ++k)
            if (k != i) spx += ov_p_[k] * pr.L2(i, k);
        feed += 2.0 * at.coupling *
                std::imag(ov1 * (pr.L(i) + 2.0 * spx) + 2.0 * ov2 * pr.L(i));
    }
    nr.source_feed = feed / n2;
    return nr;
}

// ---------------------------------------------------------------------------
// jumps

// Divide the physical state by `scale`.  The expansion is multilinear in the
// per-atom blocks (every term holds exactly one block of each atom), so the
// division is applied to a single atom's blocks when the normalization is
// attributable to a jump on it, and spread as the N-th root otherwise.
void TrajectoryEngine::renormalize(double scale, int atom_index) {
    if (!(scale > 0) || !std::isfinite(scale))
        throw numerical_error("renormalize: non-positive norm");
    size_t N = atoms_.size();
    // slot_dead_w_ is the squared coefficient of (frozen departed block) x
    // (normalized base); the divisors applied here cancel against the base's
    // own norm change, so the frozen weights stay untouched.
    if (N == 0) return;
    auto scale_atom = [&](AtomInstance& at, double inv) {
        at.a.g *= inv;
        at.a.e *= inv;
        for (auto& v : at.a1) { v.g *= inv; v.e *= inv; }
        for (auto& v : at.a2) { v.g *= inv; v.e *= inv; }
        for (auto& v : at.a3) { v.g *= inv; v.e *= inv; }
        for (auto& s : at.b1)
            for (auto& v : s) { v.g *= inv; v.e *= inv; }
        for (auto& s : at.b2)
            for (auto& v : s) { v.g *= inv; v.e *= inv; }
    };
    if (atom_index >= 0) {
        scale_atom(atoms_[static_cast<size_t>(atom_index)], 1.0 / scale);
    } else {
        double inv = std::pow(scale, -1.0 / static_cast<double>(N));
        for (auto& at : atoms_) scale_atom(at, inv);
    }
    ov_valid_ = false;
    last_norm2_ = -1.0;
}

void TrajectoryEngine::apply_spontaneous(int idx, int q) {
    AtomInstance& at = atoms_[static_cast<size_t>(idx)];
    int c = at.m_center;
    auto lower = [&](const AmpPair& src, int m_e) -> AmpPair {
        // e_{m_e} -> g_{m_e - q} with raw CG branching weight
        return {scheme_.cg_raw(m_e - q, q) * src.e, cplx(0, 0)};
    };
    AtomInstance n = at;  // copy geometry
    n.a = lower(at.a, c);
    n.a1[0] = lower(at.a1[0], c - 1);
    n.a1[1] = lower(at.a1[1], c + 1);
    for (int j = 0; j < 3; ++j) n.a2[j] = lower(at.a2[j], c + 2 * (j - 1));
    if (trunc_ >= 3) {
        static constexpr int dl_of[4] = {-3, -1, 1, 3};
        for (int l = 0; l < 4; ++l) n.a3[l] = lower(at.a3[l], c + dl_of[l]);
    }
    for (int s = 0; s < n_slots_; ++s) {
        if (!slot_live_[s]) continue;
        n.b1[s][0] = lower(at.b1[s][0], c - 1);
        n.b1[s][1] = lower(at.b1[s][1], c + 1);
        for (int j = 0; j < 3; ++j)
            n.b2[s][j] = lower(at.b2[s][j], c + 2 * (j - 1));
    }
    n.m_center = c - q;
    n.sigma_ledger = at.sigma_ledger - q;
    at = std::move(n);
    assert(at.m_center == at.sigma_ledger);
    ov_valid_ = false;

    double nn = std::sqrt(norm2());
    if (!(nn > 1e-150))
        throw std::logic_error("apply_spontaneous: zero-probability channel");
    renormalize(nn, idx);
}

void TrajectoryEngine::apply_cavity_emission() {
    compute_overlaps();
    size_t N = atoms_.size();
    if (N == 0)
        throw std::logic_error("apply_cavity_emission: no atoms, no photon");
    Prods pr;
    pr.init(ov_n_);
    std::vector<double> wsel(N);
    double wtot = 0;
    for (size_t i = 0; i < N; ++i) {
        double sp_others = 0;
        for (size_t k = 0; k < N; ++k)
            if (k != i) sp_others += ov_p_[k] * pr.L2(i, k);
        wsel[i] = ov_p_[i] * pr.L(i) +
                  2.0 * (ov_q_[i] * pr.L(i) + ov_p_[i] * sp_others);
        wtot += wsel[i];
    }
    if (!(wtot > 1e-150))
        throw std::logic_error("apply_cavity_emission: zero-probability channel");
    double u = uniform() * wtot;
    size_t pick = 0;
    for (; pick + 1 < N; ++pick) {
        if (u < wsel[pick]) break;
        u -= wsel[pick];
    }
    AtomInstance& at = atoms_[pick];
    double w_lo = std::norm(at.a1[0].g) + std::norm(at.a1[0].e);
    double w_hi = std::norm(at.a1[1].g) + std::norm(at.a1[1].e);
    if (!(w_lo + w_hi > 1e-150))
        throw std::logic_error("apply_cavity_emission: empty one-photon block");
    int s = uniform() * (w_lo + w_hi) < w_lo ? -1 : +1;

    // re-sort the annihilated state into the shifted template:
    //   a <- a1 branch, a1 <- 2 a2 slices, a2 <- 3 a3 slices (if tracked);
    //   other atoms keep a, double a1, and promote a2 from the 3-photon
    //   sector (zero at truncation 2).
    AtomInstance n = at;
    n.m_center = at.m_center + s;
    n.sigma_ledger = at.sigma_ledger + s;  // H photon carries -s
    n.a = s < 0 ? at.a1[0] : at.a1[1];
    if (s > 0) {
        n.a1[0] = {2.0 * at.a2[1].g, 2.0 * at.a2[1].e};
        n.a1[1] = {2.0 * at.a2[2].g, 2.0 * at.a2[2].e};
    } else {
        n.a1[0] = {2.0 * at.a2[0].g, 2.0 * at.a2[0].e};
        n.a1[1] = {2.0 * at.a2[1].g, 2.0 * at.a2[1].e};
    }
    if (trunc_ >= 3) {
        if (s > 0)
            for (int j = 0; j < 3; ++j)
                n.a2[j] = {3.0 * at.a3[j + 1].g, 3.0 * at.a3[j + 1].e};
        else
            for (int j = 0; j < 3; ++j)
                n.a2[j] = {3.0 * at.a3[j].g, 3.0 * at.a3[j].e};
        for (auto& v : n.a3) v = {};
    } else {
        for (auto& v : n.a2) v = {};
    }
    at = std::move(n);
    for (size_t k = 0; k < N; ++k) {
        if (k == pick) continue;
        AtomInstance& o = atoms_[k];
        for (auto& v : o.a1) { v.g *= 2.0; v.e *= 2.0; }
        if (trunc_ >= 3) {
            for (auto& v : o.a2) { v.g *= 3.0; v.e *= 3.0; }
            for (auto& v : o.a3) v = {};
        } else {
            for (auto& v : o.a2) v = {};
        }
    }

    ov_valid_ = false;
    // an intervening H detection breaks the samples' photon-number
    // correlation bookkeeping; they are retired with zero future weight
    for (int sl = 0; sl < n_slots_; ++sl)
        if (slot_live_[sl]) kill_sample(sl);

    double nn = std::sqrt(norm2());
    if (!(nn > 1e-150))
        throw std::logic_error("apply_cavity_emission: collapsed to zero");
    renormalize(nn, static_cast<int>(pick));
}

void TrajectoryEngine::apply_jump(JumpEvent::Kind kind, int atom_index) {
    switch (kind) {
        case JumpEvent::Kind::spontaneous_pi:
            apply_spontaneous(atom_index, 0);
            break;
        case JumpEvent::Kind::spontaneous_sigma_plus:
            apply_spontaneous(atom_index, +1);
            break;
        case JumpEvent::Kind::spontaneous_sigma_minus:
            apply_spontaneous(atom_index, -1);
            break;
        case JumpEvent::Kind::cavity_H_emission:
            apply_cavity_emission();
            break;
    }
}

// ---------------------------------------------------------------------------
// beam

void TrajectoryEngine::process_departures(std::ostream* event_log) {
    const double zmax = p_.beam.exit_halflength * p_.cavity.waist;
    bool removed = false;
    for (size_t i = 0; i < atoms_.size();) {
        if (atoms_[i].position[2] > zmax) {
            // fold the departing atom's surviving conditional weight into the
            // samples' frozen scalars; its one-photon content has decayed
            for (int s = 0; s < n_slots_; ++s) {
                if (!slot_live_[s]) continue;
                double w = 0;
                for (auto& v : atoms_[i].b1[s]) w += std::norm(v.g) + std::norm(v.e);
                slot_dead_w_[s] += w;
            }
            log_event(event_log, "depart", atoms_[i].id);
            atoms_.erase(atoms_.begin() + static_cast<long>(i));
            ov_valid_ = false;
            removed = true;
        } else {
            ++i;
        }
    }
    if (removed) renormalize(std::sqrt(norm2()));
}

void TrajectoryEngine::process_arrivals(std::ostream* event_log) {
    if (arrival_rate_ <= 0) return;
    if (next_arrival_ < 0)
        next_arrival_ = time_ - std::log(1.0 - uniform()) / arrival_rate_;
    while (next_arrival_ <= time_) {
        ++total_arrivals_;
        double gap = -std::log(1.0 - uniform()) / arrival_rate_;
        double x = uniform() * p_.transition.lambda;
        double y = (2.0 * uniform() - 1.0) * p_.beam.entry_halfwidth *
                   p_.cavity.waist;
        double speed = p_.beam.mean_speed;
        if (p_.beam.speed_sigma > 0)
            speed = std::max(1.0, speed + p_.beam.speed_sigma * normal());
        int m0 = 0;
        if (p_.beam.pump_fidelity < 1.0 && uniform() > p_.beam.pump_fidelity)
            m0 = uniform() < 0.5 ? -1 : +1;
        if (static_cast<int>(atoms_.size()) >= p_.run.max_atoms) {
            ++dropped_arrivals_;
        } else {
            AtomInstance at;
            at.id = next_id_++;
            at.position = {x, y, -p_.beam.exit_halflength * p_.cavity.waist};
            at.velocity = {speed * std::sin(p_.beam.tilt), 0.0,
                           speed * std::cos(p_.beam.tilt)};
            at.m_center = m0;
            at.sigma_ledger = m0;
            at.a.g = 1.0;
            at.b1.assign(n_slots_, {});
            at.b2.assign(n_slots_, {});
            atoms_.push_back(std::move(at));
            ov_valid_ = false;
            log_event(event_log, "arrive", atoms_.back().id);
        }
        next_arrival_ += gap;
    }
}

void TrajectoryEngine::beam_update(double dt) {
    for (auto& at : atoms_)
        for (int k = 0; k < 3; ++k) at.position[k] += at.velocity[k] * dt;
    process_departures(nullptr);
    process_arrivals(nullptr);
}

void TrajectoryEngine::log_event(std::ostream* log, const char* kind,
                                 int64_t id) const {
    if (!log) return;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.9e %s %lld\n", time_, kind,
                  static_cast<long long>(id));
    (*log) << buf;
}

// ---------------------------------------------------------------------------
// conditional samples

void TrajectoryEngine::begin_sample_in_slot(int slot) {
    slot_live_[slot] = 1;
    slot_dead_w_[slot] = 0.0;
    slot_age_bins_[slot] = 0;
    cplx b = beta_;
    if (p_.drive.background_follows_drive && E_drive_ > 0)
        b *= v_amplitude_ / (E_drive_ / kappa_);
    slot_beta0_[slot] = b;
    slot_weight_[slot] = det_rate();
    for (auto& at : atoms_) {
        at.b1[slot][0] = at.a1[0];
        at.b1[slot][1] = at.a1[1];
        for (int j = 0; j < 3; ++j)
            at.b2[slot][j] = {2.0 * at.a2[j].g, 2.0 * at.a2[j].e};
    }
}

void TrajectoryEngine::kill_sample(int slot) {
    slot_live_[slot] = 0;
    slot_dead_w_[slot] = 0.0;
    for (auto& at : atoms_) {
        at.b1[slot] = {};
        at.b2[slot] = {};
    }
}

void TrajectoryEngine::propagate_samples(double T) {
    if (T <= 0) return;
    bool any = false;
    for (int s = 0; s < n_slots_ && !any; ++s) any = slot_live_[s] != 0;
    if (!any) return;

    const double eps = p_.field.sigma_asymmetry;
    const cplx kap(kappa_, bire_);
    const cplx scale1 = std::exp(-kap * T);

    for (auto& at : atoms_) {
        // frozen coefficients at the interval midpoint (positions have
        // already been advanced to the interval end)
        const double w = p_.cavity.waist;
        double x = at.position[0] - at.velocity[0] * 0.5 * T;
        double y = at.position[1] - at.velocity[1] * 0.5 * T;
        double z = at.position[2] - at.velocity[2] * 0.5 * T;
        double g = p_.cavity.g_max * std::exp(-(y * y + z * z) / (w * w));
        if (sw_k_ != 0.0) g *= std::cos(sw_k_ * x);
        cplx omega = g * v_amplitude_;
        int c = at.m_center;

        Mat2x2 M[5];  // manifolds c-2 .. c+2
        Eigen2 eig[5];
        Mat2x2 P[5];
        for (int d = -2; d <= 2; ++d) {
            auto m = manifold_generator(at, c + d, omega);
            M[d + 2] = {m.m00, m.m01, m.m10, m.m11};
            P[d + 2] = expm2(M[d + 2], T);
            eig[d + 2] = eigen2(M[d + 2]);
        }

        // Duhamel blocks D[j][k]: b2 manifold j (c-2,c,c+2) sourced from b1
        // manifold k (c-1,c+1) with C = -i g w |g><e|
        static constexpr int pairs2[4][2] = {{-1, -2}, {-1, 0}, {1, 0}, {1, 2}};
        Mat2x2 D[3][2];
        bool has_D[3][2] = {};
        for (auto& prr : pairs2) {
            int d = prr[0], dj = prr[1];
            int k = d < 0 ? 0 : 1, j = dj / 2 + 1;
            double wsrc = pol_weight(d - dj, eps) * scheme_.cg_norm(c + dj, d - dj);
            cplx cw = cplx(0, -1) * g * wsrc;
            if (cw == cplx(0, 0)) continue;
            const Eigen2& Ej = eig[dj + 2];
            const Eigen2& Ek = eig[d + 2];
            Mat2x2 Dm{};
            if (Ej.ok && Ek.ok) {
                // G = Vj^-1 C Vk, C = [[0, cw],[0, 0]]
                // C Vk = [[cw*Vk10, cw*Vk11],[0,0]]
                Mat2x2 CV{cw * Ek.V.a10, cw * Ek.V.a11, 0.0, 0.0};
                Mat2x2 G = Ej.Vinv * CV;
                cplx lj[2] = {Ej.lam0 - kap, Ej.lam1 - kap};
                cplx lk[2] = {Ek.lam0, Ek.lam1};
                cplx ej[2] = {std::exp(lj[0] * T), std::exp(lj[1] * T)};
                cplx ekx[2] = {std::exp(lk[0] * T), std::exp(lk[1] * T)};
                Mat2x2 Phi;
                cplx* gp[4] = {&G.a00, &G.a01, &G.a10, &G.a11};
                cplx* pp[4] = {&Phi.a00, &Phi.a01, &Phi.a10, &Phi.a11};
                for (int ii = 0; ii < 2; ++ii)
                    for (int jj = 0; jj < 2; ++jj) {
                        cplx f = phi_integral(lj[ii], lk[jj], T, ej[ii], ekx[jj]);
                        *pp[ii * 2 + jj] = (*gp[ii * 2 + jj]) * f;
                    }
                Dm = Ej.V * Phi * Ek.Vinv;
            } else {
                // defective generator (atom at a node): midpoint rule
                Mat2x2 Pj = expm2(M[dj + 2], 0.5 * T);
                Pj.a00 *= std::exp(-kap * 0.5 * T);
                Pj.a01 *= std::exp(-kap * 0.5 * T);
                Pj.a10 *= std::exp(-kap * 0.5 * T);
                Pj.a11 *= std::exp(-kap * 0.5 * T);
                Mat2x2 Pk = expm2(M[d + 2], 0.5 * T);
                Mat2x2 C{0.0, cw, 0.0, 0.0};
                Dm = Pj * C * Pk;
                Dm.a00 *= T; Dm.a01 *= T; Dm.a10 *= T; Dm.a11 *= T;
            }
            D[j][k] = Dm;
            has_D[j][k] = true;
        }

        for (int s = 0; s < n_slots_; ++s) {
            if (!slot_live_[s]) continue;
            auto b1old = at.b1[s];
            at.b1[s][0] = apply(P[1], b1old[0]);
            at.b1[s][1] = apply(P[3], b1old[1]);
            for (int j = 0; j < 3; ++j) {
                AmpPair nb = apply(P[2 * j], at.b2[s][j]);
                nb.g *= scale1;
                nb.e *= scale1;
                for (int k = 0; k < 2; ++k)
                    if (has_D[j][k]) {
                        AmpPair add = apply(D[j][k], b1old[k]);
                        nb.g += add.g;
                        nb.e += add.e;
                    }
                at.b2[s][j] = nb;
            }
        }
    }
}

SampleValue TrajectoryEngine::evaluate_sample(int slot) const {
    SampleValue out;
    if (!slot_live_[slot]) return out;
    compute_overlaps();
    size_t N = atoms_.size();
    cplx beta1 = beta_;
    if (p_.drive.background_follows_drive && E_drive_ > 0)
        beta1 *= v_amplitude_ / (E_drive_ / kappa_);
    const cplx beta0 = slot_beta0_[slot];
    const cplx B = std::conj(beta0) * beta1;
    const double b02 = std::norm(beta0), b12 = std::norm(beta1);

    Prods pr;
    std::vector<double> s_i(N), r_i(N);
    std::vector<cplx> u_i(N), x_i(N), w_i(N);
    if (N > 0) {
        pr.init(ov_n_);
        for (size_t i = 0; i < N; ++i) {
            const auto& at = atoms_[i];
            const auto& b1 = at.b1[slot];
            const auto& b2 = at.b2[slot];
            double s = 0, r = 0;
            for (auto& v : b2) s += std::norm(v.g) + std::norm(v.e);
            for (auto& v : b1) r += std::norm(v.g) + std::norm(v.e);
            s_i[i] = s;
            r_i[i] = r;
            cplx u(0, 0), xx(0, 0);
            for (int k = 0; k < 2; ++k)
                u += std::conj(at.a1[k].g) * b1[k].g +
                     std::conj(at.a1[k].e) * b1[k].e;
            for (int j = 0; j < 3; ++j)
                xx += std::conj(at.a2[j].g) * b2[j].g +
                      std::conj(at.a2[j].e) * b2[j].e;
            u_i[i] = u;
            x_i[i] = xx;
            w_i[i] = std::conj(at.a.g) * b2[1].g + std::conj(at.a.e) * b2[1].e;
        }
    } else {
        pr.init(ov_n_);  // empty product = 1
    }
    const double Pn = pr.P();

    // single sums weighted by leave-one-out products
    double Ssn = 0, Srn = 0, Spn = 0, Sqn = 0;
    cplx Su(0, 0), Sx(0, 0), Sw(0, 0);
    for (size_t i = 0; i < N; ++i) {
        double L = pr.L(i);
        Ssn += s_i[i] * L;
        Srn += r_i[i] * L;
        Spn += ov_p_[i] * L;
        Sqn += ov_q_[i] * L;
        Su += u_i[i] * L;
        Sx += x_i[i] * L;
        Sw += w_i[i] * L;
    }
    // pair sums weighted by leave-two-out products
    double pair_uu = 0, pair_ww = 0, pair_vv = 0, pair_pr = 0, pair_pp = 0;
    cplx pair_up(0, 0), pair_vw(0, 0);
    for (size_t i = 0; i < N; ++i)
        for (size_t j = 0; j < N; ++j) {
            if (i == j) continue;
            double l2 = pr.L2(i, j);
            if (l2 == 0.0) continue;
            pair_uu += std::real(std::conj(u_i[i]) * u_i[j]) * l2;
            pair_ww += std::real(std::conj(w_i[i]) * w_i[j]) * l2;
            pair_vv += std::real(std::conj(ov_v_[i]) * ov_v_[j]) * l2;
            pair_pr += ov_p_[j] * r_i[i] * l2;
            pair_pp += ov_p_[i] * ov_p_[j] * l2;
            pair_up += u_i[i] * ov_p_[j] * l2;
            pair_vw += std::conj(ov_v_[i]) * w_i[j] * l2;
        }

    out.one_atom = Ssn;
    out.two_atom = pair_uu;
    out.homodyne = 2.0 * std::real(B * (Su + 2.0 * pair_up + 2.0 * Sx));

    double res = 0;
    res += pair_pr;                                    // (0a)
    res += pair_ww;                                    // (0e)
    res += 2.0 * std::real(beta1 * beta0 * std::conj(Sw));  // (0j)
    res += b02 * Spn;                                  // (0k)
    res += b12 * Srn;                                  // (0n)
    res += b12 * b02 * Pn;                             // (0p)
    res += 2.0 * b02 * pair_pp;                        // (1a), 4|b0|^2 sum_{i<j}
    res += 4.0 * b02 * (Sqn + pair_vv);                // (1b)
    res += 4.0 * std::real(B * pair_vw);               // (1h, k != i)
    res += b12 * (pair_pr + pair_uu);                  // (1j)
    res += b12 * (Ssn + pair_ww);                      // (1m)
    res += b12 * b02 * Spn;                            // (1o)
    res += 2.0 * b12 * b02 * (0.5 * pair_pp + Sqn + pair_vv);  // sector 2
    // frozen weight of departed entangled atoms times the current
    // unconditional detection rate
    if (slot_dead_w_[slot] > 0) {
        double den = 0;
        if (N > 0) {
            SectorNorms sn = sector_norms();
            den = sn.photons() / sn.total();
        }
        res += slot_dead_w_[slot] * (den + b12);
    }
    out.residual = res;

    out.total = ((out.one_atom + out.two_atom) + out.homodyne) + out.residual;
    return out;
}

// ---------------------------------------------------------------------------
// full trajectory

void TrajectoryEngine::run(CorrelationAccumulator* corr,
                           const std::function<void(const TickRecord&)>& observer,
                           std::ostream* event_log) {
    const double dt = integration_dt(p_);
    const double bin = p_.run.bin_width;
    const int steps_per_tick =
        std::max(1, static_cast<int>(std::round(bin / dt)));
    const int64_t n_ticks =
        static_cast<int64_t>(std::floor(p_.run.duration / bin + 0.5));
    const int64_t warm_ticks =
        static_cast<int64_t>(std::floor(p_.run.warmup / bin + 0.5));
    const int ticks_per_sample = std::max(
        1, static_cast<int>(std::round(p_.run.sample_interval / bin)));
    const int n_bins = corr ? corr->n_bins() : 0;

    if (corr && trunc_ >= 3)
        throw config_error(
            "correlation sampling requires h_truncation = 2 (3-photon basis "
            "is supported for flux observables only)");

    int next_slot = 0;
    double last_flush = time_;

    for (int64_t tick = 0; tick < n_ticks; ++tick) {
        if (atoms_.empty()) {
            // empty cavity: the drive sits at its fixed point, no jump
            // channels are open and no RNG is consumed per step
            time_ += static_cast<double>(steps_per_tick) * dt;
            last_flush = time_;
        } else
        for (int st = 0; st < steps_per_tick; ++st) {
            auto probs = evolve_step(dt);
            for (auto& at : atoms_)
                for (int k = 0; k < 3; ++k)
                    at.position[k] += at.velocity[k] * dt;
            if (probs.total > 0) {
                double u = uniform();
                if (u < probs.total) {
                    // channel by the same draw
                    double target = u;
                    const ChannelProbabilities::Entry* chosen = nullptr;
                    for (auto& e : probs.entries) {
                        if (target < e.probability) {
                            chosen = &e;
                            break;
                        }
                        target -= e.probability;
                    }
                    if (!chosen) chosen = &probs.entries.back();
                    propagate_samples(time_ - last_flush);
                    last_flush = time_;
                    int64_t aid = chosen->atom_index >= 0
                                      ? atoms_[static_cast<size_t>(
                                                   chosen->atom_index)].id
                                      : -1;
                    apply_jump(chosen->kind, chosen->atom_index);
                    if (event_log) {
                        const char* kn = "";
                        switch (chosen->kind) {
                            case JumpEvent::Kind::spontaneous_pi: kn = "pi"; break;
                            case JumpEvent::Kind::spontaneous_sigma_plus: kn = "sigma+"; break;
                            case JumpEvent::Kind::spontaneous_sigma_minus: kn = "sigma-"; break;
                            case JumpEvent::Kind::cavity_H_emission: kn = "cavity"; break;
                        }
                        log_event(event_log, kn, aid);
                    }
                }
            }
        }

        // tick boundary: flush conditional blocks, renormalize, bookkeeping
        propagate_samples(time_ - last_flush);
        last_flush = time_;
        if (!atoms_.empty()) renormalize(std::sqrt(norm2()));

        process_departures(event_log);
        process_arrivals(event_log);

        const bool measuring = corr && tick >= warm_ticks;
        if (measuring) {
            // start a sample on its grid
            if ((tick - warm_ticks) % ticks_per_sample == 0) {
                if (slot_live_[next_slot]) kill_sample(next_slot);
                int64_t ticks_left = n_ticks - tick;
                int reach = static_cast<int>(
                    std::min<int64_t>(n_bins, ticks_left));
                corr->count_sample(reach);
                if (det_rate() > 0)
                    begin_sample_in_slot(next_slot);
                else
                    slot_live_[next_slot] = 0;  // counted, zero contribution
                next_slot = (next_slot + 1) % n_slots_;
            }
            for (int s = 0; s < n_slots_; ++s) {
                if (!slot_live_[s]) continue;
                int age = slot_age_bins_[s];
                if (age >= n_bins) {
                    kill_sample(s);
                    continue;
                }
                corr->add_sample_value(age, evaluate_sample(s));
                ++slot_age_bins_[s];
            }
            corr->add_denominator(det_rate());
        }

        if (observer && tick >= warm_ticks) {
            TickRecord rec;
            rec.time = time_;
            rec.h_photons = atoms_.empty() ? 0.0 : h_photons();
            rec.det_rate = rec.h_photons + std::norm(beta_);
            rec.v_photons = v_photons();
            rec.n_atoms = static_cast<int>(atoms_.size());
            observer(rec);
        }
    }
}

}  // namespace qbeats
