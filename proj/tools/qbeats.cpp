// qbeats: ground-state quantum-beat simulator for a driven atomic beam in a
// two-mode cavity.  Subcommands: simulate, ideal, clicks, correlate,
// beatfreq, dump-derived.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "qbeats/clicks.hpp"
#include "qbeats/correlator.hpp"
#include "qbeats/engine.hpp"
#include "qbeats/idealized.hpp"
#include "qbeats/params.hpp"
#include "qbeats/run.hpp"

namespace fs = std::filesystem;
using namespace qbeats;

namespace {

std::vector<uint64_t> parse_seeds(const std::string& s) {
    std::vector<uint64_t> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stoull(tok));
    }
    return out;
}

Params load_params(const std::string& config, const std::string& preset,
                   const std::vector<std::string>& overrides) {
    std::string path = config;
    if (!preset.empty()) {
        fs::path self = fs::read_symlink("/proc/self/exe").parent_path();
        for (fs::path base : {fs::path("presets"), self / ".." / "presets",
                              self / ".." / ".." / "presets"}) {
            fs::path cand = base / (preset + ".conf");
            if (fs::exists(cand)) {
                path = cand.string();
                break;
            }
        }
        if (path == config)
            throw config_error("preset not found: " + preset);
    }
    if (path.empty()) throw config_error("a --config or --preset is required");
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    std::string text = ss.str();
    for (auto& ov : overrides) {
        auto eq = ov.find('=');
        auto dot = ov.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw config_error("--set expects section.key=value, got: " + ov);
        text += "\n[" + ov.substr(0, dot) + "]\n" +
                ov.substr(dot + 1, eq - dot - 1) + " = " + ov.substr(eq + 1) +
                "\n";
    }
    return parse_config(text);
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot write: " + path);
    f << body;
}

std::vector<std::pair<std::vector<double>, std::vector<double>>>
read_curve_csv(const std::string& path, std::vector<double>& tau,
               std::vector<double>& total) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open curve: " + path);
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("tau_s", 0) == 0) continue;
        std::istringstream is(line);
        std::string tok;
        std::vector<double> row;
        while (std::getline(is, tok, ',')) row.push_back(std::stod(tok));
        if (row.size() >= 2) {
            tau.push_back(row[0]);
            total.push_back(row[1]);
        }
    }
    return {};
}

int cmd_simulate(const Params& p, const EnsembleOptions& opt,
                 const std::string& out_dir, bool flux_out) {
    fs::create_directories(out_dir);
    auto t0 = std::chrono::steady_clock::now();
    EnsembleOptions o = opt;
    o.collect_flux = flux_out;
    EnsembleResult res = run_ensemble(p, o);
    double wall = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0).count();

    std::ostringstream echo;
    echo << serialize_config(p) << "seeds = ";
    for (size_t i = 0; i < opt.seeds.size(); ++i)
        echo << (i ? "," : "") << opt.seeds[i];
    echo << "\ntrajectories = " << opt.trajectories << "\n";

    std::string csv = g2_csv(res.curve, echo.str());
    std::string csv_path = (fs::path(out_dir) / "g2.csv").string();
    write_file(csv_path, csv);

    std::vector<std::pair<std::string, uint64_t>> digests;
    digests.emplace_back("g2.csv", fnv1a64(csv));

    if (flux_out) {
        std::ostringstream fx;
        fx.precision(10);
        fx << "# dt_s = " << res.flux.dt << "\n";
        for (double r : res.flux.rate) fx << r << "\n";
        std::string fx_path = (fs::path(out_dir) / "flux.csv").string();
        write_file(fx_path, fx.str());
        digests.emplace_back("flux.csv", fnv1a64(fx.str()));
    }

    write_file((fs::path(out_dir) / "manifest.json").string(),
               manifest_json(p, opt, res.stats, wall, digests));

    std::printf("samples %lld, plateau %.6g, mean V photons %.4g, "
                "mean atoms %.3g, decomposition max dev %.3g\n",
                static_cast<long long>(res.samples), res.curve.plateau,
                res.stats.mean_v_photons, res.stats.mean_atoms,
                res.curve.decomposition_max_rel_dev);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ground-state quantum beat simulator"};
    app.require_subcommand(1);

    std::string config, preset, out = "out", seeds_str;
    std::vector<std::string> overrides;
    int trajectories = 1, workers = 1;
    bool flux_out = false;

    auto add_common = [&](CLI::App* c) {
        c->add_option("--config", config, "configuration file");
        c->add_option("--preset", preset, "named preset (fig2a, fig2b, fig3, fig4)");
        c->add_option("--set", overrides, "override: section.key=value");
    };

    auto* sim = app.add_subcommand("simulate", "run a trajectory ensemble");
    add_common(sim);
    sim->add_option("--seeds", seeds_str, "comma-separated base seeds")->required();
    sim->add_option("--trajectories", trajectories, "number of trajectories");
    sim->add_option("--workers", workers, "worker threads");
    sim->add_option("--out", out, "output directory");
    sim->add_flag("--flux-out", flux_out, "also write the H output rate trace");

    auto* ideal = app.add_subcommand("ideal", "closed-form single-atom curve");
    add_common(ideal);
    std::string ideal_out = "ideal.csv";
    ideal->add_option("--out", ideal_out, "output CSV");

    auto* clicks = app.add_subcommand("clicks", "synthesize detector clicks");
    std::string flux_in, clicks_out = "clicks.bin";
    double efficiency = 1.0, dark = 0.0;
    uint64_t click_seed = 1;
    bool text_fmt = false;
    clicks->add_option("--flux", flux_in, "flux trace CSV (from simulate --flux-out)")
        ->required();
    clicks->add_option("--out", clicks_out, "output time-stamp file");
    clicks->add_option("--efficiency", efficiency, "detection efficiency");
    clicks->add_option("--dark-rate", dark, "dark count rate, Hz");
    clicks->add_option("--seed", click_seed, "RNG seed")->required();
    clicks->add_flag("--text", text_fmt, "write the text format");

    auto* corr = app.add_subcommand("correlate", "estimate g2 from time stamps");
    std::string ts_in, corr_out = "g2_clicks.csv";
    double bin_ns = 10.0, tau_max_us = 4.0;
    corr->add_option("--input", ts_in, "time-stamp file")->required();
    corr->add_option("--bin-ns", bin_ns, "histogram bin width, ns");
    corr->add_option("--tau-max-us", tau_max_us, "maximum delay, us");
    corr->add_option("--out", corr_out, "output CSV");

    auto* beat = app.add_subcommand("beatfreq", "dominant beat frequency of a curve");
    std::string curve_in;
    double fmin_mhz = 0.5;
    beat->add_option("--input", curve_in, "g2 CSV")->required();
    beat->add_option("--fmin-mhz", fmin_mhz, "low-frequency cutoff");

    auto* dump = app.add_subcommand("dump-derived", "derived quantities as CSV");
    add_common(dump);

    try {
        app.parse(argc, argv);

        if (sim->parsed()) {
            Params p = load_params(config, preset, overrides);
            EnsembleOptions o;
            o.seeds = parse_seeds(seeds_str);
            if (o.seeds.empty())
                throw config_error("simulate: explicit --seeds required");
            o.trajectories = trajectories;
            o.workers = workers;
            return cmd_simulate(p, o, out, flux_out);
        }
        if (ideal->parsed()) {
            Params p = load_params(config, preset, overrides);
            IdealBeatParams ip;
            ip.delta_g = p.zeeman.delta_g;
            ip.delta_e = p.zeeman.delta_e;
            ip.Delta = p.zeeman.Delta;
            ip.gamma = p.cavity.gamma;
            ip.detuning = p.drive.detuning;
            ip.m = 0;
            ip.cg_minus = p.scheme.cg_norm(0, -1);
            ip.cg_plus = p.scheme.cg_norm(0, +1);
            int n = static_cast<int>(std::round(p.run.tau_max / p.run.bin_width));
            std::vector<double> grid(static_cast<size_t>(n));
            for (int k = 0; k < n; ++k) grid[static_cast<size_t>(k)] = k * p.run.bin_width;
            auto c = ideal_g2_shape(grid, ip, transit_time(p.cavity, p.beam));
            std::ostringstream os;
            os.precision(12);
            os << "# " << "ideal single-atom beat curve\n";
            os << "tau_s,g2_total,g2_one_atom,g2_two_atom,g2_homodyne,"
                  "g2_residual,stderr_total\n";
            for (size_t k = 0; k < grid.size(); ++k)
                os << grid[k] << ',' << c.one_atom[k] << ',' << c.one_atom[k]
                   << ",0,0,0,0\n";
            write_file(ideal_out, os.str());
            std::printf("visibility %.4f theta %.4f\n", c.visibility, c.theta);
            return 0;
        }
        if (clicks->parsed()) {
            FluxTrace flux;
            std::ifstream f(flux_in);
            if (!f) throw config_error("cannot open flux trace: " + flux_in);
            std::string line;
            while (std::getline(f, line)) {
                if (line.rfind("# dt_s =", 0) == 0)
                    flux.dt = std::stod(line.substr(8));
                else if (!line.empty() && line[0] != '#')
                    flux.rate.push_back(std::stod(line));
            }
            if (flux.dt <= 0) throw config_error("flux trace: missing dt header");
            SynthesisOptions so;
            so.efficiency = efficiency;
            so.dark_rate = dark;
            auto streams = synthesize_clicks(flux, so, click_seed);
            std::ofstream outf(clicks_out, std::ios::binary);
            if (!outf) throw config_error("cannot write: " + clicks_out);
            if (text_fmt)
                write_clicks_text(outf, streams);
            else
                write_clicks_binary(outf, streams);
            std::printf("clicks %zu (ch0 %zu, ch1 %zu) over %.6g s\n",
                        streams.total(), streams.ch0.size(), streams.ch1.size(),
                        streams.duration);
            return 0;
        }
        if (corr->parsed()) {
            auto streams = load_timestamps(ts_in);
            auto h = estimate_g2(streams, bin_ns * 1e-9, tau_max_us * 1e-6);
            write_file(corr_out, coincidence_csv(h, "clicks correlation"));
            std::printf("singles %.6g / %.6g Hz, duration %.6g s\n",
                        h.singles_rate0, h.singles_rate1, h.duration);
            return 0;
        }
        if (beat->parsed()) {
            std::vector<double> tau, total;
            read_curve_csv(curve_in, tau, total);
            auto bf = beat_frequency(tau, total, fmin_mhz * 1e6);
            if (!bf.significant) {
                std::printf("no significant beat (peak below 3x noise floor)\n");
                return 0;
            }
            std::printf("beat %.6g MHz +- %.3g MHz\n", bf.frequency_hz / 1e6,
                        bf.uncertainty_hz / 1e6);
            return 0;
        }
        if (dump->parsed()) {
            Params p = load_params(config, preset, overrides);
            std::fputs(derived_csv(derived_quantities(p)).c_str(), stdout);
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const insufficient_data_error& e) {
        std::fprintf(stderr, "insufficient data: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
