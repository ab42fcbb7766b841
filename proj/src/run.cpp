#include "qbeats/run.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "qbeats/engine.hpp"

namespace qbeats {

uint64_t derive_seed(uint64_t base, uint64_t index) {
    uint64_t s = base + 0x9E3779B97f4A7C15ull * (index + 1);
    for (int i = 0; i < 3; ++i) {
        s = (s ^ (s >> 30)) * 0xBF58476D1CE4E5B9ull;
        s = (s ^ (s >> 27)) * 0x94D049BB133111EBull;
        s = s ^ (s >> 31);
    }
    return s;
}

namespace {

struct TrajOutput {
    EnsembleStats stats;
    std::vector<double> flux;
};

void run_one(const Params& p, uint64_t seed, CorrelationAccumulator* acc,
             bool collect_flux, TrajOutput& out, std::ostream* event_log) {
    TrajectoryEngine eng(p, seed);
    const double gmax2 = p.cavity.g_max * p.cavity.g_max;
    auto observer = [&](const TickRecord& r) {
        out.stats.mean_v_photons += r.v_photons;
        out.stats.mean_h_photons += r.h_photons;
        out.stats.mean_atoms += r.n_atoms;
        double cw = 0;
        for (const auto& at : eng.atoms())
            cw += at.coupling * at.coupling / gmax2;
        out.stats.mean_coupling_weight += cw;
        ++out.stats.ticks;
        if (collect_flux)
            out.flux.push_back(2.0 * p.cavity.kappa * r.det_rate);
    };
    eng.run(acc, observer, event_log);
    out.stats.dropped_arrivals += eng.dropped_arrivals();
    out.stats.total_arrivals += eng.total_arrivals();
}

}  // namespace

EnsembleResult run_ensemble(const Params& p, const EnsembleOptions& opt) {
    if (opt.seeds.empty())
        throw config_error("ensemble: explicit seeds are required");
    if (opt.trajectories < 1)
        throw config_error("ensemble: trajectories must be >= 1");

    const int n_bins = std::max(
        1, static_cast<int>(std::round(p.run.tau_max / p.run.bin_width)));
    const int n_batches = 16;
    const int n_traj = opt.trajectories;
    const int n_workers = std::max(1, std::min(opt.workers, n_batches));

    // one accumulator and output block per batch; batch b owns trajectories
    // with k % n_batches == b, processed in increasing k, so the merged
    // result is independent of the worker count
    std::vector<CorrelationAccumulator> acc;
    acc.reserve(static_cast<size_t>(n_batches));
    for (int b = 0; b < n_batches; ++b)
        acc.emplace_back(n_bins, p.run.bin_width, n_batches);
    std::vector<TrajOutput> outs(static_cast<size_t>(n_batches));
    std::vector<std::vector<double>> flux_per_traj(
        opt.collect_flux ? static_cast<size_t>(n_traj) : 0);

    std::ofstream event_log;
    if (!opt.event_log_path.empty()) {
        if (n_traj != 1)
            throw config_error("event log requires a single trajectory");
        event_log.open(opt.event_log_path);
        if (!event_log)
            throw config_error("cannot open event log: " + opt.event_log_path);
    }

    std::atomic<bool> failed{false};
    std::string error_msg;
    std::mutex error_mutex;

    auto worker_fn = [&](int wid) {
        try {
            for (int b = wid; b < n_batches; b += n_workers) {
                acc[static_cast<size_t>(b)].set_batch(b);
                for (int k = b; k < n_traj; k += n_batches) {
                    if (failed.load()) return;
                    uint64_t seed = derive_seed(
                        opt.seeds[static_cast<size_t>(k) % opt.seeds.size()],
                        static_cast<uint64_t>(k));
                    TrajOutput tmp;
                    run_one(p, seed, &acc[static_cast<size_t>(b)],
                            opt.collect_flux, tmp,
                            event_log.is_open() ? &event_log : nullptr);
                    auto& dst = outs[static_cast<size_t>(b)].stats;
                    const auto& s = tmp.stats;
                    dst.mean_v_photons += s.mean_v_photons;
                    dst.mean_h_photons += s.mean_h_photons;
                    dst.mean_atoms += s.mean_atoms;
                    dst.mean_coupling_weight += s.mean_coupling_weight;
                    dst.dropped_arrivals += s.dropped_arrivals;
                    dst.total_arrivals += s.total_arrivals;
                    dst.ticks += s.ticks;
                    if (opt.collect_flux)
                        flux_per_traj[static_cast<size_t>(k)] =
                            std::move(tmp.flux);
                }
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lk(error_mutex);
            failed.store(true);
            if (error_msg.empty()) error_msg = e.what();
        }
    };

    if (n_workers == 1) {
        worker_fn(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(n_workers));
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker_fn, w);
        for (auto& t : pool) t.join();
    }
    if (failed.load()) throw numerical_error("ensemble worker failed: " + error_msg);

    EnsembleResult res;
    CorrelationAccumulator merged(n_bins, p.run.bin_width, n_batches);
    for (int b = 0; b < n_batches; ++b) merged.merge(acc[static_cast<size_t>(b)]);
    res.samples = merged.samples_begun();
    res.curve = merged.finalize();

    for (auto& o : outs) {
        res.stats.mean_v_photons += o.stats.mean_v_photons;
        res.stats.mean_h_photons += o.stats.mean_h_photons;
        res.stats.mean_atoms += o.stats.mean_atoms;
        res.stats.mean_coupling_weight += o.stats.mean_coupling_weight;
        res.stats.dropped_arrivals += o.stats.dropped_arrivals;
        res.stats.total_arrivals += o.stats.total_arrivals;
        res.stats.ticks += o.stats.ticks;
    }
    if (res.stats.ticks > 0) {
        double inv = 1.0 / static_cast<double>(res.stats.ticks);
        res.stats.mean_v_photons *= inv;
        res.stats.mean_h_photons *= inv;
        res.stats.mean_atoms *= inv;
        res.stats.mean_coupling_weight *= inv;
    }
    if (res.stats.total_arrivals > 0 &&
        static_cast<double>(res.stats.dropped_arrivals) >
            0.005 * static_cast<double>(res.stats.total_arrivals))
        throw config_error(
            "atom cap exceeded for " +
            std::to_string(res.stats.dropped_arrivals) + " of " +
            std::to_string(res.stats.total_arrivals) +
            " arrivals; lower beam.nbar or shrink the entry region");

    if (opt.collect_flux) {
        res.flux.dt = p.run.bin_width;
        for (auto& f : flux_per_traj)
            res.flux.rate.insert(res.flux.rate.end(), f.begin(), f.end());
    }
    return res;
}

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string manifest_json(const Params& p, const EnsembleOptions& opt,
                          const EnsembleStats& stats, double wall_seconds,
                          const std::vector<std::pair<std::string, uint64_t>>&
                              output_digests) {
    nlohmann::json j;
    j["config"] = serialize_config(p);
    j["seeds"] = opt.seeds;
    j["trajectories"] = opt.trajectories;
    j["workers"] = opt.workers;
    j["wall_seconds"] = wall_seconds;
    j["mean_v_photons"] = stats.mean_v_photons;
    j["mean_h_photons"] = stats.mean_h_photons;
    j["mean_atoms"] = stats.mean_atoms;
    j["mean_coupling_weight"] = stats.mean_coupling_weight;
    j["dropped_arrivals"] = stats.dropped_arrivals;
    j["total_arrivals"] = stats.total_arrivals;
    j["background_photon_fraction_pct"] =
        p.drive.background_fraction * p.drive.background_fraction * 100.0;
    nlohmann::json d = nlohmann::json::object();
    for (auto& [name, dig] : output_digests) {
        char buf[20];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(dig));
        d[name] = buf;
    }
    j["output_digests"] = d;
    return j.dump(2) + "\n";
}

}  // namespace qbeats
