#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qbeats/clicks.hpp"
#include "qbeats/correlator.hpp"
#include "qbeats/params.hpp"

namespace qbeats {

struct EnsembleOptions {
    std::vector<uint64_t> seeds;  // base seeds; trajectory k derives from
                                  // seeds[k % seeds.size()] and k
    int trajectories = 1;
    int workers = 1;
    bool collect_flux = false;    // concatenated per-trajectory H output rate
    std::string event_log_path;   // only honored for single trajectories
};

struct EnsembleStats {
    double mean_v_photons = 0.0;
    double mean_h_photons = 0.0;
    double mean_atoms = 0.0;
    double mean_coupling_weight = 0.0;  // time average of sum (g_i/g_max)^2
    int64_t dropped_arrivals = 0;
    int64_t total_arrivals = 0;
    int64_t ticks = 0;
};

struct EnsembleResult {
    G2Curve curve;
    EnsembleStats stats;
    FluxTrace flux;  // filled when collect_flux
    int64_t samples = 0;
};

uint64_t derive_seed(uint64_t base, uint64_t index);

/// Run an ensemble of independent trajectories.  Results are merged in
/// trajectory order regardless of worker count, so the output is bit-exact
/// for any --workers value.
EnsembleResult run_ensemble(const Params& p, const EnsembleOptions& opt);

uint64_t fnv1a64(const std::string& bytes);

/// JSON manifest: config echo, seeds, workers, wall clock, output digests.
std::string manifest_json(const Params& p, const EnsembleOptions& opt,
                          const EnsembleStats& stats, double wall_seconds,
                          const std::vector<std::pair<std::string, uint64_t>>&
                              output_digests);

}  // namespace qbeats
