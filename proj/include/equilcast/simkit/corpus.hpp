#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "../seeding.hpp"
#include "distribution.hpp"
#include "noise.hpp"
#include "transport.hpp"

namespace equilcast::simkit {

/// BSA concentrations (mg/mL) of the reference assay, including the buffer control.
inline constexpr std::array<double, 13> kDefaultConcentrations = {
    40.0, 20.0, 10.0, 4.0, 2.0, 1.0, 0.4, 0.2, 0.1, 0.04, 0.02, 0.002, 0.0};

struct CorpusSpec {
    std::size_t count = 260;
    int steps = 250;
    double duration_h = 13.0;
    double snr_lo = 2.0;
    double snr_hi = 100.0;
    std::uint64_t seed = 0;
    std::vector<double> concentrations{kDefaultConcentrations.begin(), kDefaultConcentrations.end()};
    double film_thickness_um = kDefaultFilmThicknessUm;
    int n_grid = 32;
    /// Noise reference for curves whose clean response is identically zero
    /// (buffer control): their S/N is taken against this amplitude.
    double control_reference_amplitude = 1e-3;
    SolverOptions solver{};
};

struct SimulatedCurve {
    ResponseCurve curve;
    ResponseCurve clean;
    SimulationParameters params;
    double snr = 0.0;
};

inline std::string simulated_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sim_%05zu", i);
    return buf;
}

/// Samples parameters, simulates each curve, then superimposes white noise at a
/// log-uniform S/N. Concentrations cycle through the grid so strata stay equal.
inline std::vector<SimulatedCurve> generate_corpus(const ParameterDistribution& dist, const CorpusSpec& spec) {
    require(spec.count >= 1 && spec.steps >= 2 && spec.duration_h > 0.0, ErrorKind::InvalidArgument,
            "corpus needs count >= 1, steps >= 2 and positive duration");
    require(spec.snr_lo > 0.0 && spec.snr_hi >= spec.snr_lo, ErrorKind::InvalidArgument,
            "snr range must satisfy 0 < lo <= hi");
    require(!spec.concentrations.empty(), ErrorKind::InvalidArgument, "empty concentration grid");

    const auto params = sample_params(dist, spec.count, derive_seed(spec.seed, 1, 0));
    std::mt19937_64 snr_rng(derive_seed(spec.seed, 2, 0));
    std::uniform_real_distribution<double> log_snr(std::log(spec.snr_lo), std::log(spec.snr_hi));
    const double dt = spec.duration_h * 3600.0 / (spec.steps - 1);

    std::vector<SimulatedCurve> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        SimulatedCurve sc;
        sc.params = params[i];
        sc.params.c_bulk = spec.concentrations[i % spec.concentrations.size()];
        sc.params.film_thickness_um = spec.film_thickness_um;
        sc.snr = std::exp(log_snr(snr_rng));
        sc.clean = simulate_response(sc.params, spec.steps, dt, spec.n_grid, spec.solver);
        sc.clean.meta = {simulated_id(i), sc.params.c_bulk, CurveSource::simulated};
        std::optional<double> reference;
        if (sc.clean.final_value() == 0.0) reference = spec.control_reference_amplitude;
        sc.curve = add_noise(sc.clean, {sc.snr, derive_seed(spec.seed, 3, i)}, reference);
        out.push_back(std::move(sc));
    }
    return out;
}

}  // namespace equilcast::simkit
