#pragma once

// One-dimensional cylindrical-pore adsorption-diffusion model.
//
//   dc/dt = D_eff d2c/dx2 - (4/d_pore) r,    db/dt = r,
//   r     = k_a c (b_max - b) - k_d b,
//
// with c(0,t) = c_bulk, zero flux at the pore bottom and c = b = 0 initially.
// Cell-centred finite volumes, fully coupled backward Euler in time. The bound
// density is eliminated cell by cell, leaving a nonlinear tridiagonal system in
// c that Newton solves; at convergence moles are conserved to round-off, which
// the audit checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "../curve.hpp"
#include "../error.hpp"

namespace equilcast::simkit {

inline constexpr double kBsaMolecularWeight = 66430.0;  // g/mol
inline constexpr double kDefaultFilmThicknessUm = 5.0;

struct SimulationParameters {
    double k_a = 1e3;           // M^-1 s^-1
    double k_d = 1e-4;          // s^-1
    double b_max = 1e-6;        // mol m^-2
    double d_pore = 25.0;       // nm
    double d_bulk = 1e-10;      // m^2 s^-1
    double r_h = 5.0;           // nm
    double c_bulk = 1.0;        // mg mL^-1
    double film_thickness_um = kDefaultFilmThicknessUm;

    bool operator==(const SimulationParameters&) const = default;
};

/// The six fitted quantities, in this order, live in log10 space for fitting,
/// sampling and LDA.
inline constexpr std::size_t kFittedCount = 6;
using FittedVector = std::array<double, kFittedCount>;
inline constexpr std::array<const char*, kFittedCount> kFittedNames = {
    "k_a", "k_d", "b_max", "d_pore", "d_bulk", "r_h"};

struct ParameterBox {
    FittedVector lo{1e1, 1e-5, 1e-8, 15.0, 1e-11, 4.0};
    FittedVector hi{1e4, 1e0, 1e-4, 35.0, 1e-9, 6.0};

    FittedVector log_lo() const {
        FittedVector v{};
        for (std::size_t i = 0; i < kFittedCount; ++i) v[i] = std::log10(lo[i]);
        return v;
    }
    FittedVector log_hi() const {
        FittedVector v{};
        for (std::size_t i = 0; i < kFittedCount; ++i) v[i] = std::log10(hi[i]);
        return v;
    }
};

inline FittedVector fitted_values(const SimulationParameters& p) {
    return {p.k_a, p.k_d, p.b_max, p.d_pore, p.d_bulk, p.r_h};
}

inline FittedVector to_log10(const SimulationParameters& p) {
    auto v = fitted_values(p);
    for (double& x : v) x = std::log10(x);
    return v;
}

inline SimulationParameters with_log10(SimulationParameters p, const FittedVector& log_values) {
    p.k_a = std::pow(10.0, log_values[0]);
    p.k_d = std::pow(10.0, log_values[1]);
    p.b_max = std::pow(10.0, log_values[2]);
    p.d_pore = std::pow(10.0, log_values[3]);
    p.d_bulk = std::pow(10.0, log_values[4]);
    p.r_h = std::pow(10.0, log_values[5]);
    return p;
}

/// Box membership with a relative slack for values that went through log10/pow.
inline bool in_box(const SimulationParameters& p, const ParameterBox& box = {}) {
    const auto v = fitted_values(p);
    for (std::size_t i = 0; i < kFittedCount; ++i) {
        const double slack = 1e-9 * box.hi[i];
        if (!(v[i] >= box.lo[i] * (1.0 - 1e-9) && v[i] <= box.hi[i] + slack)) return false;
    }
    return 2.0 * p.r_h < p.d_pore && p.c_bulk >= 0.0;
}

/// Renkin hindrance factor for a sphere of radius ratio lambda in a cylinder.
inline double renkin_hindrance(double lambda) {
    if (lambda >= 1.0) return 0.0;
    const double l3 = lambda * lambda * lambda;
    const double l5 = l3 * lambda * lambda;
    return (1.0 - lambda) * (1.0 - lambda) * (1.0 - 2.104 * lambda + 2.089 * l3 - 0.948 * l5);
}

inline double molar_concentration(double mg_per_ml, double molecular_weight = kBsaMolecularWeight) {
    return mg_per_ml / molecular_weight;  // g/L over g/mol
}

/// Langmuir equilibrium coverage b/b_max for a uniform molar concentration.
inline double langmuir_coverage(double k_a, double k_d, double c_molar) {
    const double on = k_a * c_molar;
    return on + k_d > 0.0 ? on / (on + k_d) : 0.0;
}

struct ResponseMapping {
    /// Fractional EOT change at full coverage of the reference site density.
    double saturation_response = 0.035;
    double reference_b_max = 1e-6;
};

struct SolverOptions {
    ResponseMapping mapping{};
    double molecular_weight = kBsaMolecularWeight;
    /// Target bound on k_a c dt per sub-step; the count is clamped to
    /// [min_substeps, max_substeps] per output interval.
    double kinetic_step_limit = 0.1;
    int min_substeps = 8;
    int max_substeps = 256;
    int max_newton_iterations = 50;
    double newton_tolerance = 1e-13;  // relative to c_bulk
};

struct SimulationTrace {
    ResponseCurve curve;
    std::vector<double> mean_coverage;  // <b>/b_max per output sample
    double mass_balance_error = 0.0;    // |inventory - integrated influx| / integrated influx
    double final_inventory = 0.0;       // mol per m^2 pore cross-section
    double total_influx = 0.0;
};

namespace detail {

/// Solves the tridiagonal system in place (Thomas algorithm).
inline void solve_tridiagonal(const std::vector<double>& lower, std::vector<double> diag,
                              const std::vector<double>& upper, std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

/// Backward Euler bound density for a given new free concentration.
inline double implicit_bound(double c_new, double b_old, double k_on, double k_off, double b_max,
                             double dt) {
    return (b_old + dt * k_on * c_new * b_max) / (1.0 + dt * k_on * c_new + dt * k_off);
}

}  // namespace detail

/// Full solve with diagnostics. Samples n_steps outputs at t = 0, dt_s, 2 dt_s, ...
inline SimulationTrace simulate_trace(const SimulationParameters& p, int n_steps, double dt_s,
                                      int n_grid, const SolverOptions& opts = {}) {
    require(n_steps >= 1, ErrorKind::InvalidArgument, "n_steps must be >= 1");
    require(dt_s > 0.0, ErrorKind::InvalidArgument, "dt_s must be positive");
    require(n_grid >= 16, ErrorKind::InvalidArgument, "n_grid must be >= 16");
    require(p.k_a >= 0.0 && p.k_d >= 0.0 && p.b_max > 0.0 && p.d_bulk > 0.0 && p.c_bulk >= 0.0 &&
                p.film_thickness_um > 0.0 && p.d_pore > 0.0 && p.r_h >= 0.0,
            ErrorKind::InvalidArgument, "simulation parameters must be non-negative");
    const double lambda = 2.0 * p.r_h / p.d_pore;
    if (lambda >= 1.0)
        fail(ErrorKind::PoreBlocked, "solute diameter " + std::to_string(2.0 * p.r_h) +
                                         " nm does not fit pore of " + std::to_string(p.d_pore) + " nm");

    const double d_eff = p.d_bulk * renkin_hindrance(lambda);
    const double depth = p.film_thickness_um * 1e-6;
    const double h = depth / n_grid;
    const double alpha = 4.0 / (p.d_pore * 1e-9);               // wall area per pore volume
    const double c_molar = molar_concentration(p.c_bulk, opts.molecular_weight);
    const double c_bulk = c_molar * 1e3;                         // mol m^-3
    const double k_on = p.k_a * 1e-3;                            // m^3 mol^-1 s^-1

    const double kinetic_rate = p.k_a * c_molar;
    int substeps = opts.min_substeps;
    if (kinetic_rate > 0.0)
        substeps = static_cast<int>(std::ceil(kinetic_rate * dt_s / opts.kinetic_step_limit));
    substeps = std::clamp(substeps, opts.min_substeps, opts.max_substeps);
    const double dt = dt_s / substeps;

    const auto n = static_cast<std::size_t>(n_grid);
    std::vector<double> c(n, 0.0), b(n, 0.0);
    const double r = d_eff * dt / (h * h);
    std::vector<double> lower(n, -r), diag(n, 1.0 + 2.0 * r), upper(n, -r);
    diag[0] = 1.0 + 3.0 * r;      // half-cell distance to the Dirichlet face
    diag[n - 1] = 1.0 + r;        // closed bottom
    lower[0] = 0.0;
    upper[n - 1] = 0.0;

    SimulationTrace trace;
    trace.curve.meta.source = CurveSource::simulated;
    trace.curve.meta.concentration_mg_per_ml = p.c_bulk;
    trace.curve.times_s.reserve(static_cast<std::size_t>(n_steps));
    trace.curve.response.reserve(static_cast<std::size_t>(n_steps));

    const double to_response = opts.mapping.saturation_response / opts.mapping.reference_b_max;
    auto record = [&](double t) {
        double mean_b = 0.0;
        for (double v : b) mean_b += v;
        mean_b /= static_cast<double>(n);
        trace.curve.times_s.push_back(t);
        trace.curve.response.push_back(to_response * mean_b);
        trace.mean_coverage.push_back(mean_b / p.b_max);
    };

    record(0.0);
    double influx = 0.0;
    std::vector<double> c_new(n), b_new(n), residual(n), jac_diag(n), prev_b(n);
    const double c_scale = std::max(c_bulk, 1e-300);
    for (int step = 1; step < n_steps; ++step) {
        for (int s = 0; s < substeps; ++s) {
            prev_b = b;
            c_new = c;
            bool converged = false;
            for (int it = 0; it < opts.max_newton_iterations && !converged; ++it) {
                for (std::size_t i = 0; i < n; ++i) {
                    b_new[i] = detail::implicit_bound(c_new[i], prev_b[i], k_on, p.k_d, p.b_max, dt);
                    const double left = i > 0 ? c_new[i - 1] : 0.0;
                    const double right = i + 1 < n ? c_new[i + 1] : 0.0;
                    const double diffusion = lower[i] * left + diag[i] * c_new[i] + upper[i] * right;
                    residual[i] = diffusion - c[i] - (i == 0 ? 2.0 * r * c_bulk : 0.0) +
                                  alpha * (b_new[i] - prev_b[i]);
                    const double den = 1.0 + dt * k_on * c_new[i] + dt * p.k_d;
                    jac_diag[i] = diag[i] + alpha * dt * k_on * (p.b_max - b_new[i]) / den;
                    residual[i] = -residual[i];
                }
                detail::solve_tridiagonal(lower, jac_diag, upper, residual);
                double step_norm = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    c_new[i] = std::max(0.0, c_new[i] + residual[i]);
                    step_norm = std::max(step_norm, std::abs(residual[i]));
                }
                converged = step_norm <= opts.newton_tolerance * c_scale;
            }
            for (std::size_t i = 0; i < n; ++i)
                b_new[i] = detail::implicit_bound(c_new[i], prev_b[i], k_on, p.k_d, p.b_max, dt);
            c.swap(c_new);
            b.swap(b_new);
            influx += dt * 2.0 * d_eff / h * (c_bulk - c[0]);
        }
        if (!std::isfinite(c[0]) || !std::isfinite(b[n - 1]) || !std::isfinite(influx))
            fail(ErrorKind::SolverDiverged, "non-finite state at output step " + std::to_string(step));
        record(dt_s * step);
    }

    double inventory = 0.0;
    for (std::size_t i = 0; i < n; ++i) inventory += h * (c[i] + alpha * b[i]);
    for (double v : trace.curve.response)
        if (!std::isfinite(v)) fail(ErrorKind::SolverDiverged, "non-finite response");
    trace.final_inventory = inventory;
    trace.total_influx = influx;
    trace.mass_balance_error =
        influx > 0.0 ? std::abs(inventory - influx) / influx : std::abs(inventory);
    trace.curve.response.front() = 0.0;
    return trace;
}

inline ResponseCurve simulate_response(const SimulationParameters& p, int n_steps, double dt_s,
                                       int n_grid = 32, const SolverOptions& opts = {}) {
    return simulate_trace(p, n_steps, dt_s, n_grid, opts).curve;
}

}  // namespace equilcast::simkit
