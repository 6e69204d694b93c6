#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "../curve.hpp"
#include "../neural/adam.hpp"
#include "transport.hpp"

namespace equilcast::simkit {

struct FixedConditions {
    double c_bulk = 1.0;
    double film_thickness_um = kDefaultFilmThicknessUm;
};

struct FitOptions {
    int restarts = 5;
    int iterations = 150;
    double learning_rate = 0.05;   // log10 units per step
    double fd_step = 1e-3;         // log10 units
    double target_mse = 0.0;       // stop a restart early once reached
    int n_grid = 16;
    std::uint64_t seed = 0;
    SolverOptions solver{};
    ParameterBox box{};
};

struct ParameterFit {
    SimulationParameters params;
    double mse = 0.0;
};

namespace detail {

inline std::vector<double> resample_linear(const std::vector<double>& t, const std::vector<double>& y,
                                           const std::vector<double>& at) {
    std::vector<double> out(at.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < at.size(); ++i) {
        while (j + 2 < t.size() && t[j + 1] < at[i]) ++j;
        const double w = std::clamp((at[i] - t[j]) / (t[j + 1] - t[j]), 0.0, 1.0);
        out[i] = y[j] + w * (y[j + 1] - y[j]);
    }
    return out;
}

}  // namespace detail

/// MSE between a simulation and the target, sampled at the target's times
/// (taken relative to the first timestamp).
inline double curve_mse(const SimulationParameters& p, const ResponseCurve& target, int n_grid,
                        const SolverOptions& solver = {}) {
    const auto n = static_cast<int>(target.size());
    const double t0 = target.times_s.front();
    const double dt = (target.times_s.back() - t0) / (n - 1);
    const auto sim = simulate_response(p, n, dt, n_grid, solver);
    std::vector<double> rel(target.times_s.size());
    for (std::size_t i = 0; i < rel.size(); ++i) rel[i] = target.times_s[i] - t0;
    const auto model = detail::resample_linear(sim.times_s, sim.response, rel);
    double sum = 0.0;
    for (std::size_t i = 0; i < model.size(); ++i) {
        const double r = model[i] - target.response[i];
        sum += r * r;
    }
    return sum / static_cast<double>(model.size());
}

/// Bounded MSE fit of the six transport parameters in log10 space. Central
/// finite-difference gradients drive a projected Adam update; the best of
/// several log-uniform restarts is returned.
inline ParameterFit fit_params_to_curve(const ResponseCurve& target, const FixedConditions& fixed,
                                        const FitOptions& opts = {}) {
    require(target.size() >= 20, ErrorKind::InvalidArgument, "fit_params_to_curve needs >= 20 samples");
    validate(target);
    const auto lo = opts.box.log_lo();
    const auto hi = opts.box.log_hi();

    SimulationParameters base;
    base.c_bulk = fixed.c_bulk;
    base.film_thickness_um = fixed.film_thickness_um;

    auto objective = [&](const Eigen::VectorXd& x) {
        FittedVector v{};
        for (std::size_t i = 0; i < kFittedCount; ++i) v[i] = x(static_cast<Eigen::Index>(i));
        return curve_mse(with_log10(base, v), target, opts.n_grid, opts.solver);
    };
    auto project = [&](Eigen::VectorXd& x) {
        for (std::size_t i = 0; i < kFittedCount; ++i) {
            auto& xi = x(static_cast<Eigen::Index>(i));
            xi = std::clamp(xi, lo[i], hi[i]);
        }
    };

    std::mt19937_64 rng(opts.seed);
    ParameterFit best{base, std::numeric_limits<double>::infinity()};
    Eigen::VectorXd best_x(static_cast<Eigen::Index>(kFittedCount));

    for (int restart = 0; restart < opts.restarts; ++restart) {
        Eigen::VectorXd x(static_cast<Eigen::Index>(kFittedCount));
        for (std::size_t i = 0; i < kFittedCount; ++i)
            x(static_cast<Eigen::Index>(i)) = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);

        neural::AdamMoments moments(x.size());
        neural::AdamConfig adam{opts.learning_rate, 0.9, 0.999, 1e-12};
        double fx = objective(x);
        Eigen::VectorXd run_best = x;
        double run_best_f = fx;

        for (int iter = 0; iter < opts.iterations && run_best_f > opts.target_mse; ++iter) {
            Eigen::VectorXd grad(x.size());
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                Eigen::VectorXd up = x, down = x;
                up(i) = std::min(x(i) + opts.fd_step, hi[static_cast<std::size_t>(i)]);
                down(i) = std::max(x(i) - opts.fd_step, lo[static_cast<std::size_t>(i)]);
                grad(i) = (objective(up) - objective(down)) / (up(i) - down(i));
            }
            // Cosine decay keeps late iterations from bouncing around a minimum.
            adam.learning_rate = opts.learning_rate *
                                 (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * iter / opts.iterations)));
            neural::adam_step(x, grad, moments, adam);
            project(x);
            fx = objective(x);
            if (fx < run_best_f) {
                run_best_f = fx;
                run_best = x;
            }
        }
        if (run_best_f < best.mse) {
            best.mse = run_best_f;
            best_x = run_best;
        }
    }
    FittedVector v{};
    for (std::size_t i = 0; i < kFittedCount; ++i) v[i] = best_x(static_cast<Eigen::Index>(i));
    best.params = with_log10(base, v);
    // pow(10, log10(x)) can land one ulp outside the box.
    const auto values = fitted_values(best.params);
    FittedVector clamped{};
    for (std::size_t i = 0; i < kFittedCount; ++i)
        clamped[i] = std::clamp(values[i], opts.box.lo[i], opts.box.hi[i]);
    best.params.k_a = clamped[0];
    best.params.k_d = clamped[1];
    best.params.b_max = clamped[2];
    best.params.d_pore = clamped[3];
    best.params.d_bulk = clamped[4];
    best.params.r_h = clamped[5];
    return best;
}

}  // namespace equilcast::simkit
