#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>

#include "../curve.hpp"

namespace equilcast::simkit {

struct NoiseSpec {
    double snr = std::numeric_limits<double>::infinity();  // equilibrium magnitude / noise sd
    std::uint64_t seed = 0;
};

/// Adds white Gaussian noise with sd = |final response| / snr (or
/// reference_amplitude / snr when given). Sample 0 stays at 0.
inline ResponseCurve add_noise(ResponseCurve curve, const NoiseSpec& spec,
                               std::optional<double> reference_amplitude = std::nullopt) {
    require(spec.snr > 0.0, ErrorKind::InvalidArgument, "snr must be positive");
    if (std::isinf(spec.snr) || curve.size() == 0) return curve;
    double amplitude = 0.0;
    if (reference_amplitude) {
        amplitude = std::abs(*reference_amplitude);
    } else {
        amplitude = std::abs(curve.final_value());
        if (amplitude == 0.0)
            fail(ErrorKind::AmbiguousSnr, "curve '" + curve.meta.id +
                                              "' has zero final response and no reference amplitude");
    }
    const double sigma = amplitude / spec.snr;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (std::size_t i = 1; i < curve.size(); ++i) curve.response[i] += noise(rng);
    return curve;
}

}  // namespace equilcast::simkit
